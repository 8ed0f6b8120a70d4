#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cilab/matrix.hpp"
#include "cilab/repsim.hpp"
#include "cilab/rng.hpp"

namespace cilab {

// Affine layer out = in * W^T + b, optionally followed by ReLU. Weight
// is d_out x d_in; biases start at zero, weights at
// uniform(-1/sqrt(d_in), +1/sqrt(d_in)).
struct AffineLayer {
  Matrix weight;
  std::vector<double> bias;
  bool relu = true;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

AffineLayer make_affine(std::size_t in_dim, std::size_t out_dim, bool relu, RngStream& rng);

// Stack of affine(+ReLU) layers grouped into named stages, with one
// activation tap per layer. The final layer produces the feature output
// and carries no ReLU, so features can feed a cosine head.
struct FeatureExtractor {
  std::vector<AffineLayer> layers;
  std::vector<std::string> tap_ids;  // one per layer
  std::uint64_t param_version = 0;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t feature_dim() const { return layers.back().out_dim(); }
};

// Builds the stage-named extractor: one hidden stage per entry of
// `stage_widths` (ReLU taps "stage1", "stage2", ...) and a final feature
// projection (tap "feature", no ReLU).
FeatureExtractor make_extractor(std::size_t input_dim, const std::vector<std::size_t>& stage_widths,
                                std::size_t feature_dim, RngStream& rng);

struct ForwardTaps {
  Matrix features;
  LayerTapSet taps;
};

// Runs the batch through the extractor, capturing every tap (post-ReLU
// activations, plus the final un-ReLU'd features), ordered by depth.
ForwardTaps forward_with_taps(const FeatureExtractor& extractor, const Matrix& batch);

// Features only (no tap capture).
Matrix forward_features(const FeatureExtractor& extractor, const Matrix& batch);

// y = W x + b per class row.
struct LinearClassifier {
  Matrix weight;  // c x z
  std::vector<double> bias;
  bool use_bias = true;
};

// y_i = s * <W_i, x> / (|W_i| |x|); the scale only matters for training,
// never for the argmax.
struct CosineClassifier {
  Matrix weight;  // c x z
  double scale = 24.0;
  bool scale_learnable = false;
};

using Classifier = std::variant<LinearClassifier, CosineClassifier>;

LinearClassifier make_linear_classifier(std::size_t classes, std::size_t feature_dim, RngStream& rng);
CosineClassifier make_cosine_classifier(std::size_t classes, std::size_t feature_dim, double scale,
                                        bool scale_learnable, RngStream& rng);

std::size_t classifier_classes(const Classifier& head);
std::size_t classifier_feature_dim(const Classifier& head);

// Logits for a batch of feature rows. Cosine heads reject zero-norm
// feature or weight rows (NormalizationError).
Matrix classify(const Classifier& head, const Matrix& features);

struct LossGrad {
  double loss = 0.0;
  Matrix dlogits;
};

// Cross entropy with the softmax restricted to `active_classes` columns;
// inactive columns receive zero gradient, the loss is the batch mean.
// Labels are logit-column indices and must be inside the active set.
LossGrad cross_entropy_masked(const Matrix& logits, const std::vector<int>& labels,
                              const std::vector<int>& active_classes);

// KL(softmax(teacher/T) || softmax(student/T)) * T^2, batch mean.
// The gradient is with respect to the student logits.
LossGrad distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                      double temperature);

// Model composition used by every algorithm: an optional shared stem, one
// or more extractor branches whose feature outputs are concatenated in
// order, and a classifier head over the concatenated features. A plain
// single-extractor model is stem-less with one branch.
struct Model {
  FeatureExtractor stem;  // zero layers when absent
  std::vector<FeatureExtractor> branches;
  Classifier head;
  bool stem_frozen = false;
  std::vector<bool> branch_frozen;  // parallel to branches
  std::vector<int> head_classes;    // class label per logit column

  bool has_stem() const { return !stem.layers.empty(); }
  std::size_t feature_dim() const;
};

Model make_single_branch_model(FeatureExtractor extractor, Classifier head,
                               std::vector<int> head_classes);

// Concatenated branch features for a batch of raw inputs.
Matrix model_features(const Model& model, const Matrix& batch);

Matrix model_logits(const Model& model, const Matrix& batch);

// Tap set along the stage-0 lineage: stem taps followed by branch-0 taps.
// This is the path compared against F_0 in layer sweeps; tap ids are
// stable across algorithms.
LayerTapSet primary_tap_set(const Model& model, const Matrix& batch);

// Loss specification for backward(): masked cross entropy over
// `active_classes`, plus an optional distillation term against
// caller-supplied teacher logits over the `distill_classes` columns.
struct LossSpec {
  std::vector<int> active_classes;
  double distill_weight = 0.0;
  double temperature = 2.0;
  const Matrix* teacher_logits = nullptr;  // b x distill_classes.size()
  std::vector<int> distill_classes;
};

struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

struct HeadGrad {
  Matrix weight;
  std::vector<double> bias;  // empty for cosine heads
  double scale = 0.0;        // used only when the cosine scale is learnable
};

// Gradient buffers mirror the model: frozen components have no buffer.
struct GradientSet {
  std::vector<std::optional<LayerGrad>> stem;
  std::vector<std::vector<std::optional<LayerGrad>>> branches;
  std::optional<HeadGrad> head;
};

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

// Forward-only loss under the same spec as backward(); the reference
// path for finite-difference checks.
double loss_value(const Model& model, const Matrix& batch, const std::vector<int>& labels,
                  const LossSpec& spec);

// Exact reverse-mode gradients of the spec'd loss for every trainable
// parameter. Frozen stem/branches yield no buffers but gradients still
// flow through them to lower trainable layers.
BackwardResult backward(const Model& model, const Matrix& batch, const std::vector<int>& labels,
                        const LossSpec& spec);

// p <- p - lr * (g + weight_decay * p) for every present buffer; bumps
// param_version of each extractor that received gradients.
void sgd_step(Model& model, const GradientSet& grads, double lr, double weight_decay);

// Lower-level pieces of the same reverse-mode machinery, shared by the
// frozen-feature training paths (head-only retraining, expansion stages)
// so those paths stay bitwise equal to the full backward route.

// activations[0] is the input batch, activations[l+1] layer l's output.
struct ExtractorForward {
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
};

ExtractorForward extractor_forward_cached(const FeatureExtractor& extractor, const Matrix& input);

// Backprop d(output) through the extractor; returns d(input). Fills
// per-layer gradients when grads is non-null.
Matrix extractor_backprop(const FeatureExtractor& extractor, const ExtractorForward& fwd,
                          Matrix doutput, std::vector<std::optional<LayerGrad>>* grads);

// Backprop d(logits) through a head; returns d(features). Fills the head
// gradient when hgrad is non-null.
Matrix head_backprop(const Classifier& head, const Matrix& features, const Matrix& dlogits,
                     std::optional<HeadGrad>* hgrad);

void sgd_step_head(Classifier& head, const HeadGrad& grad, double lr, double weight_decay);
void sgd_step_extractor(FeatureExtractor& extractor,
                        const std::vector<std::optional<LayerGrad>>& grads, double lr,
                        double weight_decay);

// Multiply-accumulate count of one forward pass for a single input:
// sum of d_in * d_out over affine layers, plus c * z per head.
std::size_t count_macs(const FeatureExtractor& extractor);
std::size_t count_macs(const FeatureExtractor& extractor, const std::vector<Classifier>& heads);

// Extractor-only MACs of a composed model: stem once plus every branch.
std::size_t extractor_macs(const Model& model);

// FNV-1a digest over every parameter byte, stem -> branches -> head.
// Bitwise-equal parameters produce equal digests.
std::uint64_t model_digest(const Model& model);
std::uint64_t extractor_digest(const Model& model);  // stem + branches only

}  // namespace cilab
