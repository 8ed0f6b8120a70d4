#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cilab/cil.hpp"
#include "cilab/dataset.hpp"
#include "cilab/nn.hpp"

namespace cilab {

struct RetrainHyper {
  std::size_t epochs = 30;
  double lr = 0.1;
  double decay_power = 0.9;
  std::size_t batch_size = 64;
  double weight_decay = 0.0;
};

// Frozen stage-j extractor composed with a classifier retrained on the
// full training data over all classes. The extractor is bitwise the
// snapshot's; only the head is new.
struct RetrainedModel {
  Model model;
  std::uint64_t retrain_seed = 0;
};

// Trains a fresh all-class head (same head type as the snapshot's) on
// the full train split with the extractor frozen. A pure function of
// (snapshot, dataset, split, hyper, seed): retraining twice with one
// seed gives identical heads. Verifies the snapshot against its digest
// first (IntegrityError on mismatch).
RetrainedModel retrain_classifier_full(const StageSnapshot& snapshot, const Dataset& dataset,
                                       const IncrementalSplit& split, const RetrainHyper& hyper,
                                       std::uint64_t retrain_seed);

// Top-1 accuracy (percent) of the model over the given sample indices,
// argmax over all logit columns; the column-to-class mapping comes from
// model.head_classes.
double accuracy(const Model& model, const Dataset& dataset, const std::vector<int>& samples);

// Per-stage record of the paper-style evaluation protocol.
struct StageReport {
  std::size_t stage = 0;
  double acc_full = 0.0;                // Acc(M'_j, D), percent
  std::vector<double> acc_subset;       // Acc(M'_j, D_i) for every stage i
  double delta = 0.0;                   // acc_full - stage 0's acc_full
  std::optional<double> avg_inc_acc;    // final stage only
  std::vector<std::pair<std::string, double>> cka_curve;  // vs F_0, primary taps
  std::size_t macs = 0;                 // extractor-only MACs
};

// delta[i] = acc_full[i] - acc_full[0]; requires the stage-0 report.
std::vector<double> delta_metric(const std::vector<StageReport>& reports);

// Mean over stages i of Acc(M_i, validation of classes seen at stage i),
// evaluated with each stage's own incremental head.
double avg_incremental_accuracy(const CilRun& run, const Dataset& dataset,
                                const IncrementalSplit& split);

// Paired features of the same sampled inputs under two extractors, ready
// for t-SNE. Rows 0..k-1 come from model A, rows k..2k-1 from model B in
// the same input order (k = classes * per_class after clamping).
struct FeatureShiftExport {
  Matrix features;
  std::vector<int> labels;  // class id per row
  std::vector<int> source;  // 0 = A, 1 = B

  // Mean Euclidean distance between paired A/B rows.
  double mean_pair_distance() const;
};

FeatureShiftExport feature_shift_export(const Model& model_a, const Model& model_b,
                                        const Dataset& dataset, const IncrementalSplit& split,
                                        std::size_t stage, std::size_t classes,
                                        std::size_t per_class, std::uint64_t seed);

// Vector analogs of the paper's per-stage input corruptions.
enum class PerturbKind {
  kNone,
  kGaussianNoise,  // x += strength * N(0, 1)
  kContrast,       // x = mean(x) + strength * (x - mean(x)), per sample
  kQuantize,       // x = round(x / strength) * strength
  kImpulse,        // with prob strength, coordinate := +-amplitude
  kSmooth,         // box blur over the coordinate axis, radius strength
};

struct PerturbStep {
  PerturbKind kind = PerturbKind::kNone;
  double strength = 0.0;
};

PerturbKind perturb_kind_from_name(const std::string& name);
std::string perturb_kind_name(PerturbKind kind);

// Returns a copy of the dataset with each incremental stage's train and
// validation inputs transformed by its scheduled perturbation; stage 0
// stays clean. The schedule length must equal the number of incremental
// steps. Deterministic via per-stage derived seeds.
Dataset perturb_stage_inputs(const Dataset& dataset, const IncrementalSplit& split,
                             const std::vector<PerturbStep>& schedule, std::uint64_t seed);

}  // namespace cilab
