#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cilab/dataset.hpp"
#include "cilab/nn.hpp"
#include "cilab/rng.hpp"

namespace cilab {

// Partition of the class labels into a base set C_0 and N incremental
// sets, with the per-stage train/validation sample index lists resolved
// against a concrete dataset. Class sets are disjoint and exhaustive.
struct IncrementalSplit {
  std::vector<int> class_order;  // seed-driven permutation of all classes
  std::size_t base_count = 0;
  std::vector<std::size_t> step_counts;
  std::vector<std::vector<int>> stage_classes;
  std::vector<std::vector<int>> stage_train;
  std::vector<std::vector<int>> stage_val;

  std::size_t num_stages() const { return step_counts.size() + 1; }
  std::size_t num_classes() const { return class_order.size(); }
  // Classes of stages 0..stage in column order (class_order prefix).
  std::vector<int> classes_upto(std::size_t stage) const;
  std::vector<int> train_upto(std::size_t stage) const;
  std::vector<int> val_upto(std::size_t stage) const;
  std::vector<int> all_val() const { return val_upto(num_stages() - 1); }
};

// base + steps * per_step must equal the dataset's class count.
IncrementalSplit make_split(const Dataset& dataset, std::size_t base, std::size_t steps,
                            std::size_t per_step, RngStream& rng);

// Random per-class exemplar memory; every stored index comes from that
// class's train split.
struct ExemplarStore {
  std::size_t capacity_per_class = 20;
  std::map<int, std::vector<int>> by_class;

  std::vector<int> all_indices() const;
  bool empty() const { return by_class.empty(); }
};

// Samples min(capacity, class size) train indices without replacement
// for every class introduced at `stage`.
void select_exemplars(ExemplarStore& store, const Dataset& dataset, const IncrementalSplit& split,
                      std::size_t stage, std::size_t capacity, RngStream& rng);

enum class Algorithm { kNaive, kDistill, kExploit, kDer, kPder, kOracle };
enum class HeadKind { kLinear, kCosine };

std::string algorithm_name(Algorithm algo);
Algorithm algorithm_from_name(const std::string& name);

struct TrainHyper {
  std::size_t epochs_base = 60;
  std::size_t epochs_inc = 30;
  std::size_t epochs_exploit = 10;
  double lr = 0.1;
  double decay_power = 0.9;
  std::size_t batch_size = 64;
  double weight_decay = 5e-4;
  std::uint64_t train_seed = 0;
  double lambda = 1.0;       // distillation weight
  double temperature = 2.0;  // distillation temperature
  HeadKind head = HeadKind::kCosine;
  double cosine_scale = 24.0;
  bool scale_learnable = false;
  std::size_t branch_stage = 4;  // pDER: 1-based index of the first replicated layer
  std::size_t exemplar_capacity = 20;
  // Architecture of the desk-scale extractor standing in for the paper's
  // backbone: hidden stages then a feature projection.
  std::vector<std::size_t> stage_widths = {64, 64, 64, 64};
  std::size_t feature_dim = 32;
};

// Immutable copy of the model at the end of one stage, digested at
// snapshot time so later mutation is detectable.
struct StageSnapshot {
  Model model;
  std::uint64_t digest = 0;
};

StageSnapshot snapshot_model(const Model& model);

// State of one incremental run: frozen per-stage snapshots, the exemplar
// memory, and (for Exploit) the per-stage head weights that concatenate
// into the final classifier.
struct CilRun {
  Algorithm algo = Algorithm::kNaive;
  TrainHyper hyper;
  std::vector<StageSnapshot> snapshots;
  std::vector<Classifier> exploit_heads;
  ExemplarStore exemplars;
  bool exemplar_warning = false;
  Model current;
};

// Per-stage training operations. Stage i > 0 requires the stage i-1
// snapshot. Each appends a snapshot to the run.
void train_stage_naive(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                       std::size_t stage);
void train_stage_distill(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                         std::size_t stage);
void train_stage_exploit(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                         std::size_t stage);
void train_stage_der(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                     std::size_t stage);
void train_stage_pder(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                      std::size_t stage, std::size_t branch_stage);

// Fresh model trained jointly on the union of stages 0..upto_stage; the
// upper-reference curve. upto_stage = 0 reproduces stage-0 training
// bitwise under the same seeds.
Model train_oracle(const Dataset& dataset, const IncrementalSplit& split, std::size_t upto_stage,
                   const TrainHyper& hyper);

// Drives all stages of `algo`, selecting exemplars after each stage for
// the methods that consume them.
CilRun run_incremental(Algorithm algo, const Dataset& dataset, const IncrementalSplit& split,
                       const TrainHyper& hyper);

// Concatenation of the per-stage Exploit heads 0..stage into one
// classifier over all classes seen so far.
Classifier concat_heads(const std::vector<Classifier>& heads);

// Shared supervised loop (shuffled batches, polynomial lr decay). The
// rows of `inputs` are the training samples; label values are logit
// columns. Distillation is enabled by a non-null teacher.
struct TrainPlan {
  std::vector<int> active_columns;
  std::size_t epochs = 1;
  double lr = 0.1;
  double decay_power = 0.9;
  std::size_t batch_size = 64;
  double weight_decay = 0.0;
  std::uint64_t shuffle_seed = 0;
  double distill_weight = 0.0;
  double temperature = 2.0;
  const Model* teacher = nullptr;
  std::vector<int> distill_columns;
};

void train_model_full(Model& model, const Matrix& inputs, const std::vector<int>& label_columns,
                      const TrainPlan& plan);

// Head-only training on precomputed (frozen) features. Bitwise
// equivalent to train_model_full on a model whose extractor is frozen.
void train_head_on_features(Classifier& head, const Matrix& features,
                            const std::vector<int>& label_columns, const TrainPlan& plan);

// Expansion-stage training (DER / pDER): stem and old branches frozen
// with their features precomputed once; only the newest branch and the
// head receive updates. Bitwise equivalent to train_model_full with the
// same freeze flags.
void train_expansion_stage(Model& model, const Matrix& inputs,
                           const std::vector<int>& label_columns, const TrainPlan& plan);

}  // namespace cilab
