#include "cilab/cil.hpp"

#include <algorithm>
#include <cmath>

#include "cilab/errors.hpp"

namespace cilab {

std::vector<int> IncrementalSplit::classes_upto(std::size_t stage) const {
  if (stage >= num_stages()) throw ProtocolError("classes_upto: stage out of range");
  std::size_t count = base_count;
  for (std::size_t i = 0; i < stage; ++i) count += step_counts[i];
  return std::vector<int>(class_order.begin(), class_order.begin() + count);
}

std::vector<int> IncrementalSplit::train_upto(std::size_t stage) const {
  std::vector<int> out;
  for (std::size_t i = 0; i <= stage; ++i)
    out.insert(out.end(), stage_train[i].begin(), stage_train[i].end());
  return out;
}

std::vector<int> IncrementalSplit::val_upto(std::size_t stage) const {
  std::vector<int> out;
  for (std::size_t i = 0; i <= stage; ++i)
    out.insert(out.end(), stage_val[i].begin(), stage_val[i].end());
  return out;
}

IncrementalSplit make_split(const Dataset& dataset, std::size_t base, std::size_t steps,
                            std::size_t per_step, RngStream& rng) {
  const std::size_t classes = dataset.num_classes();
  if (base == 0) throw ConfigurationError("make_split: base class count must be positive");
  if (base + steps * per_step != classes)
    throw ConfigurationError("make_split: base + steps * per_step must equal the class count");
  if (steps > 0 && per_step == 0)
    throw ConfigurationError("make_split: per_step must be positive when steps > 0");

  IncrementalSplit split;
  split.class_order.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) split.class_order[c] = static_cast<int>(c);
  rng.shuffle(split.class_order);
  split.base_count = base;
  split.step_counts.assign(steps, per_step);

  std::size_t cursor = 0;
  for (std::size_t stage = 0; stage < steps + 1; ++stage) {
    const std::size_t count = stage == 0 ? base : per_step;
    std::vector<int> stage_cls(split.class_order.begin() + cursor,
                               split.class_order.begin() + cursor + count);
    cursor += count;
    std::vector<int> train;
    std::vector<int> val;
    for (const int c : stage_cls) {
      const auto& tr = dataset.train_by_class[static_cast<std::size_t>(c)];
      const auto& va = dataset.val_by_class[static_cast<std::size_t>(c)];
      train.insert(train.end(), tr.begin(), tr.end());
      val.insert(val.end(), va.begin(), va.end());
    }
    split.stage_classes.push_back(std::move(stage_cls));
    split.stage_train.push_back(std::move(train));
    split.stage_val.push_back(std::move(val));
  }
  return split;
}

std::vector<int> ExemplarStore::all_indices() const {
  std::vector<int> out;
  for (const auto& [cls, indices] : by_class) out.insert(out.end(), indices.begin(), indices.end());
  return out;
}

void select_exemplars(ExemplarStore& store, const Dataset& dataset, const IncrementalSplit& split,
                      std::size_t stage, std::size_t capacity, RngStream& rng) {
  if (stage >= split.num_stages()) throw ProtocolError("select_exemplars: stage out of range");
  store.capacity_per_class = capacity;
  for (const int c : split.stage_classes[stage]) {
    const auto& train = dataset.train_by_class[static_cast<std::size_t>(c)];
    const std::size_t k = std::min(capacity, train.size());
    const std::vector<std::size_t> picks = rng.sample_without_replacement(train.size(), k);
    std::vector<int> chosen;
    chosen.reserve(k);
    for (const std::size_t p : picks) chosen.push_back(train[p]);
    store.by_class[c] = std::move(chosen);
  }
}

std::string algorithm_name(Algorithm algo) {
  switch (algo) {
    case Algorithm::kNaive: return "naive";
    case Algorithm::kDistill: return "distill";
    case Algorithm::kExploit: return "exploit";
    case Algorithm::kDer: return "der";
    case Algorithm::kPder: return "pder";
    case Algorithm::kOracle: return "oracle";
  }
  throw ConfigurationError("algorithm_name: unknown algorithm");
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "naive") return Algorithm::kNaive;
  if (name == "distill") return Algorithm::kDistill;
  if (name == "exploit") return Algorithm::kExploit;
  if (name == "der") return Algorithm::kDer;
  if (name == "pder") return Algorithm::kPder;
  if (name == "oracle") return Algorithm::kOracle;
  throw ConfigurationError("unknown algorithm: " + name);
}

StageSnapshot snapshot_model(const Model& model) {
  StageSnapshot snap;
  snap.model = model;
  snap.digest = model_digest(model);
  return snap;
}

namespace {

double poly_lr(double lr0, double power, std::size_t step, std::size_t total_steps) {
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * std::pow(1.0 - progress, power);
}

std::vector<int> class_to_column(const IncrementalSplit& split) {
  std::vector<int> map(split.num_classes(), -1);
  for (std::size_t i = 0; i < split.class_order.size(); ++i)
    map[static_cast<std::size_t>(split.class_order[i])] = static_cast<int>(i);
  return map;
}

std::vector<int> column_labels(const Dataset& dataset, const std::vector<int>& samples,
                               const std::vector<int>& class_to_col) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const int s : samples)
    out.push_back(class_to_col[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(s)])]);
  return out;
}

std::vector<int> iota_columns(std::size_t n) {
  std::vector<int> cols(n);
  for (std::size_t i = 0; i < n; ++i) cols[i] = static_cast<int>(i);
  return cols;
}

Classifier make_head(const TrainHyper& hyper, std::size_t classes, std::size_t feature_dim,
                     RngStream& rng) {
  if (hyper.head == HeadKind::kLinear) return make_linear_classifier(classes, feature_dim, rng);
  return make_cosine_classifier(classes, feature_dim, hyper.cosine_scale, hyper.scale_learnable,
                                rng);
}

// Fresh head over the new shape with the old block copied in: old class
// rows keep their weights over the old feature columns, everything new
// starts from the stage's init stream.
Classifier extend_head(const Classifier& old, std::size_t classes, std::size_t feature_dim,
                       const TrainHyper& hyper, RngStream& rng) {
  Classifier head = make_head(hyper, classes, feature_dim, rng);
  const std::size_t old_classes = classifier_classes(old);
  const std::size_t old_dim = classifier_feature_dim(old);
  if (const auto* old_lin = std::get_if<LinearClassifier>(&old)) {
    auto& lin = std::get<LinearClassifier>(head);
    for (std::size_t j = 0; j < old_classes; ++j) {
      for (std::size_t k = 0; k < old_dim; ++k) lin.weight(j, k) = old_lin->weight(j, k);
      lin.bias[j] = old_lin->bias[j];
    }
    lin.use_bias = old_lin->use_bias;
  } else {
    const auto& old_cos = std::get<CosineClassifier>(old);
    auto& cos = std::get<CosineClassifier>(head);
    for (std::size_t j = 0; j < old_classes; ++j) {
      for (std::size_t k = 0; k < old_dim; ++k) cos.weight(j, k) = old_cos.weight(j, k);
    }
    cos.scale = old_cos.scale;
    cos.scale_learnable = old_cos.scale_learnable;
  }
  return head;
}

// Same layer dimensions, ReLU flags, and tap ids as the prototype, with
// freshly drawn weights.
FeatureExtractor make_branch_like(const FeatureExtractor& proto, RngStream& rng) {
  FeatureExtractor ex;
  for (const AffineLayer& layer : proto.layers)
    ex.layers.push_back(make_affine(layer.in_dim(), layer.out_dim(), layer.relu, rng));
  ex.tap_ids = proto.tap_ids;
  return ex;
}

void require_sequential(const CilRun& run, std::size_t stage, const IncrementalSplit& split) {
  if (stage >= split.num_stages()) throw ProtocolError("train_stage: stage out of range");
  if (run.snapshots.size() != stage)
    throw ProtocolError("train_stage: stage " + std::to_string(stage) +
                        " requires exactly the prior stages to be trained");
}

struct StageData {
  Matrix inputs;
  std::vector<int> labels;
};

StageData gather_stage_data(const Dataset& dataset, const std::vector<int>& samples,
                            const std::vector<int>& class_to_col) {
  StageData data;
  data.inputs = take_rows(dataset.features, samples);
  data.labels = column_labels(dataset, samples, class_to_col);
  return data;
}

// Fresh stage-0 model shared by every algorithm: extractor from the
// "init" stream, head over the base classes from the "head" stream. For
// pDER the same layer sequence is split at the branch point, which keeps
// the stage-0 trajectory bitwise identical across algorithms.
Model build_stage0_model(const Dataset& dataset, const IncrementalSplit& split,
                         const TrainHyper& hyper, std::size_t split_at_layer) {
  RngStream init_rng(derive_seed(hyper.train_seed, "init", 0));
  FeatureExtractor full =
      make_extractor(dataset.dim(), hyper.stage_widths, hyper.feature_dim, init_rng);
  RngStream head_rng(derive_seed(hyper.train_seed, "head", 0));
  Classifier head = make_head(hyper, split.base_count, hyper.feature_dim, head_rng);

  Model model;
  if (split_at_layer > 1) {
    const std::size_t stem_layers = split_at_layer - 1;
    model.stem.layers.assign(full.layers.begin(), full.layers.begin() + stem_layers);
    model.stem.tap_ids.assign(full.tap_ids.begin(), full.tap_ids.begin() + stem_layers);
    FeatureExtractor upper;
    upper.layers.assign(full.layers.begin() + stem_layers, full.layers.end());
    upper.tap_ids.assign(full.tap_ids.begin() + stem_layers, full.tap_ids.end());
    model.branches.push_back(std::move(upper));
  } else {
    model.branches.push_back(std::move(full));
  }
  model.branch_frozen.assign(1, false);
  model.head = std::move(head);
  model.head_classes = split.classes_upto(0);
  return model;
}

void train_stage0(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                  std::size_t split_at_layer) {
  const TrainHyper& hyper = run.hyper;
  Model model = build_stage0_model(dataset, split, hyper, split_at_layer);
  const std::vector<int> cmap = class_to_column(split);
  StageData data = gather_stage_data(dataset, split.stage_train[0], cmap);
  TrainPlan plan;
  plan.active_columns = iota_columns(split.base_count);
  plan.epochs = hyper.epochs_base;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", 0);
  train_model_full(model, data.inputs, data.labels, plan);
  run.current = model;
  run.snapshots.push_back(snapshot_model(model));
}

std::vector<int> stage_samples_with_exemplars(const CilRun& run, const IncrementalSplit& split,
                                              std::size_t stage) {
  std::vector<int> samples = split.stage_train[stage];
  const std::vector<int> replay = run.exemplars.all_indices();
  samples.insert(samples.end(), replay.begin(), replay.end());
  return samples;
}

}  // namespace

void train_model_full(Model& model, const Matrix& inputs, const std::vector<int>& label_columns,
                      const TrainPlan& plan) {
  const std::size_t n = inputs.rows();
  if (n == 0) throw ProtocolError("train_model_full: no training samples");
  if (plan.epochs == 0) return;

  Matrix teacher_logits_all;
  const bool distill = plan.distill_weight != 0.0 && plan.teacher != nullptr;
  if (distill) teacher_logits_all = model_logits(*plan.teacher, inputs);

  RngStream shuffle_rng(plan.shuffle_seed);
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  const std::size_t batches_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const std::size_t total_steps = plan.epochs * batches_per_epoch;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    shuffle_rng.shuffle(positions);
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t begin = b * plan.batch_size;
      const std::size_t end = std::min(n, begin + plan.batch_size);
      const std::vector<int> batch(positions.begin() + begin, positions.begin() + end);
      const Matrix x = take_rows(inputs, batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        y[i] = label_columns[static_cast<std::size_t>(batch[i])];

      LossSpec spec;
      spec.active_classes = plan.active_columns;
      Matrix teacher_batch;
      if (distill) {
        teacher_batch = take_rows(teacher_logits_all, batch);
        spec.distill_weight = plan.distill_weight;
        spec.temperature = plan.temperature;
        spec.teacher_logits = &teacher_batch;
        spec.distill_classes = plan.distill_columns;
      }
      const BackwardResult res = backward(model, x, y, spec);
      sgd_step(model, res.grads, poly_lr(plan.lr, plan.decay_power, step, total_steps),
               plan.weight_decay);
    }
  }
}

void train_head_on_features(Classifier& head, const Matrix& features,
                            const std::vector<int>& label_columns, const TrainPlan& plan) {
  const std::size_t n = features.rows();
  if (n == 0) throw ProtocolError("train_head_on_features: no training samples");
  if (plan.epochs == 0) return;

  RngStream shuffle_rng(plan.shuffle_seed);
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  const std::size_t batches_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const std::size_t total_steps = plan.epochs * batches_per_epoch;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    shuffle_rng.shuffle(positions);
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t begin = b * plan.batch_size;
      const std::size_t end = std::min(n, begin + plan.batch_size);
      const std::vector<int> batch(positions.begin() + begin, positions.begin() + end);
      const Matrix x = take_rows(features, batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        y[i] = label_columns[static_cast<std::size_t>(batch[i])];

      const Matrix logits = classify(head, x);
      const LossGrad loss = cross_entropy_masked(logits, y, plan.active_columns);
      std::optional<HeadGrad> hgrad;
      head_backprop(head, x, loss.dlogits, &hgrad);
      sgd_step_head(head, *hgrad, poly_lr(plan.lr, plan.decay_power, step, total_steps),
                    plan.weight_decay);
    }
  }
}

void train_expansion_stage(Model& model, const Matrix& inputs,
                           const std::vector<int>& label_columns, const TrainPlan& plan) {
  const std::size_t n = inputs.rows();
  if (n == 0) throw ProtocolError("train_expansion_stage: no training samples");
  if (model.branches.empty() || model.branch_frozen.back())
    throw ProtocolError("train_expansion_stage: the last branch must be trainable");
  for (std::size_t bi = 0; bi + 1 < model.branches.size(); ++bi) {
    if (!model.branch_frozen[bi])
      throw ProtocolError("train_expansion_stage: only the last branch may be trainable");
  }
  if (model.has_stem() && !model.stem_frozen)
    throw ProtocolError("train_expansion_stage: the stem must be frozen");
  if (plan.epochs == 0) return;

  // Frozen parts are pure functions of the inputs; evaluate them once.
  const Matrix stem_out_all =
      model.has_stem() ? forward_features(model.stem, inputs) : inputs;
  Matrix frozen_feats_all;
  for (std::size_t bi = 0; bi + 1 < model.branches.size(); ++bi)
    frozen_feats_all = hcat(frozen_feats_all, forward_features(model.branches[bi], stem_out_all));

  FeatureExtractor& plastic = model.branches.back();
  const std::size_t frozen_width = frozen_feats_all.cols();

  RngStream shuffle_rng(plan.shuffle_seed);
  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  const std::size_t batches_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
  const std::size_t total_steps = plan.epochs * batches_per_epoch;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    shuffle_rng.shuffle(positions);
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++step) {
      const std::size_t begin = b * plan.batch_size;
      const std::size_t end = std::min(n, begin + plan.batch_size);
      const std::vector<int> batch(positions.begin() + begin, positions.begin() + end);
      const Matrix stem_batch = take_rows(stem_out_all, batch);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        y[i] = label_columns[static_cast<std::size_t>(batch[i])];

      const ExtractorForward plastic_fwd = extractor_forward_cached(plastic, stem_batch);
      const Matrix features =
          frozen_width > 0 ? hcat(take_rows(frozen_feats_all, batch), plastic_fwd.output())
                           : plastic_fwd.output();
      const Matrix logits = classify(model.head, features);
      const LossGrad loss = cross_entropy_masked(logits, y, plan.active_columns);

      std::optional<HeadGrad> hgrad;
      const Matrix dfeatures = head_backprop(model.head, features, loss.dlogits, &hgrad);
      Matrix dplastic(batch.size(), plastic.feature_dim());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double* src = dfeatures.row(i) + frozen_width;
        double* dst = dplastic.row(i);
        for (std::size_t k = 0; k < plastic.feature_dim(); ++k) dst[k] = src[k];
      }
      std::vector<std::optional<LayerGrad>> branch_grads;
      extractor_backprop(plastic, plastic_fwd, std::move(dplastic), &branch_grads);

      const double lr = poly_lr(plan.lr, plan.decay_power, step, total_steps);
      sgd_step_extractor(plastic, branch_grads, lr, plan.weight_decay);
      sgd_step_head(model.head, *hgrad, lr, plan.weight_decay);
    }
  }
}

void train_stage_naive(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                       std::size_t stage) {
  require_sequential(run, stage, split);
  if (stage == 0) {
    train_stage0(run, dataset, split, 1);
    return;
  }
  const TrainHyper& hyper = run.hyper;
  Model model = run.snapshots[stage - 1].model;
  const std::vector<int> seen = split.classes_upto(stage);
  RngStream head_rng(derive_seed(hyper.train_seed, "head", stage));
  model.head = extend_head(model.head, seen.size(), model.feature_dim(), hyper, head_rng);
  model.head_classes = seen;

  const std::vector<int> cmap = class_to_column(split);
  StageData data = gather_stage_data(dataset, stage_samples_with_exemplars(run, split, stage), cmap);
  TrainPlan plan;
  plan.active_columns = iota_columns(seen.size());
  plan.epochs = hyper.epochs_inc;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", stage);
  train_model_full(model, data.inputs, data.labels, plan);
  run.current = model;
  run.snapshots.push_back(snapshot_model(model));
}

void train_stage_distill(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                         std::size_t stage) {
  require_sequential(run, stage, split);
  if (stage == 0) {
    train_stage0(run, dataset, split, 1);
    return;
  }
  const TrainHyper& hyper = run.hyper;
  const Model& teacher = run.snapshots[stage - 1].model;
  Model model = teacher;
  const std::vector<int> seen = split.classes_upto(stage);
  const std::size_t old_classes = classifier_classes(teacher.head);
  RngStream head_rng(derive_seed(hyper.train_seed, "head", stage));
  model.head = extend_head(model.head, seen.size(), model.feature_dim(), hyper, head_rng);
  model.head_classes = seen;

  const std::vector<int> cmap = class_to_column(split);
  StageData data = gather_stage_data(dataset, stage_samples_with_exemplars(run, split, stage), cmap);
  TrainPlan plan;
  plan.active_columns = iota_columns(seen.size());
  plan.epochs = hyper.epochs_inc;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", stage);
  plan.distill_weight = hyper.lambda;
  plan.temperature = hyper.temperature;
  plan.teacher = &teacher;
  plan.distill_columns = iota_columns(old_classes);
  train_model_full(model, data.inputs, data.labels, plan);
  run.current = model;
  run.snapshots.push_back(snapshot_model(model));
}

void train_stage_exploit(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                         std::size_t stage) {
  require_sequential(run, stage, split);
  const TrainHyper& hyper = run.hyper;
  if (hyper.head == HeadKind::kCosine && hyper.scale_learnable)
    throw ConfigurationError(
        "train_stage_exploit: a learnable cosine scale cannot be concatenated across stages");
  if (stage == 0) {
    train_stage0(run, dataset, split, 1);
    run.exploit_heads.push_back(run.current.head);
    return;
  }
  // Exemplars are pointless with a frozen extractor and per-stage heads;
  // flag and ignore them.
  if (!run.exemplars.empty()) run.exemplar_warning = true;

  const Model& base = run.snapshots[0].model;
  const std::vector<int>& new_classes = split.stage_classes[stage];
  RngStream head_rng(derive_seed(hyper.train_seed, "head", stage));
  Classifier head = make_head(hyper, new_classes.size(), hyper.feature_dim, head_rng);

  // Frozen F_0: compute the stage's features once, then fit the head.
  const Matrix features = forward_features(base.branches.front(),
                                           take_rows(dataset.features, split.stage_train[stage]));
  std::vector<int> local_map(dataset.num_classes(), -1);
  for (std::size_t i = 0; i < new_classes.size(); ++i)
    local_map[static_cast<std::size_t>(new_classes[i])] = static_cast<int>(i);
  std::vector<int> labels;
  labels.reserve(split.stage_train[stage].size());
  for (const int s : split.stage_train[stage])
    labels.push_back(local_map[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(s)])]);

  TrainPlan plan;
  plan.active_columns = iota_columns(new_classes.size());
  plan.epochs = hyper.epochs_exploit;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", stage);
  train_head_on_features(head, features, labels, plan);
  run.exploit_heads.push_back(std::move(head));

  Model model;
  model.branches.push_back(base.branches.front());
  model.branch_frozen.assign(1, true);
  model.head = concat_heads(
      std::vector<Classifier>(run.exploit_heads.begin(), run.exploit_heads.begin() + stage + 1));
  model.head_classes = split.classes_upto(stage);
  run.current = model;
  run.snapshots.push_back(snapshot_model(model));
}

namespace {

void train_stage_expandable(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                            std::size_t stage, std::size_t split_at_layer) {
  require_sequential(run, stage, split);
  const TrainHyper& hyper = run.hyper;
  if (stage == 0) {
    train_stage0(run, dataset, split, split_at_layer);
    return;
  }
  Model model = run.snapshots[stage - 1].model;
  if (model.has_stem()) model.stem_frozen = true;
  for (std::size_t bi = 0; bi < model.branch_frozen.size(); ++bi) model.branch_frozen[bi] = true;
  RngStream branch_rng(derive_seed(hyper.train_seed, "branch", stage));
  model.branches.push_back(make_branch_like(model.branches.front(), branch_rng));
  model.branch_frozen.push_back(false);

  const std::vector<int> seen = split.classes_upto(stage);
  RngStream head_rng(derive_seed(hyper.train_seed, "head", stage));
  model.head = extend_head(model.head, seen.size(), model.feature_dim(), hyper, head_rng);
  model.head_classes = seen;

  const std::vector<int> cmap = class_to_column(split);
  StageData data = gather_stage_data(dataset, stage_samples_with_exemplars(run, split, stage), cmap);
  TrainPlan plan;
  plan.active_columns = iota_columns(seen.size());
  plan.epochs = hyper.epochs_inc;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", stage);
  train_expansion_stage(model, data.inputs, data.labels, plan);
  run.current = model;
  run.snapshots.push_back(snapshot_model(model));
}

}  // namespace

void train_stage_der(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                     std::size_t stage) {
  train_stage_expandable(run, dataset, split, stage, 1);
}

void train_stage_pder(CilRun& run, const Dataset& dataset, const IncrementalSplit& split,
                      std::size_t stage, std::size_t branch_stage) {
  const std::size_t layer_count = run.hyper.stage_widths.size() + 1;
  if (branch_stage < 1 || branch_stage > layer_count)
    throw ConfigurationError("train_stage_pder: branch point must name a layer in [1, " +
                             std::to_string(layer_count) + "]");
  train_stage_expandable(run, dataset, split, stage, branch_stage);
}

Model train_oracle(const Dataset& dataset, const IncrementalSplit& split, std::size_t upto_stage,
                   const TrainHyper& hyper) {
  if (upto_stage >= split.num_stages()) throw ProtocolError("train_oracle: stage out of range");
  RngStream init_rng(derive_seed(hyper.train_seed, "init", 0));
  FeatureExtractor ex =
      make_extractor(dataset.dim(), hyper.stage_widths, hyper.feature_dim, init_rng);
  const std::vector<int> seen = split.classes_upto(upto_stage);
  RngStream head_rng(derive_seed(hyper.train_seed, "head", 0));
  Classifier head = make_head(hyper, seen.size(), hyper.feature_dim, head_rng);
  Model model = make_single_branch_model(std::move(ex), std::move(head), seen);

  const std::vector<int> cmap = class_to_column(split);
  StageData data = gather_stage_data(dataset, split.train_upto(upto_stage), cmap);
  TrainPlan plan;
  plan.active_columns = iota_columns(seen.size());
  plan.epochs = hyper.epochs_base;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(hyper.train_seed, "shuffle", upto_stage);
  train_model_full(model, data.inputs, data.labels, plan);
  return model;
}

Classifier concat_heads(const std::vector<Classifier>& heads) {
  if (heads.empty()) throw ProtocolError("concat_heads: no heads");
  std::size_t total_classes = 0;
  const std::size_t dim = classifier_feature_dim(heads.front());
  for (const Classifier& h : heads) {
    if (h.index() != heads.front().index())
      throw ProtocolError("concat_heads: mixed head types");
    if (classifier_feature_dim(h) != dim)
      throw DimensionError("concat_heads: feature dims differ");
    total_classes += classifier_classes(h);
  }
  if (const auto* first = std::get_if<LinearClassifier>(&heads.front())) {
    LinearClassifier out;
    out.weight = Matrix(total_classes, dim);
    out.bias.assign(total_classes, 0.0);
    out.use_bias = first->use_bias;
    std::size_t row = 0;
    for (const Classifier& h : heads) {
      const auto& lin = std::get<LinearClassifier>(h);
      for (std::size_t j = 0; j < lin.weight.rows(); ++j, ++row) {
        for (std::size_t k = 0; k < dim; ++k) out.weight(row, k) = lin.weight(j, k);
        out.bias[row] = lin.bias[j];
      }
    }
    return out;
  }
  const auto& first = std::get<CosineClassifier>(heads.front());
  CosineClassifier out;
  out.weight = Matrix(total_classes, dim);
  out.scale = first.scale;
  out.scale_learnable = first.scale_learnable;
  std::size_t row = 0;
  for (const Classifier& h : heads) {
    const auto& cos = std::get<CosineClassifier>(h);
    if (cos.scale != first.scale)
      throw ProtocolError("concat_heads: cosine scales differ across stages");
    for (std::size_t j = 0; j < cos.weight.rows(); ++j, ++row) {
      for (std::size_t k = 0; k < dim; ++k) out.weight(row, k) = cos.weight(j, k);
    }
  }
  return out;
}

CilRun run_incremental(Algorithm algo, const Dataset& dataset, const IncrementalSplit& split,
                       const TrainHyper& hyper) {
  CilRun run;
  run.algo = algo;
  run.hyper = hyper;
  run.exemplars.capacity_per_class = hyper.exemplar_capacity;
  const bool wants_exemplars = algo == Algorithm::kNaive || algo == Algorithm::kDistill ||
                               algo == Algorithm::kDer || algo == Algorithm::kPder;
  for (std::size_t stage = 0; stage < split.num_stages(); ++stage) {
    switch (algo) {
      case Algorithm::kNaive:
        train_stage_naive(run, dataset, split, stage);
        break;
      case Algorithm::kDistill:
        train_stage_distill(run, dataset, split, stage);
        break;
      case Algorithm::kExploit:
        train_stage_exploit(run, dataset, split, stage);
        break;
      case Algorithm::kDer:
        train_stage_der(run, dataset, split, stage);
        break;
      case Algorithm::kPder:
        train_stage_pder(run, dataset, split, stage, hyper.branch_stage);
        break;
      case Algorithm::kOracle: {
        Model model = train_oracle(dataset, split, stage, hyper);
        run.current = model;
        run.snapshots.push_back(snapshot_model(model));
        break;
      }
    }
    if (wants_exemplars) {
      RngStream ex_rng(derive_seed(hyper.train_seed, "exemplars", stage));
      select_exemplars(run.exemplars, dataset, split, stage, hyper.exemplar_capacity, ex_rng);
    }
  }
  return run;
}

}  // namespace cilab
