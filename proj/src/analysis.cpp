#include "cilab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "cilab/errors.hpp"

namespace cilab {

namespace {

constexpr std::size_t kEvalBatch = 256;

// Impulse spikes land at +-4.0, the default cluster radius scale.
constexpr double kImpulseAmplitude = 4.0;

Classifier fresh_head_like(const Classifier& proto, std::size_t classes, std::size_t feature_dim,
                           RngStream& rng) {
  if (const auto* lin = std::get_if<LinearClassifier>(&proto)) {
    LinearClassifier head = make_linear_classifier(classes, feature_dim, rng);
    head.use_bias = lin->use_bias;
    return head;
  }
  const auto& cos = std::get<CosineClassifier>(proto);
  return make_cosine_classifier(classes, feature_dim, cos.scale, cos.scale_learnable, rng);
}

}  // namespace

RetrainedModel retrain_classifier_full(const StageSnapshot& snapshot, const Dataset& dataset,
                                       const IncrementalSplit& split, const RetrainHyper& hyper,
                                       std::uint64_t retrain_seed) {
  if (model_digest(snapshot.model) != snapshot.digest)
    throw IntegrityError("retrain_classifier_full: snapshot digest mismatch (mutated snapshot)");

  RetrainedModel out;
  out.retrain_seed = retrain_seed;
  out.model = snapshot.model;
  out.model.stem_frozen = true;
  out.model.branch_frozen.assign(out.model.branches.size(), true);

  RngStream head_rng(derive_seed(retrain_seed, "retrain-head"));
  const std::size_t classes = split.num_classes();
  out.model.head =
      fresh_head_like(snapshot.model.head, classes, snapshot.model.feature_dim(), head_rng);
  out.model.head_classes = split.class_order;

  const std::vector<int> samples = split.train_upto(split.num_stages() - 1);
  const Matrix features = model_features(out.model, take_rows(dataset.features, samples));

  std::vector<int> class_to_col(classes, -1);
  for (std::size_t i = 0; i < classes; ++i)
    class_to_col[static_cast<std::size_t>(split.class_order[i])] = static_cast<int>(i);
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const int s : samples)
    labels.push_back(class_to_col[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(s)])]);

  TrainPlan plan;
  plan.active_columns.resize(classes);
  for (std::size_t i = 0; i < classes; ++i) plan.active_columns[i] = static_cast<int>(i);
  plan.epochs = hyper.epochs;
  plan.lr = hyper.lr;
  plan.decay_power = hyper.decay_power;
  plan.batch_size = hyper.batch_size;
  plan.weight_decay = hyper.weight_decay;
  plan.shuffle_seed = derive_seed(retrain_seed, "retrain-shuffle");
  train_head_on_features(out.model.head, features, labels, plan);

  if (extractor_digest(out.model) != extractor_digest(snapshot.model))
    throw IntegrityError("retrain_classifier_full: extractor mutated during retraining");
  return out;
}

double accuracy(const Model& model, const Dataset& dataset, const std::vector<int>& samples) {
  if (samples.empty()) throw ParameterError("accuracy: empty evaluation subset");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(samples.size(), begin + kEvalBatch);
    const std::vector<int> batch(samples.begin() + begin, samples.begin() + end);
    const Matrix logits = model_logits(model, take_rows(dataset.features, batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double* row = logits.row(i);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (model.head_classes[best] == dataset.labels[static_cast<std::size_t>(batch[i])]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::vector<double> delta_metric(const std::vector<StageReport>& reports) {
  if (reports.empty() || reports.front().stage != 0)
    throw ProtocolError("delta_metric: stage-0 report missing");
  std::vector<double> deltas;
  deltas.reserve(reports.size());
  for (const StageReport& r : reports) deltas.push_back(r.acc_full - reports.front().acc_full);
  return deltas;
}

double avg_incremental_accuracy(const CilRun& run, const Dataset& dataset,
                                const IncrementalSplit& split) {
  if (run.snapshots.size() != split.num_stages())
    throw ProtocolError("avg_incremental_accuracy: not every stage is trained");
  double total = 0.0;
  for (std::size_t stage = 0; stage < run.snapshots.size(); ++stage)
    total += accuracy(run.snapshots[stage].model, dataset, split.val_upto(stage));
  return total / static_cast<double>(run.snapshots.size());
}

double FeatureShiftExport::mean_pair_distance() const {
  const std::size_t pairs = features.rows() / 2;
  double total = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const double* a = features.row(i);
    const double* b = features.row(i + pairs);
    double s = 0.0;
    for (std::size_t c = 0; c < features.cols(); ++c) {
      const double d = a[c] - b[c];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(pairs);
}

FeatureShiftExport feature_shift_export(const Model& model_a, const Model& model_b,
                                        const Dataset& dataset, const IncrementalSplit& split,
                                        std::size_t stage, std::size_t classes,
                                        std::size_t per_class, std::uint64_t seed) {
  if (stage >= split.num_stages())
    throw ProtocolError("feature_shift_export: stage out of range");
  if (model_a.feature_dim() != model_b.feature_dim())
    throw DimensionError("feature_shift_export: extractor feature dims differ");

  RngStream rng(derive_seed(seed, "feature-shift"));
  const std::vector<int>& pool = split.stage_classes[stage];
  const std::size_t picked_classes = std::min(classes, pool.size());
  const std::vector<std::size_t> class_picks =
      rng.sample_without_replacement(pool.size(), picked_classes);

  std::vector<int> sample_indices;
  std::vector<int> labels;
  for (const std::size_t cp : class_picks) {
    const int cls = pool[cp];
    const auto& val = dataset.val_by_class[static_cast<std::size_t>(cls)];
    const std::size_t take = std::min(per_class, val.size());
    const std::vector<std::size_t> picks = rng.sample_without_replacement(val.size(), take);
    for (const std::size_t p : picks) {
      sample_indices.push_back(val[p]);
      labels.push_back(cls);
    }
  }

  const Matrix inputs = take_rows(dataset.features, sample_indices);
  const Matrix feats_a = model_features(model_a, inputs);
  const Matrix feats_b = model_features(model_b, inputs);

  FeatureShiftExport out;
  out.features = Matrix(feats_a.rows() * 2, feats_a.cols());
  for (std::size_t i = 0; i < feats_a.rows(); ++i) {
    for (std::size_t c = 0; c < feats_a.cols(); ++c) {
      out.features(i, c) = feats_a(i, c);
      out.features(i + feats_a.rows(), c) = feats_b(i, c);
    }
  }
  out.labels = labels;
  out.labels.insert(out.labels.end(), labels.begin(), labels.end());
  out.source.assign(feats_a.rows(), 0);
  out.source.insert(out.source.end(), feats_a.rows(), 1);
  return out;
}

PerturbKind perturb_kind_from_name(const std::string& name) {
  if (name == "none") return PerturbKind::kNone;
  if (name == "gauss") return PerturbKind::kGaussianNoise;
  if (name == "contrast") return PerturbKind::kContrast;
  if (name == "quantize") return PerturbKind::kQuantize;
  if (name == "impulse") return PerturbKind::kImpulse;
  if (name == "smooth") return PerturbKind::kSmooth;
  throw ConfigurationError("unknown perturbation kind: " + name);
}

std::string perturb_kind_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::kNone: return "none";
    case PerturbKind::kGaussianNoise: return "gauss";
    case PerturbKind::kContrast: return "contrast";
    case PerturbKind::kQuantize: return "quantize";
    case PerturbKind::kImpulse: return "impulse";
    case PerturbKind::kSmooth: return "smooth";
  }
  throw ConfigurationError("perturb_kind_name: unknown kind");
}

namespace {

void perturb_row(double* x, std::size_t dim, const PerturbStep& step, RngStream& rng) {
  switch (step.kind) {
    case PerturbKind::kNone:
      return;
    case PerturbKind::kGaussianNoise:
      for (std::size_t d = 0; d < dim; ++d) x[d] += step.strength * rng.next_normal();
      return;
    case PerturbKind::kContrast: {
      double mean = 0.0;
      for (std::size_t d = 0; d < dim; ++d) mean += x[d];
      mean /= static_cast<double>(dim);
      for (std::size_t d = 0; d < dim; ++d) x[d] = mean + step.strength * (x[d] - mean);
      return;
    }
    case PerturbKind::kQuantize:
      if (step.strength <= 0.0) return;
      for (std::size_t d = 0; d < dim; ++d)
        x[d] = std::round(x[d] / step.strength) * step.strength;
      return;
    case PerturbKind::kImpulse:
      for (std::size_t d = 0; d < dim; ++d) {
        if (rng.next_uniform() < step.strength)
          x[d] = rng.next_uniform() < 0.5 ? -kImpulseAmplitude : kImpulseAmplitude;
      }
      return;
    case PerturbKind::kSmooth: {
      const std::size_t radius = static_cast<std::size_t>(std::llround(step.strength));
      if (radius == 0) return;
      std::vector<double> original(x, x + dim);
      for (std::size_t d = 0; d < dim; ++d) {
        const std::size_t lo = d >= radius ? d - radius : 0;
        const std::size_t hi = std::min(dim - 1, d + radius);
        double sum = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) sum += original[k];
        x[d] = sum / static_cast<double>(hi - lo + 1);
      }
      return;
    }
  }
}

}  // namespace

Dataset perturb_stage_inputs(const Dataset& dataset, const IncrementalSplit& split,
                             const std::vector<PerturbStep>& schedule, std::uint64_t seed) {
  if (schedule.size() != split.step_counts.size())
    throw ConfigurationError("perturb_stage_inputs: schedule length must equal the step count");
  Dataset out = dataset;
  for (std::size_t stage = 1; stage < split.num_stages(); ++stage) {
    const PerturbStep& step = schedule[stage - 1];
    if (step.kind == PerturbKind::kNone || step.strength == 0.0) continue;
    RngStream rng(derive_seed(seed, "perturb", stage));
    // Train rows first, then validation, each in split order.
    for (const int s : split.stage_train[stage])
      perturb_row(out.features.row(static_cast<std::size_t>(s)), out.dim(), step, rng);
    for (const int s : split.stage_val[stage])
      perturb_row(out.features.row(static_cast<std::size_t>(s)), out.dim(), step, rng);
  }
  return out;
}

}  // namespace cilab
