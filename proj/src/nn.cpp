#include "cilab/nn.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "cilab/errors.hpp"

namespace cilab {

namespace {

// out = in * W^T + b, with the reduction over input features running
// left to right.
Matrix affine_forward(const AffineLayer& layer, const Matrix& in) {
  if (in.cols() != layer.in_dim())
    throw DimensionError("affine_forward: input width " + std::to_string(in.cols()) +
                         " does not match layer input dim " + std::to_string(layer.in_dim()));
  const std::size_t b = in.rows();
  const std::size_t d_in = layer.in_dim();
  const std::size_t d_out = layer.out_dim();
  Matrix out(b, d_out);
  for (std::size_t i = 0; i < b; ++i) {
    const double* x = in.row(i);
    double* o = out.row(i);
    for (std::size_t j = 0; j < d_out; ++j) {
      const double* w = layer.weight.row(j);
      double acc = layer.bias[j];
      for (std::size_t c = 0; c < d_in; ++c) acc += w[c] * x[c];
      o[j] = acc;
    }
  }
  if (layer.relu) {
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  }
  return out;
}

double row_norm(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

struct CosineCache {
  std::vector<double> feat_norm;    // per row
  std::vector<double> weight_norm;  // per class
  Matrix cosines;                   // b x c
};

CosineCache cosine_forward_cache(const CosineClassifier& head, const Matrix& features) {
  const std::size_t b = features.rows();
  const std::size_t c = head.weight.rows();
  const std::size_t z = head.weight.cols();
  if (features.cols() != z)
    throw DimensionError("classify: feature width does not match cosine head");
  CosineCache cache;
  cache.feat_norm.resize(b);
  cache.weight_norm.resize(c);
  for (std::size_t i = 0; i < b; ++i) {
    cache.feat_norm[i] = row_norm(features.row(i), z);
    if (!(cache.feat_norm[i] > 0.0))
      throw NormalizationError("classify: zero-norm feature row under cosine head");
  }
  for (std::size_t j = 0; j < c; ++j) {
    cache.weight_norm[j] = row_norm(head.weight.row(j), z);
    if (!(cache.weight_norm[j] > 0.0))
      throw NormalizationError("classify: zero-norm weight row under cosine head");
  }
  cache.cosines = Matrix(b, c);
  for (std::size_t i = 0; i < b; ++i) {
    const double* x = features.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const double* w = head.weight.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < z; ++k) dot += x[k] * w[k];
      cache.cosines(i, j) = dot / (cache.feat_norm[i] * cache.weight_norm[j]);
    }
  }
  return cache;
}

void fnv_update(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

void digest_extractor(std::uint64_t& h, const FeatureExtractor& ex) {
  for (const AffineLayer& layer : ex.layers) {
    fnv_update(h, layer.weight.data().data(), layer.weight.size() * sizeof(double));
    fnv_update(h, layer.bias.data(), layer.bias.size() * sizeof(double));
  }
}

}  // namespace

ExtractorForward extractor_forward_cached(const FeatureExtractor& extractor, const Matrix& input) {
  ExtractorForward fwd;
  fwd.activations.reserve(extractor.layers.size() + 1);
  fwd.activations.push_back(input);
  for (const AffineLayer& layer : extractor.layers)
    fwd.activations.push_back(affine_forward(layer, fwd.activations.back()));
  return fwd;
}

Matrix extractor_backprop(const FeatureExtractor& extractor, const ExtractorForward& fwd,
                          Matrix doutput, std::vector<std::optional<LayerGrad>>* grads) {
  if (grads) grads->assign(extractor.layers.size(), std::nullopt);
  for (std::size_t li = extractor.layers.size(); li-- > 0;) {
    const AffineLayer& layer = extractor.layers[li];
    const Matrix& input = fwd.activations[li];
    const Matrix& output = fwd.activations[li + 1];
    const std::size_t b = doutput.rows();
    const std::size_t d_in = layer.in_dim();
    const std::size_t d_out = layer.out_dim();

    // ReLU mask: output > 0 iff pre-activation > 0.
    if (layer.relu) {
      for (std::size_t i = 0; i < b; ++i) {
        double* d = doutput.row(i);
        const double* o = output.row(i);
        for (std::size_t j = 0; j < d_out; ++j) {
          if (!(o[j] > 0.0)) d[j] = 0.0;
        }
      }
    }

    if (grads) {
      LayerGrad g;
      g.weight = Matrix(d_out, d_in);
      g.bias.assign(d_out, 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        const double* d = doutput.row(i);
        const double* x = input.row(i);
        for (std::size_t j = 0; j < d_out; ++j) {
          const double dj = d[j];
          if (dj == 0.0) continue;
          double* gw = g.weight.row(j);
          for (std::size_t c = 0; c < d_in; ++c) gw[c] += dj * x[c];
          g.bias[j] += dj;
        }
      }
      (*grads)[li] = std::move(g);
    }

    Matrix dinput(b, d_in);
    for (std::size_t i = 0; i < b; ++i) {
      const double* d = doutput.row(i);
      double* di = dinput.row(i);
      for (std::size_t j = 0; j < d_out; ++j) {
        const double dj = d[j];
        if (dj == 0.0) continue;
        const double* w = layer.weight.row(j);
        for (std::size_t c = 0; c < d_in; ++c) di[c] += dj * w[c];
      }
    }
    doutput = std::move(dinput);
  }
  return doutput;
}

Matrix head_backprop(const Classifier& head, const Matrix& features, const Matrix& dlogits,
                     std::optional<HeadGrad>* hgrad) {
  const std::size_t b = features.rows();
  if (const auto* lin = std::get_if<LinearClassifier>(&head)) {
    const std::size_t c = lin->weight.rows();
    const std::size_t z = lin->weight.cols();
    if (hgrad) {
      HeadGrad g;
      g.weight = Matrix(c, z);
      g.bias.assign(lin->use_bias ? c : 0, 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        const double* d = dlogits.row(i);
        const double* x = features.row(i);
        for (std::size_t j = 0; j < c; ++j) {
          const double dj = d[j];
          if (dj == 0.0) continue;
          double* gw = g.weight.row(j);
          for (std::size_t k = 0; k < z; ++k) gw[k] += dj * x[k];
          if (lin->use_bias) g.bias[j] += dj;
        }
      }
      *hgrad = std::move(g);
    }
    Matrix dfeat(b, z);
    for (std::size_t i = 0; i < b; ++i) {
      const double* d = dlogits.row(i);
      double* df = dfeat.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        const double dj = d[j];
        if (dj == 0.0) continue;
        const double* w = lin->weight.row(j);
        for (std::size_t k = 0; k < z; ++k) df[k] += dj * w[k];
      }
    }
    return dfeat;
  }

  const auto& cos = std::get<CosineClassifier>(head);
  const CosineCache cache = cosine_forward_cache(cos, features);
  const std::size_t c = cos.weight.rows();
  const std::size_t z = cos.weight.cols();
  const double s = cos.scale;

  // y_ij = s * cos_ij with cos_ij = <x_i, w_j> / (a_i b_j):
  //   d y_ij / d w_j = s (x_i / (a_i b_j) - cos_ij w_j / b_j^2)
  //   d y_ij / d x_i = s (w_j / (a_i b_j) - cos_ij x_i / a_i^2)
  Matrix dfeat(b, z);
  std::optional<HeadGrad> g;
  if (hgrad) {
    g.emplace();
    g->weight = Matrix(c, z);
  }
  std::vector<double> wj_coef(c, 0.0);  // sum_i d_ij cos_ij per class
  for (std::size_t i = 0; i < b; ++i) {
    const double* d = dlogits.row(i);
    const double* x = features.row(i);
    const double a = cache.feat_norm[i];
    double* df = dfeat.row(i);
    double xi_coef = 0.0;  // sum_j d_ij cos_ij
    for (std::size_t j = 0; j < c; ++j) {
      const double dj = d[j];
      if (dj == 0.0) continue;
      const double bnorm = cache.weight_norm[j];
      const double cosij = cache.cosines(i, j);
      const double common = s * dj / (a * bnorm);
      const double* w = cos.weight.row(j);
      for (std::size_t k = 0; k < z; ++k) df[k] += common * w[k];
      xi_coef += dj * cosij;
      if (g) {
        double* gw = g->weight.row(j);
        for (std::size_t k = 0; k < z; ++k) gw[k] += common * x[k];
        wj_coef[j] += dj * cosij;
        if (cos.scale_learnable) g->scale += dj * cosij;
      }
    }
    const double self = s * xi_coef / (a * a);
    for (std::size_t k = 0; k < z; ++k) df[k] -= self * x[k];
  }
  if (g) {
    for (std::size_t j = 0; j < c; ++j) {
      const double coef = s * wj_coef[j] / (cache.weight_norm[j] * cache.weight_norm[j]);
      if (coef == 0.0) continue;
      double* gw = g->weight.row(j);
      const double* w = cos.weight.row(j);
      for (std::size_t k = 0; k < z; ++k) gw[k] -= coef * w[k];
    }
    *hgrad = std::move(*g);
  }
  return dfeat;
}

AffineLayer make_affine(std::size_t in_dim, std::size_t out_dim, bool relu, RngStream& rng) {
  AffineLayer layer;
  layer.weight = Matrix(out_dim, in_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& v : layer.weight.data()) v = rng.next_uniform(-bound, bound);
  layer.bias.assign(out_dim, 0.0);
  layer.relu = relu;
  return layer;
}

FeatureExtractor make_extractor(std::size_t input_dim, const std::vector<std::size_t>& stage_widths,
                                std::size_t feature_dim, RngStream& rng) {
  FeatureExtractor ex;
  std::size_t in = input_dim;
  for (std::size_t s = 0; s < stage_widths.size(); ++s) {
    ex.layers.push_back(make_affine(in, stage_widths[s], /*relu=*/true, rng));
    ex.tap_ids.push_back("stage" + std::to_string(s + 1));
    in = stage_widths[s];
  }
  ex.layers.push_back(make_affine(in, feature_dim, /*relu=*/false, rng));
  ex.tap_ids.push_back("feature");
  return ex;
}

ForwardTaps forward_with_taps(const FeatureExtractor& extractor, const Matrix& batch) {
  ExtractorForward fwd = extractor_forward_cached(extractor, batch);
  ForwardTaps out;
  out.taps.layer_ids = extractor.tap_ids;
  out.taps.activations.assign(fwd.activations.begin() + 1, fwd.activations.end());
  out.features = fwd.activations.back();
  return out;
}

Matrix forward_features(const FeatureExtractor& extractor, const Matrix& batch) {
  Matrix act = batch;
  for (const AffineLayer& layer : extractor.layers) act = affine_forward(layer, act);
  return act;
}

LinearClassifier make_linear_classifier(std::size_t classes, std::size_t feature_dim,
                                        RngStream& rng) {
  LinearClassifier head;
  head.weight = Matrix(classes, feature_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : head.weight.data()) v = rng.next_uniform(-bound, bound);
  head.bias.assign(classes, 0.0);
  return head;
}

CosineClassifier make_cosine_classifier(std::size_t classes, std::size_t feature_dim, double scale,
                                        bool scale_learnable, RngStream& rng) {
  CosineClassifier head;
  head.weight = Matrix(classes, feature_dim);
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : head.weight.data()) v = rng.next_uniform(-bound, bound);
  head.scale = scale;
  head.scale_learnable = scale_learnable;
  return head;
}

std::size_t classifier_classes(const Classifier& head) {
  return std::visit([](const auto& h) { return h.weight.rows(); }, head);
}

std::size_t classifier_feature_dim(const Classifier& head) {
  return std::visit([](const auto& h) { return h.weight.cols(); }, head);
}

Matrix classify(const Classifier& head, const Matrix& features) {
  if (const auto* lin = std::get_if<LinearClassifier>(&head)) {
    if (features.cols() != lin->weight.cols())
      throw DimensionError("classify: feature width does not match linear head");
    const std::size_t b = features.rows();
    const std::size_t c = lin->weight.rows();
    const std::size_t z = lin->weight.cols();
    Matrix logits(b, c);
    for (std::size_t i = 0; i < b; ++i) {
      const double* x = features.row(i);
      double* o = logits.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        const double* w = lin->weight.row(j);
        double acc = lin->use_bias ? lin->bias[j] : 0.0;
        for (std::size_t k = 0; k < z; ++k) acc += w[k] * x[k];
        o[j] = acc;
      }
    }
    return logits;
  }
  const auto& cos = std::get<CosineClassifier>(head);
  CosineCache cache = cosine_forward_cache(cos, features);
  Matrix logits = std::move(cache.cosines);
  for (double& v : logits.data()) v *= cos.scale;
  return logits;
}

LossGrad cross_entropy_masked(const Matrix& logits, const std::vector<int>& labels,
                              const std::vector<int>& active_classes) {
  const std::size_t b = logits.rows();
  const std::size_t c = logits.cols();
  if (labels.size() != b)
    throw DimensionError("cross_entropy_masked: label count does not match batch");
  if (active_classes.empty())
    throw ProtocolError("cross_entropy_masked: active set is empty");
  std::vector<char> active(c, 0);
  for (const int a : active_classes) {
    if (a < 0 || static_cast<std::size_t>(a) >= c)
      throw ProtocolError("cross_entropy_masked: active class out of range");
    active[static_cast<std::size_t>(a)] = 1;
  }
  for (const int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c || !active[label])
      throw ProtocolError("cross_entropy_masked: label outside the active set");
  }

  LossGrad out;
  out.dlogits = Matrix(b, c);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* x = logits.row(i);
    double maxv = -std::numeric_limits<double>::infinity();
    for (const int a : active_classes) maxv = std::max(maxv, x[a]);
    double lse = 0.0;
    for (const int a : active_classes) lse += std::exp(x[a] - maxv);
    lse = std::log(lse);
    total += -(x[labels[i]] - maxv - lse);
    double* d = out.dlogits.row(i);
    for (const int a : active_classes) {
      d[a] = std::exp(x[a] - maxv - lse) * inv_b;
    }
    d[labels[i]] -= inv_b;
  }
  out.loss = total * inv_b;
  return out;
}

LossGrad distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                      double temperature) {
  if (student_logits.rows() != teacher_logits.rows() ||
      student_logits.cols() != teacher_logits.cols())
    throw DimensionError("distill_loss: logit shapes differ");
  if (!(temperature > 0.0)) throw ParameterError("distill_loss: temperature must be positive");
  const std::size_t b = student_logits.rows();
  const std::size_t c = student_logits.cols();
  const double t = temperature;
  const double inv_b = 1.0 / static_cast<double>(b);

  LossGrad out;
  out.dlogits = Matrix(b, c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* srow = student_logits.row(i);
    const double* trow = teacher_logits.row(i);
    double smax = -std::numeric_limits<double>::infinity();
    double tmax = smax;
    for (std::size_t j = 0; j < c; ++j) {
      smax = std::max(smax, srow[j] / t);
      tmax = std::max(tmax, trow[j] / t);
    }
    double s_lse = 0.0;
    double t_lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      s_lse += std::exp(srow[j] / t - smax);
      t_lse += std::exp(trow[j] / t - tmax);
    }
    s_lse = std::log(s_lse);
    t_lse = std::log(t_lse);
    double row_kl = 0.0;
    double* d = out.dlogits.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const double log_pt = trow[j] / t - tmax - t_lse;
      const double log_ps = srow[j] / t - smax - s_lse;
      const double pt = std::exp(log_pt);
      const double ps = std::exp(log_ps);
      row_kl += pt * (log_pt - log_ps);
      d[j] = t * (ps - pt) * inv_b;
    }
    total += row_kl * t * t;
  }
  out.loss = total * inv_b;
  return out;
}

std::size_t Model::feature_dim() const {
  std::size_t total = 0;
  for (const FeatureExtractor& b : branches) total += b.feature_dim();
  return total;
}

Model make_single_branch_model(FeatureExtractor extractor, Classifier head,
                               std::vector<int> head_classes) {
  Model m;
  m.branches.push_back(std::move(extractor));
  m.branch_frozen.assign(1, false);
  m.head = std::move(head);
  m.head_classes = std::move(head_classes);
  return m;
}

Matrix model_features(const Model& model, const Matrix& batch) {
  const Matrix stem_out = model.has_stem() ? forward_features(model.stem, batch) : batch;
  Matrix features;
  for (const FeatureExtractor& branch : model.branches) {
    features = hcat(features, forward_features(branch, stem_out));
  }
  return features;
}

Matrix model_logits(const Model& model, const Matrix& batch) {
  return classify(model.head, model_features(model, batch));
}

LayerTapSet primary_tap_set(const Model& model, const Matrix& batch) {
  LayerTapSet taps;
  Matrix stem_out = batch;
  if (model.has_stem()) {
    ForwardTaps stem_fwd = forward_with_taps(model.stem, batch);
    taps = std::move(stem_fwd.taps);
    stem_out = std::move(stem_fwd.features);
  }
  ForwardTaps branch_fwd = forward_with_taps(model.branches.front(), stem_out);
  for (std::size_t l = 0; l < branch_fwd.taps.layer_ids.size(); ++l) {
    taps.layer_ids.push_back(branch_fwd.taps.layer_ids[l]);
    taps.activations.push_back(std::move(branch_fwd.taps.activations[l]));
  }
  return taps;
}

namespace {

struct ModelForward {
  ExtractorForward stem_fwd;                    // unused when no stem
  std::vector<ExtractorForward> branch_fwds;    // per branch
  Matrix features;
  Matrix logits;
};

ModelForward model_forward_cached(const Model& model, const Matrix& batch) {
  ModelForward fwd;
  const Matrix* stem_out = &batch;
  if (model.has_stem()) {
    fwd.stem_fwd = extractor_forward_cached(model.stem, batch);
    stem_out = &fwd.stem_fwd.output();
  }
  for (const FeatureExtractor& branch : model.branches) {
    fwd.branch_fwds.push_back(extractor_forward_cached(branch, *stem_out));
    fwd.features = hcat(fwd.features, fwd.branch_fwds.back().output());
  }
  fwd.logits = classify(model.head, fwd.features);
  return fwd;
}

// Assembles loss and dlogits from the spec on already-computed logits.
LossGrad assemble_loss(const Matrix& logits, const std::vector<int>& labels,
                       const LossSpec& spec) {
  LossGrad total = cross_entropy_masked(logits, labels, spec.active_classes);
  if (spec.distill_weight != 0.0) {
    if (spec.teacher_logits == nullptr)
      throw ProtocolError("backward: distillation requested without teacher logits");
    if (spec.distill_classes.empty())
      throw ProtocolError("backward: distillation requested without distill classes");
    Matrix student_slice(logits.rows(), spec.distill_classes.size());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      for (std::size_t j = 0; j < spec.distill_classes.size(); ++j) {
        student_slice(i, j) = logits(i, static_cast<std::size_t>(spec.distill_classes[j]));
      }
    }
    const LossGrad distill = distill_loss(student_slice, *spec.teacher_logits, spec.temperature);
    total.loss += spec.distill_weight * distill.loss;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      for (std::size_t j = 0; j < spec.distill_classes.size(); ++j) {
        total.dlogits(i, static_cast<std::size_t>(spec.distill_classes[j])) +=
            spec.distill_weight * distill.dlogits(i, j);
      }
    }
  }
  return total;
}

}  // namespace

double loss_value(const Model& model, const Matrix& batch, const std::vector<int>& labels,
                  const LossSpec& spec) {
  const Matrix logits = model_logits(model, batch);
  return assemble_loss(logits, labels, spec).loss;
}

BackwardResult backward(const Model& model, const Matrix& batch, const std::vector<int>& labels,
                        const LossSpec& spec) {
  const ModelForward fwd = model_forward_cached(model, batch);
  LossGrad loss = assemble_loss(fwd.logits, labels, spec);

  BackwardResult result;
  result.loss = loss.loss;
  result.grads.branches.resize(model.branches.size());

  const Matrix dfeatures = head_backprop(model.head, fwd.features, loss.dlogits, &result.grads.head);

  const std::size_t b = batch.rows();
  const bool need_stem_grad = model.has_stem() && !model.stem_frozen;
  Matrix dstem_out;
  if (need_stem_grad) dstem_out = Matrix(b, model.stem.feature_dim());

  std::size_t col = 0;
  for (std::size_t bi = 0; bi < model.branches.size(); ++bi) {
    const FeatureExtractor& branch = model.branches[bi];
    const std::size_t width = branch.feature_dim();
    const bool trainable = !model.branch_frozen[bi];
    if (!trainable && !need_stem_grad) {
      result.grads.branches[bi].assign(branch.layers.size(), std::nullopt);
      col += width;
      continue;
    }
    Matrix dbranch(b, width);
    for (std::size_t i = 0; i < b; ++i) {
      const double* src = dfeatures.row(i) + col;
      double* dst = dbranch.row(i);
      for (std::size_t k = 0; k < width; ++k) dst[k] = src[k];
    }
    Matrix dinput = extractor_backprop(branch, fwd.branch_fwds[bi], std::move(dbranch),
                                       trainable ? &result.grads.branches[bi] : nullptr);
    if (!trainable) result.grads.branches[bi].assign(branch.layers.size(), std::nullopt);
    if (need_stem_grad) {
      for (std::size_t i = 0; i < dinput.size(); ++i) dstem_out.data()[i] += dinput.data()[i];
    }
    col += width;
  }

  if (model.has_stem()) {
    if (need_stem_grad) {
      extractor_backprop(model.stem, fwd.stem_fwd, std::move(dstem_out), &result.grads.stem);
    } else {
      result.grads.stem.assign(model.stem.layers.size(), std::nullopt);
    }
  }
  return result;
}

void sgd_step_extractor(FeatureExtractor& extractor,
                        const std::vector<std::optional<LayerGrad>>& grads, double lr,
                        double weight_decay) {
  if (grads.size() != extractor.layers.size())
    throw DimensionError("sgd_step: gradient count does not match layer count");
  bool touched = false;
  for (std::size_t li = 0; li < grads.size(); ++li) {
    if (!grads[li]) continue;
    AffineLayer& layer = extractor.layers[li];
    const LayerGrad& g = *grads[li];
    if (g.weight.rows() != layer.weight.rows() || g.weight.cols() != layer.weight.cols())
      throw DimensionError("sgd_step: gradient shape does not match layer weight");
    double* w = layer.weight.data().data();
    const double* gw = g.weight.data().data();
    for (std::size_t i = 0; i < layer.weight.size(); ++i)
      w[i] -= lr * (gw[i] + weight_decay * w[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      layer.bias[i] -= lr * (g.bias[i] + weight_decay * layer.bias[i]);
    touched = true;
  }
  if (touched) extractor.param_version += 1;
}

void sgd_step_head(Classifier& head, const HeadGrad& grad, double lr, double weight_decay) {
  if (auto* lin = std::get_if<LinearClassifier>(&head)) {
    if (grad.weight.size() != lin->weight.size())
      throw DimensionError("sgd_step: head gradient shape mismatch");
    double* w = lin->weight.data().data();
    const double* gw = grad.weight.data().data();
    for (std::size_t i = 0; i < lin->weight.size(); ++i)
      w[i] -= lr * (gw[i] + weight_decay * w[i]);
    if (lin->use_bias) {
      for (std::size_t i = 0; i < lin->bias.size(); ++i)
        lin->bias[i] -= lr * (grad.bias[i] + weight_decay * lin->bias[i]);
    }
    return;
  }
  auto& cos = std::get<CosineClassifier>(head);
  if (grad.weight.size() != cos.weight.size())
    throw DimensionError("sgd_step: head gradient shape mismatch");
  double* w = cos.weight.data().data();
  const double* gw = grad.weight.data().data();
  for (std::size_t i = 0; i < cos.weight.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
  if (cos.scale_learnable) cos.scale -= lr * grad.scale;
}

void sgd_step(Model& model, const GradientSet& grads, double lr, double weight_decay) {
  if (lr < 0.0) throw ParameterError("sgd_step: learning rate must be nonnegative");
  if (!grads.stem.empty() || model.has_stem()) {
    if (grads.stem.size() != model.stem.layers.size())
      throw DimensionError("sgd_step: stem gradient count mismatch");
    sgd_step_extractor(model.stem, grads.stem, lr, weight_decay);
  }
  if (grads.branches.size() != model.branches.size())
    throw DimensionError("sgd_step: branch gradient count mismatch");
  for (std::size_t bi = 0; bi < model.branches.size(); ++bi)
    sgd_step_extractor(model.branches[bi], grads.branches[bi], lr, weight_decay);
  if (grads.head) sgd_step_head(model.head, *grads.head, lr, weight_decay);
}

std::size_t count_macs(const FeatureExtractor& extractor) {
  std::size_t total = 0;
  for (const AffineLayer& layer : extractor.layers) total += layer.in_dim() * layer.out_dim();
  return total;
}

std::size_t count_macs(const FeatureExtractor& extractor, const std::vector<Classifier>& heads) {
  std::size_t total = count_macs(extractor);
  for (const Classifier& head : heads)
    total += classifier_classes(head) * classifier_feature_dim(head);
  return total;
}

std::size_t extractor_macs(const Model& model) {
  std::size_t total = count_macs(model.stem);
  for (const FeatureExtractor& branch : model.branches) total += count_macs(branch);
  return total;
}

std::uint64_t extractor_digest(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  digest_extractor(h, model.stem);
  for (const FeatureExtractor& branch : model.branches) digest_extractor(h, branch);
  return h;
}

std::uint64_t model_digest(const Model& model) {
  std::uint64_t h = extractor_digest(model);
  std::visit(
      [&h](const auto& head) {
        fnv_update(h, head.weight.data().data(), head.weight.size() * sizeof(double));
      },
      model.head);
  if (const auto* lin = std::get_if<LinearClassifier>(&model.head)) {
    fnv_update(h, lin->bias.data(), lin->bias.size() * sizeof(double));
  } else {
    const auto& cos = std::get<CosineClassifier>(model.head);
    fnv_update(h, &cos.scale, sizeof(double));
  }
  return h;
}

}  // namespace cilab
