#include "cilab/repsim.hpp"

#include <cmath>
#include <string>

#include "cilab/errors.hpp"

namespace cilab {

namespace {

void require_square_pair(const Matrix& k, const Matrix& l, const char* who) {
  if (k.rows() != k.cols() || l.rows() != l.cols())
    throw DimensionError(std::string(who) + ": inputs must be square");
  if (k.rows() != l.rows())
    throw DimensionError(std::string(who) + ": inputs must have equal size");
}

}  // namespace

double hsic_biased(const Matrix& k, const Matrix& l) {
  require_square_pair(k, l, "hsic_biased");
  const std::size_t b = k.rows();
  if (b < 2) throw DegenerateSizeError("hsic_biased: requires b >= 2");
  const Matrix kc = double_center(k);
  const Matrix lc = double_center(l);
  double dot = 0.0;
  for (std::size_t i = 0; i < kc.size(); ++i) dot += kc.data()[i] * lc.data()[i];
  const double denom = static_cast<double>(b - 1) * static_cast<double>(b - 1);
  return dot / denom;
}

namespace {

double squared_frobenius(const Matrix& m) {
  double s = 0.0;
  for (const double v : m.data()) s += v * v;
  return s;
}

// K centers to (numerically) zero when its centered norm is a rounding
// residue of its own magnitude; constant features land here.
bool centers_to_zero(const Matrix& k, double hsic_self) {
  const std::size_t b = k.rows();
  const double centered_sq = hsic_self * static_cast<double>(b - 1) * static_cast<double>(b - 1);
  constexpr double kRelTol = 1e-12;
  return !(centered_sq > kRelTol * kRelTol * squared_frobenius(k));
}

}  // namespace

double cka_full(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw DimensionError("cka_full: row counts differ");
  const Matrix k = gram(x);
  const Matrix l = gram(y);
  const double xy = hsic_biased(k, l);
  const double xx = hsic_biased(k, k);
  const double yy = hsic_biased(l, l);
  if (centers_to_zero(k, xx) || centers_to_zero(l, yy))
    throw UndefinedSimilarityError("cka_full: centered Gram matrix is zero (constant features)");
  return xy / std::sqrt(xx * yy);
}

double hsic_unbiased(const Matrix& k, const Matrix& l) {
  require_square_pair(k, l, "hsic_unbiased");
  const std::size_t n = k.rows();
  if (n < 4) throw DegenerateSizeError("hsic_unbiased: requires n >= 4");

  // Work on K~ and L~ implicitly: all sums below skip the diagonal.
  // tr(K~ L~) = sum_{i != j} K_ij L_ji; with row sums of K~ and L~ the
  // term 1^T K~ L~ 1 becomes sum_j colsum_K~(j) rowsum_L~(j).
  double trace_kl = 0.0;
  std::vector<double> k_rowsum(n, 0.0);
  std::vector<double> l_rowsum(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double kij = k(i, j);
      const double lij = l(i, j);
      trace_kl += kij * l(j, i);
      k_rowsum[i] += kij;
      l_rowsum[i] += lij;
    }
  }
  double k_total = 0.0;
  double l_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    k_total += k_rowsum[i];
    l_total += l_rowsum[i];
  }
  // K~ is used with its transpose's column sums here; Gram inputs are
  // symmetric but the estimator is implemented for general inputs.
  double cross = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double k_colsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i != j) k_colsum += k(i, j);
    }
    cross += k_colsum * l_rowsum[j];
  }

  const double nd = static_cast<double>(n);
  const double middle = (k_total * l_total) / ((nd - 1.0) * (nd - 2.0));
  const double last = (2.0 / (nd - 2.0)) * cross;
  return (trace_kl + middle - last) / (nd * (nd - 3.0));
}

void cka_minibatch_update(CkaAccumulator& acc, const Matrix& xi, const Matrix& yi) {
  if (xi.rows() != yi.rows())
    throw DimensionError("cka_minibatch_update: batch row counts differ");
  const std::size_t n = xi.rows();
  if (n < 4) throw DegenerateSizeError("cka_minibatch_update: batch size must be >= 4");
  if (acc.batches_seen == 0) {
    acc.batch_size = n;
  } else if (n != acc.batch_size) {
    throw ProtocolError("cka_minibatch_update: batch size changed mid-stream");
  }
  const Matrix k = gram(xi);
  const Matrix l = gram(yi);
  acc.sum_xy += hsic_unbiased(k, l);
  acc.sum_xx += hsic_unbiased(k, k);
  acc.sum_yy += hsic_unbiased(l, l);
  acc.batches_seen += 1;
}

double cka_minibatch_finalize(const CkaAccumulator& acc) {
  if (acc.batches_seen == 0)
    throw ProtocolError("cka_minibatch_finalize: no batches accumulated");
  if (!(acc.sum_xx > 0.0) || !(acc.sum_yy > 0.0))
    throw UndefinedSimilarityError("cka_minibatch_finalize: non-positive radicand");
  return acc.sum_xy / std::sqrt(acc.sum_xx * acc.sum_yy);
}

std::vector<std::pair<std::string, double>> layerwise_cka(const LayerTapSet& taps_a,
                                                          const LayerTapSet& taps_b,
                                                          std::size_t batch_size,
                                                          std::size_t passes,
                                                          RngStream& rng) {
  if (taps_a.layer_ids != taps_b.layer_ids)
    throw ProtocolError("layerwise_cka: tap sets have different layer ids");
  if (taps_a.activations.size() != taps_a.layer_ids.size() ||
      taps_b.activations.size() != taps_b.layer_ids.size())
    throw ProtocolError("layerwise_cka: tap set activations out of sync with layer ids");
  if (batch_size < 4) throw ParameterError("layerwise_cka: batch_size must be >= 4");
  if (passes == 0) throw ParameterError("layerwise_cka: passes must be >= 1");

  const std::size_t layers = taps_a.layer_ids.size();
  std::size_t rows = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t ra = taps_a.activations[l].rows();
    const std::size_t rb = taps_b.activations[l].rows();
    if (l == 0) rows = ra;
    if (ra != rows || rb != rows)
      throw ProtocolError("layerwise_cka: tap sets have mismatched row counts");
  }
  if (batch_size > rows)
    throw ParameterError("layerwise_cka: batch_size exceeds available rows");

  // One base draw, then a derived stream per layer: evaluating layers in
  // any order (or in parallel) yields the same batches.
  const std::uint64_t sweep_seed = rng.next_u64();

  std::vector<std::pair<std::string, double>> out;
  out.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    RngStream layer_rng(derive_seed(sweep_seed, "layer", l));
    CkaAccumulator acc;
    std::vector<int> order(rows);
    for (std::size_t i = 0; i < rows; ++i) order[i] = static_cast<int>(i);
    for (std::size_t pass = 0; pass < passes; ++pass) {
      layer_rng.shuffle(order);
      const std::size_t full_batches = rows / batch_size;
      for (std::size_t bidx = 0; bidx < full_batches; ++bidx) {
        std::vector<int> batch(order.begin() + bidx * batch_size,
                               order.begin() + (bidx + 1) * batch_size);
        const Matrix xa = take_rows(taps_a.activations[l], batch);
        const Matrix xb = take_rows(taps_b.activations[l], batch);
        cka_minibatch_update(acc, xa, xb);
      }
    }
    out.emplace_back(taps_a.layer_ids[l], cka_minibatch_finalize(acc));
  }
  return out;
}

}  // namespace cilab
