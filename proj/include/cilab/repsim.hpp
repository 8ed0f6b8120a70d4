#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cilab/matrix.hpp"
#include "cilab/rng.hpp"

namespace cilab {

// Defaults for the streaming layer sweep: batches of 256 samples, 10
// shuffled passes over the evaluation set.
inline constexpr std::size_t kDefaultCkaBatchSize = 256;
inline constexpr std::size_t kDefaultCkaPasses = 10;

// Biased HSIC estimator: <vec(K'), vec(L')> / (b - 1)^2 where K', L' are
// the double-centered Gram matrices. Requires square inputs of equal
// size b >= 2. Nonnegative when K == L.
double hsic_biased(const Matrix& k, const Matrix& l);

// Full-batch CKA between activation matrices X (b x z1) and Y (b x z2):
// HSIC(XX^T, YY^T) normalized by the self terms. Throws
// UndefinedSimilarityError when either centered Gram is zero (constant
// features) instead of returning a silent 0.
double cka_full(const Matrix& x, const Matrix& y);

// Unbiased estimator HSIC_1. K~ and L~ are K and L with zeroed
// diagonals; n must be at least 4. The result may be negative.
//
//   HSIC_1 = [ tr(K~ L~)
//              + (1^T K~ 1)(1^T L~ 1) / ((n-1)(n-2))
//              - (2/(n-2)) 1^T K~ L~ 1 ] / (n(n-3))
double hsic_unbiased(const Matrix& k, const Matrix& l);

// Streaming state for mini-batch CKA: three running HSIC_1 sums over
// batches. The per-batch HSIC_1 terms can be negative, so only the
// accumulated sums under the radicals are checked at finalize time.
struct CkaAccumulator {
  double sum_xy = 0.0;
  double sum_xx = 0.0;
  double sum_yy = 0.0;
  std::size_t batches_seen = 0;
  std::size_t batch_size = 0;  // fixed by the first update
};

// Adds HSIC_1(Xi Xi^T, Yi Yi^T) and the two self terms for one batch.
// The first update pins the batch size; changing it afterwards is a
// protocol error.
void cka_minibatch_update(CkaAccumulator& acc, const Matrix& xi, const Matrix& yi);

// sum_xy / sqrt(sum_xx * sum_yy). Requires at least one batch and
// positive radicands.
double cka_minibatch_finalize(const CkaAccumulator& acc);

// Ordered set of activation taps captured from one model on one batch of
// inputs; every activation matrix shares the same row count.
struct LayerTapSet {
  std::vector<std::string> layer_ids;
  std::vector<Matrix> activations;
};

// Mini-batch CKA per layer between two tap sets with identical layer ids
// and row counts. Each pass reshuffles the rows without replacement;
// rows that do not fill a final batch are dropped within the pass. Each
// layer draws its batch ordering from an independent stream derived from
// `rng`, so a parallel evaluation order cannot change the results.
std::vector<std::pair<std::string, double>> layerwise_cka(const LayerTapSet& taps_a,
                                                          const LayerTapSet& taps_b,
                                                          std::size_t batch_size,
                                                          std::size_t passes,
                                                          RngStream& rng);

}  // namespace cilab
