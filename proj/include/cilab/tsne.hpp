#pragma once

#include <cstddef>

#include "cilab/matrix.hpp"
#include "cilab/rng.hpp"

namespace cilab {

struct TsneResult {
  Matrix embedding;   // rows x 2
  double initial_kl;  // KL(P||Q) of the random initialization
  double final_kl;    // KL(P||Q) of the returned embedding
};

// Exact (all-pairs) t-SNE to two dimensions. Per-point Gaussian
// bandwidths are binary-searched until the effective perplexity matches
// the target within 1e-4; affinities are symmetrized and the embedding
// is optimized by gradient descent with momentum (0.5 switching to 0.8),
// gain adaptation, learning rate 200, and early exaggeration x12 for the
// first quarter of the iterations.
//
// Requires rows >= 3 * perplexity and perplexity > 1. Rows with all-zero
// distances to every other point make the calibration infeasible and
// raise ParameterError.
TsneResult tsne_embed(const Matrix& features, double perplexity, std::size_t iterations,
                      RngStream& rng);

}  // namespace cilab
