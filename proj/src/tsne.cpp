#include "cilab/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cilab/errors.hpp"

namespace cilab {

namespace {

constexpr double kExaggeration = 12.0;
constexpr double kLearningRate = 200.0;
constexpr double kInitialMomentum = 0.5;
constexpr double kFinalMomentum = 0.8;
constexpr double kPerplexityTolerance = 1e-4;
constexpr double kTiny = 1e-12;

// Pairwise squared Euclidean distances between rows.
Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* xj = x.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = xi[c] - xj[c];
        s += diff * diff;
      }
      dist(i, j) = s;
      dist(j, i) = s;
    }
  }
  return dist;
}

// Calibrates row i's Gaussian bandwidth so that the conditional
// distribution's effective perplexity (exp of its entropy) matches the
// target, then writes the normalized row of conditional probabilities.
void calibrate_row(const Matrix& dist, std::size_t i, double perplexity, Matrix& p) {
  const std::size_t n = dist.rows();
  double max_dist = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) max_dist = std::max(max_dist, dist(i, j));
  }
  if (max_dist <= 0.0)
    throw ParameterError("tsne_embed: degenerate distances (identical rows) make perplexity calibration infeasible");

  double beta = 1.0;
  double beta_min = -std::numeric_limits<double>::max();
  double beta_max = std::numeric_limits<double>::max();
  std::vector<double> row(n, 0.0);
  double sum_p = kTiny;
  for (int iter = 0; iter < 200; ++iter) {
    sum_p = kTiny;
    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        row[j] = 0.0;
        continue;
      }
      row[j] = std::exp(-beta * dist(i, j));
      sum_p += row[j];
      weighted += beta * dist(i, j) * row[j];
    }
    const double entropy = weighted / sum_p + std::log(sum_p);
    const double current_perplexity = std::exp(entropy);
    if (std::abs(current_perplexity - perplexity) <= kPerplexityTolerance) break;
    if (current_perplexity > perplexity) {
      beta_min = beta;
      beta = (beta_max == std::numeric_limits<double>::max()) ? beta * 2.0
                                                              : (beta + beta_max) / 2.0;
    } else {
      beta_max = beta;
      beta = (beta_min == -std::numeric_limits<double>::max()) ? beta / 2.0
                                                               : (beta + beta_min) / 2.0;
    }
  }
  for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum_p;
}

// Student-t affinities of the current embedding; returns the
// unnormalized weights and their total.
double fill_q_weights(const Matrix& y, Matrix& w) {
  const std::size_t n = y.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y(i, 0) - y(j, 0);
      const double dy = y(i, 1) - y(j, 1);
      const double q = 1.0 / (1.0 + dx * dx + dy * dy);
      w(i, j) = q;
      w(j, i) = q;
      total += 2.0 * q;
    }
  }
  return total;
}

double kl_divergence(const Matrix& p, const Matrix& y) {
  const std::size_t n = y.rows();
  Matrix w(n, n);
  const double total = fill_q_weights(y, w);
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pij = p(i, j);
      if (pij <= 0.0) continue;
      const double qij = std::max(w(i, j) / total, kTiny);
      kl += pij * std::log(pij / qij);
    }
  }
  return kl;
}

}  // namespace

TsneResult tsne_embed(const Matrix& features, double perplexity, std::size_t iterations,
                      RngStream& rng) {
  if (features.empty()) throw DimensionError("tsne_embed: empty input");
  if (!(perplexity > 1.0)) throw ParameterError("tsne_embed: perplexity must exceed 1");
  const std::size_t n = features.rows();
  if (static_cast<double>(n) < 3.0 * perplexity)
    throw ParameterError("tsne_embed: perplexity too large for the number of rows");
  if (iterations == 0) throw ParameterError("tsne_embed: iterations must be >= 1");

  const Matrix dist = squared_distances(features);
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) calibrate_row(dist, i, perplexity, p);

  // Symmetrize: p_ij = (p_j|i + p_i|j) / 2n.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (p(i, j) + p(j, i)) / (2.0 * static_cast<double>(n));
      p(i, j) = v;
      p(j, i) = v;
    }
    p(i, i) = 0.0;
  }

  Matrix y(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.next_normal();
    y(i, 1) = 1e-4 * rng.next_normal();
  }

  TsneResult result;
  result.initial_kl = kl_divergence(p, y);

  const std::size_t exaggeration_end = std::max<std::size_t>(1, iterations / 4);
  Matrix velocity(n, 2);
  Matrix gains(n, 2, 1.0);
  Matrix grad(n, 2);
  Matrix w(n, n);

  for (std::size_t iter = 0; iter < iterations; ++iter) {
    const double exaggeration = iter < exaggeration_end ? kExaggeration : 1.0;
    const double momentum = iter < exaggeration_end ? kInitialMomentum : kFinalMomentum;

    const double total = fill_q_weights(y, w);
    for (std::size_t i = 0; i < n; ++i) {
      grad(i, 0) = 0.0;
      grad(i, 1) = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double qw = w(i, j);
        const double mult = 4.0 * (exaggeration * p(i, j) - qw / total) * qw;
        grad(i, 0) += mult * (y(i, 0) - y(j, 0));
        grad(i, 1) += mult * (y(i, 1) - y(j, 1));
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (velocity(i, c) > 0.0);
        gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        velocity(i, c) = momentum * velocity(i, c) - kLearningRate * gains(i, c) * grad(i, c);
        y(i, c) += velocity(i, c);
      }
    }

    // Recentre so the embedding does not drift.
    double mean_x = 0.0;
    double mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_x += y(i, 0);
      mean_y += y(i, 1);
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y(i, 0) -= mean_x;
      y(i, 1) -= mean_y;
    }
  }

  result.final_kl = kl_divergence(p, y);
  result.embedding = std::move(y);
  return result;
}

}  // namespace cilab
