// Independent reference implementations used to pin expected values.
// Everything here recomputes results from definitions (explicit matrix
// products, flatten-and-dot, slice-then-softmax) so the oracles stay
// independent of the library's optimized paths.
#pragma once

#include <cmath>
#include <vector>

#include "cilab/matrix.hpp"
#include "cilab/rng.hpp"

namespace oracle {

using cilab::Matrix;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix gram(const Matrix& x) { return oracle::matmul(x, oracle::transpose(x)); }

// Explicit H K H with H = I - (1/b) 1 1^T, via two oracle matmuls.
inline Matrix double_center(const Matrix& k) {
  const std::size_t b = k.rows();
  Matrix h(b, b, -1.0 / static_cast<double>(b));
  for (std::size_t i = 0; i < b; ++i) h(i, i) += 1.0;
  return oracle::matmul(oracle::matmul(h, k), h);
}

inline double hsic_biased(const Matrix& k, const Matrix& l) {
  const Matrix kc = oracle::double_center(k);
  const Matrix lc = oracle::double_center(l);
  double dot = 0.0;
  for (std::size_t i = 0; i < kc.size(); ++i) dot += kc.data()[i] * lc.data()[i];
  const double b = static_cast<double>(k.rows());
  return dot / ((b - 1.0) * (b - 1.0));
}

inline double cka_full(const Matrix& x, const Matrix& y) {
  const Matrix k = oracle::gram(x);
  const Matrix l = oracle::gram(y);
  return oracle::hsic_biased(k, l) /
         std::sqrt(oracle::hsic_biased(k, k) * oracle::hsic_biased(l, l));
}

// Three-term HSIC_1 from the definition, all terms via explicit products
// with the ones vector.
inline double hsic_unbiased(const Matrix& k, const Matrix& l) {
  const std::size_t n = k.rows();
  Matrix kt = k;
  Matrix lt = l;
  for (std::size_t i = 0; i < n; ++i) {
    kt(i, i) = 0.0;
    lt(i, i) = 0.0;
  }
  const Matrix kl = oracle::matmul(kt, lt);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += kl(i, i);
  double sum_k = 0.0;
  double sum_l = 0.0;
  double sum_kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sum_k += kt(i, j);
      sum_l += lt(i, j);
      sum_kl += kl(i, j);
    }
  }
  const double nd = static_cast<double>(n);
  return (trace + sum_k * sum_l / ((nd - 1.0) * (nd - 2.0)) - 2.0 * sum_kl / (nd - 2.0)) /
         (nd * (nd - 3.0));
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, cilab::RngStream& rng,
                            double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_uniform(lo, hi);
  return m;
}

inline Matrix random_normal_matrix(std::size_t rows, std::size_t cols, cilab::RngStream& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_normal();
  return m;
}

// Softmax cross entropy after physically slicing the active columns.
inline double sliced_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                   const std::vector<int>& active) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::vector<double> slice;
    int label_pos = -1;
    for (std::size_t a = 0; a < active.size(); ++a) {
      slice.push_back(logits(i, static_cast<std::size_t>(active[a])));
      if (active[a] == labels[i]) label_pos = static_cast<int>(a);
    }
    double maxv = slice[0];
    for (const double v : slice) maxv = std::max(maxv, v);
    double denom = 0.0;
    for (const double v : slice) denom += std::exp(v - maxv);
    total += -(slice[static_cast<std::size_t>(label_pos)] - maxv - std::log(denom));
  }
  return total / static_cast<double>(logits.rows());
}

// KL(softmax(teacher/T) || softmax(student/T)) * T^2, batch mean, from
// explicitly normalized probability vectors.
inline double distill(const Matrix& student, const Matrix& teacher, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < student.rows(); ++i) {
    std::vector<double> ps(student.cols()), pt(student.cols());
    double zs = 0.0;
    double zt = 0.0;
    for (std::size_t j = 0; j < student.cols(); ++j) {
      ps[j] = std::exp(student(i, j) / temperature);
      pt[j] = std::exp(teacher(i, j) / temperature);
      zs += ps[j];
      zt += pt[j];
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < student.cols(); ++j) {
      ps[j] /= zs;
      pt[j] /= zt;
      if (pt[j] > 0.0) kl += pt[j] * std::log(pt[j] / ps[j]);
    }
    total += kl * temperature * temperature;
  }
  return total / static_cast<double>(student.rows());
}

}  // namespace oracle
