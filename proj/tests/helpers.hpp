#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "doctest.h"
#include "selecmix/error.hpp"
#include "selecmix/losses.hpp"
#include "selecmix/numerics.hpp"
#include "selecmix/rng.hpp"

#define CHECK_THROWS_KIND(expr, expected)                                  \
  do {                                                                     \
    bool thrown_ = false;                                                  \
    try {                                                                  \
      (void)(expr);                                                        \
    } catch (const ::selecmix::Error& e_) {                                \
      thrown_ = true;                                                      \
      CHECK_MESSAGE(e_.kind() == (expected), e_.what());                   \
    }                                                                      \
    CHECK_MESSAGE(thrown_, "expected " << ::selecmix::to_string(expected)); \
  } while (0)

namespace testutil {

inline selecmix::Matrix random_matrix(selecmix::Rng& rng, std::size_t rows, std::size_t cols,
                                      double scale = 1.0) {
  selecmix::Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline std::vector<int> random_labels(selecmix::Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(classes)));
  return y;
}

/// Labels where every class that appears appears at least twice.
inline std::vector<int> paired_labels(selecmix::Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i + 1 < n; i += 2) {
    y[i] = y[i + 1] = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(classes)));
  }
  if (n % 2 == 1) y[n - 1] = y[0];
  return y;
}

/// -sum_i 1/|P_i| sum_k w_ik log p_ik with w held at the given values.
inline double frozen_contrastive(const selecmix::Matrix& z, std::span<const int> y, double tau,
                                 const selecmix::Matrix& w) {
  const selecmix::Matrix p = selecmix::contrastive_probabilities(z, tau);
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < z.rows(); ++k) n_pos += (k != i && y[k] == y[i]) ? 1 : 0;
    for (std::size_t k = 0; k < z.rows(); ++k)
      if (k != i && y[k] == y[i]) total -= w(i, k) * std::log(p(i, k)) / static_cast<double>(n_pos);
  }
  return total;
}

}  // namespace testutil
