#include "selecmix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "selecmix/error.hpp"

namespace selecmix {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::InvalidTau, "tau must be positive");
}

void check_q(double q) {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorKind::InvalidQ, "q must lie in (0, 1]");
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t num_classes) {
  if (labels.size() != rows) throw Error(ErrorKind::ShapeMismatch, "label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error(ErrorKind::ShapeMismatch, "label " + std::to_string(y) + " out of range");
    }
  }
}

/// Row-wise log p_{i,j} over j != i of the scaled similarity matrix. The
/// diagonal is left at -inf.
Matrix contrastive_log_probs(const Matrix& z, double tau) {
  const std::size_t b = z.rows();
  Matrix s = cosine_sim_matrix(z);
  Matrix logp(b, b, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) mx = std::max(mx, s(i, j) / tau);
    double sum = 0.0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) sum += std::exp(s(i, j) / tau - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) logp(i, j) = s(i, j) / tau - lse;
  }
  return logp;
}

LossResult weighted_contrastive(const Matrix& z, std::span<const int> labels, double tau,
                                double q, bool frozen_weights, EmptyPositives policy) {
  check_tau(tau);
  const std::size_t b = z.rows();
  if (b < 2) throw Error(ErrorKind::BatchTooSmall, "contrastive loss needs at least two rows");
  if (labels.size() != b) throw Error(ErrorKind::ShapeMismatch, "label count does not match batch");

  const Matrix logp = contrastive_log_probs(z, tau);
  LossResult out;
  out.pair_probs = Matrix(b, b);
  out.pair_weights = Matrix(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) out.pair_probs(i, j) = std::exp(logp(i, j));

  // G(i, j) = dL/ds_ij where s_ij = z_i.z_j / tau.
  Matrix g(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t n_pos = 0;
    for (std::size_t j = 0; j < b; ++j) n_pos += (j != i && labels[j] == labels[i]) ? 1 : 0;
    if (n_pos == 0) {
      if (policy == EmptyPositives::Strict) {
        throw Error(ErrorKind::NoPositives, "anchor " + std::to_string(i) + " has no positive");
      }
      continue;
    }
    const double inv_pos = 1.0 / static_cast<double>(n_pos);
    double row_weight = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i || labels[k] != labels[i]) continue;
      const double frozen = frozen_weights ? std::exp(q * logp(i, k)) : 1.0;
      const double w = inv_pos * frozen;
      out.pair_weights(i, k) = frozen;
      out.value -= w * logp(i, k);
      g(i, k) -= w;
      row_weight += w;
    }
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) g(i, j) += row_weight * out.pair_probs(i, j);
  }

  // dL/dZ = (G + G^T) Z / tau
  Matrix sym = g + g.transposed();
  out.grad_input = matmul(sym, z) * (1.0 / tau);
  return out;
}

}  // namespace

SoftLabelBatch::SoftLabelBatch(Matrix probs) : probs_(std::move(probs)) {
  for (std::size_t r = 0; r < probs_.rows(); ++r) {
    double sum = 0.0;
    for (double v : probs_.row(r)) {
      if (!(v >= 0.0)) throw Error(ErrorKind::ShapeMismatch, "negative soft label entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-10) {
      throw Error(ErrorKind::ShapeMismatch, "soft label row " + std::to_string(r) + " sums to " +
                                                std::to_string(sum));
    }
  }
}

SoftLabelBatch SoftLabelBatch::one_hot(std::span<const int> labels, std::size_t num_classes) {
  Matrix m(labels.size(), num_classes);
  check_labels(labels, labels.size(), num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) m(r, static_cast<std::size_t>(labels[r])) = 1.0;
  return SoftLabelBatch(std::move(m));
}

LossResult ce(const Matrix& logits, const SoftLabelBatch& labels) {
  if (logits.rows() != labels.size() || logits.cols() != labels.num_classes()) {
    throw Error(ErrorKind::ShapeMismatch, "logits and labels disagree in shape");
  }
  const std::size_t b = logits.rows();
  if (b == 0) throw Error(ErrorKind::ShapeMismatch, "empty batch");
  const Matrix logp = log_softmax_rows(logits);
  const Matrix& y = labels.probs();
  LossResult out;
  out.grad_input = Matrix(b, logits.cols());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (y(r, c) != 0.0) out.value -= y(r, c) * logp(r, c);
      out.grad_input(r, c) = (std::exp(logp(r, c)) - y(r, c)) * inv_b;
    }
  }
  out.value *= inv_b;
  return out;
}

LossResult gce(const Matrix& logits, std::span<const int> labels, double q) {
  check_q(q);
  check_labels(labels, logits.rows(), logits.cols());
  const std::size_t b = logits.rows();
  if (b == 0) throw Error(ErrorKind::ShapeMismatch, "empty batch");
  const Matrix logp = log_softmax_rows(logits);
  LossResult out;
  out.grad_input = Matrix(b, logits.cols());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    const double log_py = logp(r, y);
    // (1 - p^q)/q evaluated without cancellation for small q.
    out.value += -std::expm1(q * log_py) / q;
    const double weight = std::exp(q * log_py);
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double ce_grad = std::exp(logp(r, c)) - (c == y ? 1.0 : 0.0);
      out.grad_input(r, c) = weight * ce_grad * inv_b;
    }
  }
  out.value *= inv_b;
  return out;
}

LossResult sc(const Matrix& z, std::span<const int> labels, double tau, EmptyPositives policy) {
  return weighted_contrastive(z, labels, tau, 0.0, false, policy);
}

LossResult gsc(const Matrix& z, std::span<const int> labels, double tau, double q,
               EmptyPositives policy) {
  check_q(q);
  return weighted_contrastive(z, labels, tau, q, true, policy);
}

Matrix contrastive_probabilities(const Matrix& z, double tau) {
  check_tau(tau);
  Matrix logp = contrastive_log_probs(z, tau);
  for (std::size_t i = 0; i < logp.rows(); ++i)
    for (std::size_t j = 0; j < logp.cols(); ++j) logp(i, j) = i == j ? 0.0 : std::exp(logp(i, j));
  return logp;
}

Matrix log_prob_term_grad(const Matrix& z, std::size_t i, std::size_t k, double tau) {
  check_tau(tau);
  const std::size_t b = z.rows();
  if (i >= b || k >= b || i == k) throw Error(ErrorKind::ShapeMismatch, "invalid pair index");
  const Matrix p = contrastive_probabilities(z, tau);
  // d(-log p_ik)/ds_ij = p_ij - [j == k], j != i
  Matrix grad(b, z.cols());
  auto zi = z.row(i);
  auto gi = grad.row(i);
  for (std::size_t j = 0; j < b; ++j) {
    if (j == i) continue;
    const double coef = (p(i, j) - (j == k ? 1.0 : 0.0)) / tau;
    auto zj = z.row(j);
    auto gj = grad.row(j);
    for (std::size_t c = 0; c < z.cols(); ++c) {
      gi[c] += coef * zj[c];
      gj[c] += coef * zi[c];
    }
  }
  return grad;
}

}  // namespace selecmix
