#pragma once

#include <span>
#include <vector>

#include "selecmix/numerics.hpp"

namespace selecmix {

struct LossResult {
  double value = 0.0;
  /// Gradient wrt logits (CE/GCE) or wrt the normalized embeddings z (SC/GSC).
  Matrix grad_input;
  /// SC/GSC only: p_{i,j} with a zero diagonal.
  Matrix pair_probs;
  /// SC/GSC only: the frozen per-pair weight applied to -log p_{i,k}
  /// (1 for SC, p_{i,k}^q for GSC); zero outside positive pairs.
  Matrix pair_weights;
};

/// Probability rows over C classes (one-hot or mixed).
class SoftLabelBatch {
 public:
  SoftLabelBatch() = default;
  /// Throws ShapeMismatch unless every row is nonnegative and sums to 1 within 1e-10.
  explicit SoftLabelBatch(Matrix probs);
  static SoftLabelBatch one_hot(std::span<const int> labels, std::size_t num_classes);

  const Matrix& probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.rows(); }
  std::size_t num_classes() const noexcept { return probs_.cols(); }

 private:
  Matrix probs_;
};

/// How SC/GSC treat an anchor whose positive set is empty.
enum class EmptyPositives { Strict, Skip };

/// Mean over the batch of -sum_c label_c log softmax(logits)_c.
LossResult ce(const Matrix& logits, const SoftLabelBatch& labels);

/// Mean over the batch of (1 - p_y^q) / q. Per example the logit gradient is
/// p_y^q times the CE gradient.
LossResult gce(const Matrix& logits, std::span<const int> labels, double q);

/// Supervised contrastive loss, summed over anchors:
///   L = -sum_i 1/|P_i| sum_{k in P_i} log p_{i,k}
/// with the softmax over j != i of z_i.z_j / tau.
LossResult sc(const Matrix& z, std::span<const int> labels, double tau,
              EmptyPositives policy = EmptyPositives::Strict);

/// SC with every term weighted by p_{i,k}^q, where the weight is evaluated
/// and then held constant for differentiation.
LossResult gsc(const Matrix& z, std::span<const int> labels, double tau, double q,
               EmptyPositives policy = EmptyPositives::Strict);

/// p_{i,j} = exp(z_i.z_j/tau) / sum_{l != i} exp(z_i.z_l/tau); zero diagonal.
Matrix contrastive_probabilities(const Matrix& z, double tau);

/// Gradient wrt z of the single term -log p_{i,k}.
Matrix log_prob_term_grad(const Matrix& z, std::size_t i, std::size_t k, double tau);

}  // namespace selecmix
