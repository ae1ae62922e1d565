#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "selecmix/numerics.hpp"
#include "selecmix/rng.hpp"

namespace selecmix {

/// y = x W + b, with W stored in x out.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
  bool operator==(const DenseLayer&) const = default;
};

enum class HeadKind : std::uint8_t { Classifier = 0, Projection = 1 };

/// ReLU MLP. A classifier head emits raw logits; a projection head emits
/// L2-normalized rows.
struct MlpParams {
  std::vector<DenseLayer> layers;
  HeadKind head = HeadKind::Classifier;

  std::size_t input_dim() const noexcept { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const noexcept { return layers.empty() ? 0 : layers.back().out_dim(); }
  std::size_t parameter_count() const noexcept;

  /// Throws ShapeMismatch unless consecutive layer dimensions chain.
  void validate() const;
  bool all_finite() const noexcept;
  bool operator==(const MlpParams&) const = default;
};

/// Gradients share the parameter layout.
struct MlpGrads {
  std::vector<DenseLayer> layers;
};

/// widths = {input, hidden..., output}. Weights and biases are drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpParams make_mlp(std::span<const std::size_t> widths, HeadKind head, Rng& rng);
MlpParams make_classifier(std::size_t input_dim, std::size_t hidden, std::size_t num_classes,
                          Rng& rng);
MlpParams make_encoder(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim, Rng& rng);

struct ForwardCache {
  HeadKind head = HeadKind::Classifier;
  /// Input to every layer; activations[l] feeds layers[l].
  std::vector<Matrix> activations;
  /// Final layer output before normalization.
  Matrix head_output;
  /// Normalized rows and their pre-normalization norms (projection heads).
  Matrix normalized;
  std::vector<double> norms;

  const Matrix& penultimate() const { return activations.back(); }
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

ForwardResult forward_classifier(const MlpParams& p, const Matrix& x);
ForwardResult forward_encoder(const MlpParams& p, const Matrix& x);

/// Parameter gradients of a scalar loss given its gradient wrt the network
/// output (logits, or the normalized embedding z for projection heads, in
/// which case the Jacobian (I - z z^T)/||h|| is applied first).
MlpGrads backward(const MlpParams& p, const ForwardCache& cache, const Matrix& grad_output);

MlpGrads zero_grads_like(const MlpParams& p);
void add_scaled(MlpGrads& acc, const MlpGrads& g, double scale);

std::vector<double> flatten(const MlpParams& p);
std::vector<double> flatten(const MlpGrads& g);
MlpParams unflatten(const MlpParams& shape, std::span<const double> values);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<DenseLayer> first_moment;
  std::vector<DenseLayer> second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_adam(const MlpParams& p, AdamConfig config);

/// Bias-corrected Adam update. Throws Diverged if any parameter becomes
/// non-finite.
void adam_step(OptimizerState& state, MlpParams& p, const MlpGrads& grads);

std::vector<std::uint8_t> serialize(const MlpParams& p);
void save_checkpoint(const MlpParams& p, const std::filesystem::path& path);
MlpParams load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of the serialized parameters; used to prove a model was untouched.
std::uint64_t param_hash(const MlpParams& p);

}  // namespace selecmix
