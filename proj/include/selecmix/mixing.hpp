#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "selecmix/losses.hpp"
#include "selecmix/model.hpp"
#include "selecmix/numerics.hpp"
#include "selecmix/rng.hpp"

namespace selecmix {

/// A minibatch as seen by the mixing strategies. `bias` is empty when bias
/// attributes are unavailable.
struct Batch {
  Matrix x;
  std::vector<int> y;
  std::vector<int> bias;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return y.size(); }
  bool has_bias() const noexcept { return !bias.empty(); }
};

enum class Branch : std::uint8_t { Positive, Negative, Passthrough, Mixup };
enum class MixMode : std::uint8_t { A, B, AB };

std::string_view to_string(Branch b) noexcept;
std::string_view to_string(MixMode m) noexcept;

/// One mixed row: x~ = lambda * x[query] + (1 - lambda) * x[selected].
struct PairRecord {
  std::size_t query = 0;
  std::size_t selected = 0;
  double lambda = 1.0;
  Branch branch = Branch::Passthrough;
};

struct MixedBatch {
  Matrix inputs;
  SoftLabelBatch labels;
  std::vector<PairRecord> pairs;
};

enum class SimilarityKind : std::uint8_t {
  GscCosine,
  GceCosine,
  GceL2,
  GceKl,
  GroundTruth,
  /// All scores equal; with lowest-index ties this is the random-selection
  /// reference for recall measurements.
  Constant,
};

std::string_view to_string(SimilarityKind k) noexcept;
std::optional<SimilarityKind> parse_similarity_kind(std::string_view s) noexcept;

/// Scores are "higher = more similar biased features". gsc-cosine needs a
/// projection-head model; the gce-* kinds need a classifier-head model.
struct SimilarityBackend {
  SimilarityKind kind = SimilarityKind::GscCosine;
  const MlpParams* model = nullptr;
};

/// B x B score matrix. Throws BackendUnavailable when the backend lacks the
/// model (or bias labels) it needs.
Matrix similarity_scores(const SimilarityBackend& backend, const Batch& batch);

/// argmin over P_i = {j != i : y_j = y_i} of scores(i, j); lowest index on ties.
std::size_t select_contradicting_positive(std::size_t i, std::span<const int> labels,
                                          const Matrix& scores);
/// argmax over N_i = {j : y_j != y_i} of scores(i, j); lowest index on ties.
std::size_t select_contradicting_negative(std::size_t i, std::span<const int> labels,
                                          const Matrix& scores);

/// Selective mixup from a precomputed score matrix. Mode AB draws one coin
/// p per batch (positive branch when p > 0.5); then per query
/// lambda ~ U[0,1), lambda <- min(lambda, 1 - lambda), the label is one-hot
/// of the selected example. An empty candidate set falls back to the other
/// branch, then to passthrough.
MixedBatch selecmix_from_scores(const Batch& batch, const Matrix& scores, MixMode mode, Rng& rng);
MixedBatch selecmix_batch(const Batch& batch, const SimilarityBackend& backend, MixMode mode,
                          Rng& rng);

/// Selective mixup with exact contradicting sets from bias labels; the
/// partner is uniform within the set.
MixedBatch gt_selecmix_batch(const Batch& batch, MixMode mode, Rng& rng);

/// Standard mixup: uniform partner, unmodified lambda, interpolated labels.
MixedBatch vanilla_mixup_batch(const Batch& batch, Rng& rng);

/// LISA-style baseline: exact contradicting sets, uniform partner,
/// unmodified lambda, interpolated labels.
MixedBatch lisa_batch(const Batch& batch, MixMode mode, Rng& rng);

/// lambda * a + (1 - lambda) * b, clamped to [min(a, b), max(a, b)].
double mix_value(double a, double b, double lambda) noexcept;

}  // namespace selecmix
