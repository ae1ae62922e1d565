#pragma once

#include <cstdint>
#include <span>

#include "selecmix/mixing.hpp"
#include "selecmix/model.hpp"
#include "selecmix/synthdata.hpp"

namespace selecmix {

enum class Subset { All, ConflictingOnly };

/// Fraction of argmax-logit predictions equal to y; ties go to the lowest
/// class index. Throws EmptySubset when no example qualifies.
double accuracy(const MlpParams& classifier, const Dataset& d, Subset subset = Subset::All);

/// Argmax predictions for every row of x.
std::vector<int> predict(const MlpParams& classifier, const Matrix& x);

/// The representation used for probing and similarity traces: z for a
/// projection head, L2-normalized penultimate activations for a classifier
/// head (all-zero rows stay zero).
Matrix embed(const MlpParams& model, const Matrix& x);

struct ProbeConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-2;
};

/// Linear probe for the bias attribute on frozen embeddings: trained with
/// full-batch Adam on b of `train`, evaluated on b of `eval`. Training runs
/// fit it on the unbiased split and score it on the conflict split.
double bias_probe(const MlpParams& encoder, const Dataset& train, const Dataset& eval,
                  const ProbeConfig& config = {});
/// Same, on precomputed embeddings (rows aligned with the datasets).
double bias_probe_embeddings(const Matrix& train_emb, std::span<const int> train_b,
                             const Matrix& eval_emb, std::span<const int> eval_b,
                             std::size_t num_classes, const ProbeConfig& config = {});

struct PairCategoryStats {
  double positives = 0.0;
  double negatives = 0.0;
  double contradicting_positives = 0.0;
  double contradicting_negatives = 0.0;
  std::size_t n_positives = 0;
  std::size_t n_negatives = 0;
  std::size_t n_contradicting_positives = 0;
  std::size_t n_contradicting_negatives = 0;
};

/// Mean cosine similarity of n_pairs ordered pairs drawn uniformly from each
/// category. Throws EmptyCategory if a category has no pair in the dataset.
PairCategoryStats pair_similarity_stats(const MlpParams& encoder, const Dataset& d,
                                        std::size_t n_pairs, std::uint64_t seed);
PairCategoryStats pair_similarity_stats_embeddings(const Matrix& unit_rows, const Dataset& d,
                                                   std::size_t n_pairs, std::uint64_t seed);

/// A selection made during training, with indices into the train split.
struct PairLogEntry {
  std::size_t epoch = 0;
  std::size_t query = 0;
  std::size_t selected = 0;
  double lambda = 1.0;
  Branch branch = Branch::Passthrough;
};

struct RecallReport {
  Branch branch = Branch::Positive;
  double recall = 0.0;
  std::size_t selected = 0;
  std::size_t contradicting = 0;
};

/// Fraction of the branch's logged selections that are truly contradicting:
/// positive needs y_i = y_k and b_i != b_k, negative needs y_i != y_k and
/// b_i = b_k. Throws EmptyLog when the branch has no entries.
RecallReport pair_selection_recall(std::span<const PairLogEntry> log, const Dataset& d,
                                   Branch branch);

bool is_contradicting(const Example& query, const Example& selected, Branch branch) noexcept;

}  // namespace selecmix
