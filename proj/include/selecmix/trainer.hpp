#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "selecmix/error.hpp"
#include "selecmix/evalmetrics.hpp"
#include "selecmix/mixing.hpp"
#include "selecmix/model.hpp"
#include "selecmix/synthdata.hpp"

namespace selecmix {

enum class StrategyKind : std::uint8_t { Vanilla, Mixup, SelecMix, GtSelecMix, Lisa };

struct Strategy {
  StrategyKind kind = StrategyKind::SelecMix;
  MixMode mode = MixMode::AB;

  bool uses_auxiliary() const noexcept { return kind == StrategyKind::SelecMix; }
  bool operator==(const Strategy&) const = default;
};

/// "vanilla", "mixup", "selecmix-AB", "gt-selecmix-A", "lisa-B", ...
std::string to_string(const Strategy& s);
std::optional<Strategy> parse_strategy(std::string_view s) noexcept;

enum class AuxLoss : std::uint8_t { Gsc, Sc, Gce };
std::string_view to_string(AuxLoss a) noexcept;
std::optional<AuxLoss> parse_aux_loss(std::string_view s) noexcept;

enum class AuxSchedule : std::uint8_t { Simultaneous, Pretrain };
std::string_view to_string(AuxSchedule s) noexcept;
std::optional<AuxSchedule> parse_aux_schedule(std::string_view s) noexcept;

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  Strategy strategy{};
  AuxLoss aux_loss = AuxLoss::Gsc;
  AuxSchedule aux_schedule = AuxSchedule::Simultaneous;
  std::size_t pretrain_epochs = 0;
  SimilarityKind similarity = SimilarityKind::GscCosine;
  double lambda_base = 0.0;
  double lambda_ours = 1.0;
  double tau = 0.2;
  double q = 0.7;
  double lr_debiased = 5e-3;
  double lr_aux = 1e-2;
  std::size_t hidden_width = 100;
  std::size_t embed_dim = 32;
  /// Train the auxiliary model even when the strategy does not read it.
  bool train_aux_always = false;
  /// Pairs per category for per-epoch similarity traces; 0 disables them.
  std::size_t trace_pairs = 0;
  /// Bias probe on the final auxiliary model (needs both eval splits).
  bool final_probe = false;

  /// Throws InvalidConfig on inconsistent settings.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double unbiased_acc = 0.0;
  double conflict_acc = 0.0;
  double train_loss = 0.0;
  double aux_loss = 0.0;
  std::optional<PairCategoryStats> pair_stats;
  std::optional<double> recall_positive;
  std::optional<double> recall_negative;
  std::optional<double> recall;
};

struct RunHistory {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  MlpParams debiased;
  MlpParams auxiliary;
  /// Selections made during the final epoch.
  std::vector<PairLogEntry> final_pairs;
  std::optional<double> probe_acc;
  double wall_time_s = 0.0;

  /// 0 when no epoch has completed.
  double best_unbiased_acc() const noexcept;
  double final_unbiased_acc() const noexcept;
  double final_conflict_acc() const noexcept;
};

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* unbiased_test = nullptr;
  const Dataset* conflict_test = nullptr;
};

/// Thrown when a loss becomes non-finite; carries the epochs completed so far.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& message, RunHistory partial)
      : Error(ErrorKind::Diverged, message), partial_(std::move(partial)) {}
  const RunHistory& partial() const noexcept { return partial_; }

 private:
  RunHistory partial_;
};

/// Simultaneous (or staged) training of the auxiliary biased model and the
/// debiased classifier. Deterministic given config.seed.
RunHistory train(const TrainConfig& config, const TrainData& data);

using AuxEpochHook = std::function<void(std::size_t epoch, const MlpParams& aux)>;

/// Auxiliary model trained alone for `epochs` epochs with its configured
/// loss. Zero epochs returns the initialization. The hook, when set, sees the
/// model before training (epoch 0) and after every epoch.
MlpParams pretrain_auxiliary(const TrainConfig& config, const Dataset& train, std::size_t epochs,
                             const AuxEpochHook& hook = {});
/// Same, for config.pretrain_epochs.
MlpParams pretrain_auxiliary(const TrainConfig& config, const Dataset& train);

/// Freshly initialized auxiliary model for the configuration.
MlpParams init_auxiliary(const TrainConfig& config, const Dataset& train);
MlpParams init_debiased(const TrainConfig& config, const Dataset& train);

/// One optimizer step of the auxiliary loss on a raw batch; returns the loss.
double auxiliary_step(const TrainConfig& config, MlpParams& aux, OptimizerState& opt,
                      const Matrix& x, std::span<const int> y);

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices);

/// Builds B~ for the configured strategy. Vanilla returns the batch itself.
MixedBatch build_mixed_batch(const TrainConfig& config, const Batch& batch, const MlpParams& aux,
                             Rng& rng);

}  // namespace selecmix
