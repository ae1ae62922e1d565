#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selecmix/synthdata.hpp"
#include "selecmix/trainer.hpp"

namespace selecmix {

/// Axes of a sweep. An empty axis keeps the base spec's value.
struct SweepGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<Strategy> strategy;
  bool operator==(const SweepGrid&) const = default;
};

/// JSON document:
///   { "dataset": {...}, "train": {...}, "seeds": [0, 1],
///     "output_dir": "...", "data_dir": "...",
///     "sweep": { "alpha": [...], "beta": [...], "strategy": [...] } }
/// Every key is optional; unknown keys are rejected at every level.
struct ExperimentSpec {
  DatasetConfig dataset;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  /// Output root; empty means --out, then SELECMIX_LAB_OUT, then ./selecmix_out.
  std::string output_dir;
  /// Directory written by gen-data. Empty means generate per seed.
  std::string data_dir;
  SweepGrid sweep;

  void validate() const;
  bool operator==(const ExperimentSpec&) const = default;
};

/// Throws InvalidConfig on malformed JSON, unknown keys, wrong types or
/// invalid values.
ExperimentSpec parse_spec(std::string_view text);
ExperimentSpec load_spec(const std::filesystem::path& path);
/// Canonical form with every key present; parse_spec inverts it exactly.
std::string spec_to_json(const ExperimentSpec& spec);

/// "0,1,2" or ranges such as "0-4".
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct RunOptions {
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::size_t jobs = 1;
  bool quiet = false;
};

std::filesystem::path resolve_output_root(const ExperimentSpec& spec, const RunOptions& opt);

/// Shortest text that reads back to the same double.
std::string format_double(double v);
/// "mean±std" with the sample standard deviation (0 for a single value).
std::string format_mean_std(std::span<const double> values);

/// train / unbiased-test / conflict-test for one seed: generated with
/// dataset.seed = seed, or loaded from spec.data_dir when set.
struct SeedData {
  Dataset train;
  Dataset unbiased;
  Dataset conflict;
};
SeedData make_seed_data(const ExperimentSpec& spec, std::uint64_t seed);

/// epoch,metric,value rows.
std::string metrics_csv(const RunHistory& h);
/// epoch,query,selected,lambda,branch,query_is_conflicting,selected_is_conflicting
std::string pairs_csv(const RunHistory& h, const Dataset& train);
std::string history_json(const RunHistory& h, const DatasetConfig& data, std::string_view status);

/// Writes history.json, metrics.csv, pairs.csv and checkpoints/ into dir.
void write_run_artifacts(const std::filesystem::path& dir, const RunHistory& h, const Dataset& train,
                         std::string_view status);

/// Per-epoch similarity statistics of an auxiliary encoder trained alone
/// for config.epochs epochs; row 0 is the initialization.
std::vector<PairCategoryStats> trace_similarity(const TrainConfig& config, const Dataset& train,
                                                std::size_t n_pairs);
/// epoch,pos,neg,contra_pos,contra_neg
std::string trace_csv(std::span<const PairCategoryStats> rows);

std::filesystem::path cmd_gen_data(const ExperimentSpec& spec, const RunOptions& opt);
/// One run per seed under runs/<timestamp>-<hash>/seed-<s>/. Throws Diverged
/// after writing partial artifacts when any seed diverges.
std::filesystem::path cmd_train(const ExperimentSpec& spec, const RunOptions& opt);
/// Writes sweep.csv; failed cells are recorded with their status.
std::filesystem::path cmd_sweep(const ExperimentSpec& spec, const RunOptions& opt);
std::filesystem::path cmd_trace_sim(const ExperimentSpec& spec, const RunOptions& opt);
/// Re-evaluates the checkpoints of a train run directory into eval.csv.
std::filesystem::path cmd_eval(const std::filesystem::path& run_dir, const RunOptions& opt);

}  // namespace selecmix
