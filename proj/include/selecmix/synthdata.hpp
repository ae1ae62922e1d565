#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "selecmix/numerics.hpp"
#include "selecmix/rng.hpp"

namespace selecmix {

struct DatasetConfig {
  int num_classes = 10;
  std::size_t n_train = 10000;
  std::size_t n_test = 5000;
  int dim_robust = 10;
  int dim_bias = 10;
  double robust_scale = 1.0;
  double robust_noise = 0.8;
  double bias_scale = 1.0;
  double bias_noise = 0.15;
  double alpha = 0.01;
  double beta = 0.0;
  std::uint64_t seed = 0;

  int input_dim() const noexcept { return dim_robust + dim_bias; }

  /// Throws InvalidConfig unless the bias block is strictly easier than the
  /// robust block (s_b/sigma_b > s_r/sigma_r) and alpha, beta lie in [0, 1].
  void validate() const;

  bool operator==(const DatasetConfig&) const = default;
};

struct Example {
  std::vector<double> x;
  int y = 0;
  int b = 0;
  bool is_conflicting = false;
  bool is_noisy = false;

  bool operator==(const Example&) const = default;
};

enum class Split : std::uint8_t { Train = 0, UnbiasedTest = 1, ConflictTest = 2 };

std::string_view to_string(Split split) noexcept;

struct Dataset {
  std::vector<Example> examples;
  DatasetConfig config;
  Split split = Split::Train;

  std::size_t size() const noexcept { return examples.size(); }
  std::size_t count_conflicting() const noexcept;
  std::size_t count_noisy() const noexcept;

  bool operator==(const Dataset&) const = default;
};

/// ceil(fraction * n), robust to the representation error of fractions such
/// as 0.01 (0.01 * 10000 must give exactly 100).
std::size_t ceil_count(double fraction, std::size_t n) noexcept;

/// Class code for the robust block: entries are +-1/2 with fixed random
/// signs; row y is multiplied by s_r before Gaussian noise is added. Fixed for
/// a given (C, d_r) and independent of the dataset seed.
Matrix robust_pattern(int num_classes, int dim_robust);

/// Train split: exactly ceil(alpha * n_train) bias-conflicting examples,
/// followed by inject_label_noise with config.beta on its own stream.
Dataset generate(const DatasetConfig& config);

/// Replaces the label of exactly ceil(beta * n) examples, chosen without
/// replacement, with a uniform draw over all classes.
Dataset inject_label_noise(Dataset d, double beta, Rng& rng);

/// (unbiased-test, conflict-test). Neither split carries label noise.
std::pair<Dataset, Dataset> generate_eval(const DatasetConfig& config);

void save(const Dataset& d, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);
/// Serialized bytes of the binary format (what save writes).
std::vector<std::uint8_t> serialize(const Dataset& d);

/// features..., y, b, is_conflicting, is_noisy
void export_csv(const Dataset& d, const std::filesystem::path& path);

Matrix features(const Dataset& d);
Matrix gather_features(const Dataset& d, std::span<const std::size_t> indices);

}  // namespace selecmix
