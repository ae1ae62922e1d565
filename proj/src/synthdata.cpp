#include "selecmix/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "selecmix/binio.hpp"
#include "selecmix/error.hpp"

namespace selecmix {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'X', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kPatternSeed = 0x5E1EC0DE;
constexpr double kPatternGain = 0.5;

void fill_features(Example& ex, const DatasetConfig& cfg, const Matrix& pattern, Rng& rng) {
  ex.x.assign(static_cast<std::size_t>(cfg.input_dim()), 0.0);
  for (int d = 0; d < cfg.dim_robust; ++d) {
    ex.x[d] = cfg.robust_scale * pattern(ex.y, d) + cfg.robust_noise * rng.normal();
  }
  for (int d = 0; d < cfg.dim_bias; ++d) {
    const double mean = d == ex.b ? cfg.bias_scale : 0.0;
    ex.x[cfg.dim_robust + d] = mean + cfg.bias_noise * rng.normal();
  }
}

int draw_other_class(int y, int num_classes, Rng& rng) {
  const int r = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(num_classes - 1)));
  return r >= y ? r + 1 : r;
}

}  // namespace

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::UnbiasedTest: return "unbiased-test";
    case Split::ConflictTest: return "conflict-test";
  }
  return "unknown";
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (dim_bias < num_classes) fail("dim_bias must be at least num_classes");
  if (dim_robust < 1) fail("dim_robust must be positive");
  if (n_train == 0) fail("n_train must be positive");
  if (!(robust_noise > 0.0) || !(bias_noise > 0.0)) fail("noise levels must be positive");
  if (!(robust_scale > 0.0) || !(bias_scale > 0.0)) fail("scales must be positive");
  if (!(bias_scale / bias_noise > robust_scale / robust_noise)) {
    fail("bias block must have a strictly higher scale/noise ratio than the robust block");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
}

std::size_t Dataset::count_conflicting() const noexcept {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.is_conflicting ? 1 : 0;
  return n;
}

std::size_t Dataset::count_noisy() const noexcept {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.is_noisy ? 1 : 0;
  return n;
}

std::size_t ceil_count(double fraction, std::size_t n) noexcept {
  const double raw = fraction * static_cast<double>(n);
  const double nearest = std::round(raw);
  // Products such as 0.07 * 100 land a few ulps above the integer.
  if (std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(raw));
}

Matrix robust_pattern(int num_classes, int dim_robust) {
  Rng rng(kPatternSeed, Stream::Pattern);
  Matrix p(static_cast<std::size_t>(num_classes), static_cast<std::size_t>(dim_robust));
  for (double& v : p.data()) v = rng.uniform() < 0.5 ? -kPatternGain : kPatternGain;
  return p;
}

Dataset generate(const DatasetConfig& config) {
  config.validate();
  Rng rng(config.seed, Stream::Data);
  const Matrix pattern = robust_pattern(config.num_classes, config.dim_robust);
  const std::size_t n = config.n_train;
  const std::size_t n_conf = ceil_count(config.alpha, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));
  std::vector<bool> conflicting(n, false);
  for (std::size_t i = 0; i < n_conf; ++i) conflicting[order[i]] = true;

  Dataset d;
  d.config = config;
  d.split = Split::Train;
  d.examples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example& ex = d.examples[i];
    ex.y = static_cast<int>(i % static_cast<std::size_t>(config.num_classes));
    ex.is_conflicting = conflicting[i];
    ex.b = ex.is_conflicting ? draw_other_class(ex.y, config.num_classes, rng) : ex.y;
    fill_features(ex, config, pattern, rng);
  }
  rng.shuffle(std::span(d.examples));

  Rng noise_rng(config.seed, Stream::Noise);
  return inject_label_noise(std::move(d), config.beta, noise_rng);
}

Dataset inject_label_noise(Dataset d, double beta, Rng& rng) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw Error(ErrorKind::InvalidConfig, "beta must lie in [0, 1]");
  const std::size_t n = d.examples.size();
  const std::size_t n_noisy = ceil_count(beta, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n_noisy slots are a uniform sample.
  for (std::size_t i = 0; i < n_noisy; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(idx[i], idx[j]);
  }
  const auto classes = static_cast<std::size_t>(d.config.num_classes);
  for (std::size_t i = 0; i < n_noisy; ++i) {
    Example& ex = d.examples[idx[i]];
    ex.y = static_cast<int>(rng.uniform_index(classes));
    ex.is_noisy = true;
  }
  d.config.beta = beta;
  return d;
}

std::pair<Dataset, Dataset> generate_eval(const DatasetConfig& config) {
  config.validate();
  const Matrix pattern = robust_pattern(config.num_classes, config.dim_robust);
  const auto classes = static_cast<std::size_t>(config.num_classes);

  Dataset unbiased;
  unbiased.config = config;
  unbiased.split = Split::UnbiasedTest;
  {
    Rng rng(config.seed, Stream::EvalUnbiased);
    unbiased.examples.resize(config.n_test);
    std::vector<std::size_t> seen_per_class(classes, 0);
    for (std::size_t i = 0; i < config.n_test; ++i) {
      Example& ex = unbiased.examples[i];
      ex.y = static_cast<int>(i % classes);
      // Cycle the bias attribute within each class: uniform up to rounding.
      ex.b = static_cast<int>(seen_per_class[ex.y]++ % classes);
      ex.is_conflicting = ex.b != ex.y;
      fill_features(ex, config, pattern, rng);
    }
    rng.shuffle(std::span(unbiased.examples));
  }

  Dataset conflict;
  conflict.config = config;
  conflict.split = Split::ConflictTest;
  {
    Rng rng(config.seed, Stream::EvalConflict);
    conflict.examples.resize(config.n_test);
    for (std::size_t i = 0; i < config.n_test; ++i) {
      Example& ex = conflict.examples[i];
      ex.y = static_cast<int>(i % classes);
      ex.b = draw_other_class(ex.y, config.num_classes, rng);
      ex.is_conflicting = true;
      fill_features(ex, config, pattern, rng);
    }
    rng.shuffle(std::span(conflict.examples));
  }
  unbiased.config.beta = 0.0;
  conflict.config.beta = 0.0;
  return {std::move(unbiased), std::move(conflict)};
}

std::vector<std::uint8_t> serialize(const Dataset& d) {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  const DatasetConfig& c = d.config;
  w.u32(static_cast<std::uint32_t>(c.num_classes));
  w.u64(c.n_train);
  w.u64(c.n_test);
  w.u32(static_cast<std::uint32_t>(c.dim_robust));
  w.u32(static_cast<std::uint32_t>(c.dim_bias));
  w.f64(c.robust_scale);
  w.f64(c.robust_noise);
  w.f64(c.bias_scale);
  w.f64(c.bias_noise);
  w.f64(c.alpha);
  w.f64(c.beta);
  w.u64(c.seed);
  w.u8(static_cast<std::uint8_t>(d.split));
  w.u64(d.examples.size());
  const std::size_t dim = d.examples.empty() ? 0 : d.examples.front().x.size();
  w.u32(static_cast<std::uint32_t>(dim));
  for (const Example& ex : d.examples) {
    if (ex.x.size() != dim) throw Error(ErrorKind::ShapeMismatch, "ragged feature vectors");
    for (double v : ex.x) w.f64(v);
    w.u32(static_cast<std::uint32_t>(ex.y));
    w.u32(static_cast<std::uint32_t>(ex.b));
    w.u8(static_cast<std::uint8_t>((ex.is_conflicting ? 1 : 0) | (ex.is_noisy ? 2 : 0)));
  }
  return w.finish();
}

void save(const Dataset& d, const std::filesystem::path& path) {
  const auto bytes = serialize(d);
  binio::write_all(path, bytes.data(), bytes.size());
}

Dataset load(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::from_file(path);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw Error(ErrorKind::FormatError, "bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorKind::FormatError, "unsupported dataset version " + std::to_string(version));
  }
  Dataset d;
  DatasetConfig& c = d.config;
  c.num_classes = static_cast<int>(r.u32());
  c.n_train = r.u64();
  c.n_test = r.u64();
  c.dim_robust = static_cast<int>(r.u32());
  c.dim_bias = static_cast<int>(r.u32());
  c.robust_scale = r.f64();
  c.robust_noise = r.f64();
  c.bias_scale = r.f64();
  c.bias_noise = r.f64();
  c.alpha = r.f64();
  c.beta = r.f64();
  c.seed = r.u64();
  const std::uint8_t split = r.u8();
  if (split > 2) throw Error(ErrorKind::FormatError, "bad split tag");
  d.split = static_cast<Split>(split);
  const std::uint64_t n = r.u64();
  const std::uint32_t dim = r.u32();
  d.examples.resize(n);
  for (Example& ex : d.examples) {
    ex.x.resize(dim);
    for (double& v : ex.x) v = r.f64();
    ex.y = static_cast<int>(r.u32());
    ex.b = static_cast<int>(r.u32());
    const std::uint8_t flags = r.u8();
    ex.is_conflicting = (flags & 1) != 0;
    ex.is_noisy = (flags & 2) != 0;
  }
  if (!r.at_end()) throw Error(ErrorKind::FormatError, "trailing bytes after records");
  return d;
}

void export_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  const std::size_t dim = d.examples.empty() ? 0 : d.examples.front().x.size();
  for (std::size_t j = 0; j < dim; ++j) out << 'x' << j << ',';
  out << "y,b,is_conflicting,is_noisy\n";
  char buf[32];
  for (const Example& ex : d.examples) {
    for (double v : ex.x) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << ex.y << ',' << ex.b << ',' << (ex.is_conflicting ? 1 : 0) << ','
        << (ex.is_noisy ? 1 : 0) << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

Matrix features(const Dataset& d) {
  std::vector<std::size_t> all(d.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return gather_features(d, all);
}

Matrix gather_features(const Dataset& d, std::span<const std::size_t> indices) {
  const std::size_t dim = d.examples.empty() ? 0 : d.examples.front().x.size();
  Matrix m(indices.size(), dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& x = d.examples[indices[r]].x;
    std::copy(x.begin(), x.end(), m.row(r).begin());
  }
  return m;
}

}  // namespace selecmix
