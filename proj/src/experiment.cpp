#include "selecmix/experiment.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "selecmix/binio.hpp"
#include "selecmix/error.hpp"
#include "selecmix/evalmetrics.hpp"

namespace selecmix {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kTrainFile = "train.smxd";
constexpr const char* kUnbiasedFile = "unbiased-test.smxd";
constexpr const char* kConflictFile = "conflict-test.smxd";
constexpr std::size_t kDefaultTracePairs = 10000;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

/// Strict reader for one JSON object: every key must be consumed.
class Fields {
 public:
  Fields(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) bad(ctx_ + " must be an object");
  }

  const json* find(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  void count(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) bad(where(key) + " must be a nonnegative integer");
      out = v->get<std::size_t>();
    }
  }

  void integer(const char* key, int& out) {
    std::size_t tmp = static_cast<std::size_t>(out);
    count(key, tmp);
    if (tmp > static_cast<std::size_t>(INT_MAX)) bad(where(key) + " is too large");
    out = static_cast<int>(tmp);
  }

  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) bad(where(key) + " must be a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) bad(where(key) + " must be a number");
      out = v->get<double>();
    }
  }

  void flag(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) bad(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }

  void text(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) bad(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  template <class T, class Parse>
  void named(const char* key, T& out, Parse parse, const char* choices) {
    std::string s;
    if (find(key) == nullptr) return;
    text(key, s);
    auto parsed = parse(s);
    if (!parsed) bad(where(key) + ": unknown value '" + s + "' (expected " + choices + ")");
    out = *parsed;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.contains(it.key())) bad("unknown key '" + where(it.key().c_str()) + "'");
    }
  }

  std::string where(const char* key) const { return ctx_.empty() ? key : ctx_ + "." + key; }

 private:
  const json& j_;
  std::string ctx_;
  std::set<std::string> used_;
};

constexpr const char* kStrategyChoices =
    "vanilla, mixup, selecmix-{A,B,AB}, gt-selecmix-{A,B,AB}, lisa-{A,B,AB}";

DatasetConfig read_dataset(const json& j) {
  DatasetConfig d;
  Fields f(j, "dataset");
  f.integer("num_classes", d.num_classes);
  f.count("n_train", d.n_train);
  f.count("n_test", d.n_test);
  f.integer("dim_robust", d.dim_robust);
  f.integer("dim_bias", d.dim_bias);
  f.real("robust_scale", d.robust_scale);
  f.real("robust_noise", d.robust_noise);
  f.real("bias_scale", d.bias_scale);
  f.real("bias_noise", d.bias_noise);
  f.real("alpha", d.alpha);
  f.real("beta", d.beta);
  f.u64("seed", d.seed);
  f.finish();
  return d;
}

TrainConfig read_train(const json& j) {
  TrainConfig t;
  Fields f(j, "train");
  f.count("epochs", t.epochs);
  f.count("batch_size", t.batch_size);
  f.u64("seed", t.seed);
  f.named("strategy", t.strategy, parse_strategy, kStrategyChoices);
  f.named("aux_loss", t.aux_loss, parse_aux_loss, "gsc, sc, gce");
  f.named("aux_schedule", t.aux_schedule, parse_aux_schedule, "simultaneous, pretrain");
  f.count("pretrain_epochs", t.pretrain_epochs);
  f.named("similarity", t.similarity, parse_similarity_kind,
          "gsc-cosine, gce-cosine, gce-l2, gce-kl, ground-truth, constant");
  f.real("lambda_base", t.lambda_base);
  f.real("lambda_ours", t.lambda_ours);
  f.real("tau", t.tau);
  f.real("q", t.q);
  f.real("lr_debiased", t.lr_debiased);
  f.real("lr_aux", t.lr_aux);
  f.count("hidden_width", t.hidden_width);
  f.count("embed_dim", t.embed_dim);
  f.flag("train_aux_always", t.train_aux_always);
  f.count("trace_pairs", t.trace_pairs);
  f.flag("final_probe", t.final_probe);
  f.finish();
  return t;
}

std::vector<double> read_reals(const json& v, const std::string& ctx) {
  if (!v.is_array()) bad(ctx + " must be an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) bad(ctx + " entries must be numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

SweepGrid read_sweep(const json& j) {
  SweepGrid g;
  Fields f(j, "sweep");
  if (const json* v = f.find("alpha")) g.alpha = read_reals(*v, "sweep.alpha");
  if (const json* v = f.find("beta")) g.beta = read_reals(*v, "sweep.beta");
  if (const json* v = f.find("strategy")) {
    if (!v->is_array()) bad("sweep.strategy must be an array");
    for (const auto& e : *v) {
      if (!e.is_string()) bad("sweep.strategy entries must be strings");
      auto s = parse_strategy(e.get<std::string>());
      if (!s) bad("sweep.strategy: unknown value '" + e.get<std::string>() + "' (expected " + kStrategyChoices + ")");
      g.strategy.push_back(*s);
    }
  }
  f.finish();
  return g;
}

ojson dataset_json(const DatasetConfig& d) {
  ojson j;
  j["num_classes"] = d.num_classes;
  j["n_train"] = d.n_train;
  j["n_test"] = d.n_test;
  j["dim_robust"] = d.dim_robust;
  j["dim_bias"] = d.dim_bias;
  j["robust_scale"] = d.robust_scale;
  j["robust_noise"] = d.robust_noise;
  j["bias_scale"] = d.bias_scale;
  j["bias_noise"] = d.bias_noise;
  j["alpha"] = d.alpha;
  j["beta"] = d.beta;
  j["seed"] = d.seed;
  return j;
}

ojson train_json(const TrainConfig& t) {
  ojson j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["seed"] = t.seed;
  j["strategy"] = to_string(t.strategy);
  j["aux_loss"] = std::string(to_string(t.aux_loss));
  j["aux_schedule"] = std::string(to_string(t.aux_schedule));
  j["pretrain_epochs"] = t.pretrain_epochs;
  j["similarity"] = std::string(to_string(t.similarity));
  j["lambda_base"] = t.lambda_base;
  j["lambda_ours"] = t.lambda_ours;
  j["tau"] = t.tau;
  j["q"] = t.q;
  j["lr_debiased"] = t.lr_debiased;
  j["lr_aux"] = t.lr_aux;
  j["hidden_width"] = t.hidden_width;
  j["embed_dim"] = t.embed_dim;
  j["train_aux_always"] = t.train_aux_always;
  j["trace_pairs"] = t.trace_pairs;
  j["final_probe"] = t.final_probe;
  return j;
}

void write_text(const fs::path& path, const std::string& content) {
  binio::write_all(path, content.data(), content.size());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// runs/<timestamp>-<hash>, with a numeric suffix if that name is taken.
fs::path new_run_dir(const fs::path& root, const std::string& echo) {
  const std::string base = utc_stamp() + "-" + hex64(binio::fnv1a(echo.data(), echo.size())).substr(0, 8);
  fs::path dir = root / "runs" / base;
  for (int k = 1; fs::exists(dir); ++k) dir = root / "runs" / (base + "-" + std::to_string(k));
  make_dirs(dir);
  write_text(dir / "spec.echo", echo);
  return dir;
}

class Log {
 public:
  explicit Log(bool quiet) : quiet_(quiet) {}
  void operator()(const std::string& line) {
    if (quiet_) return;
    std::lock_guard lock(mu_);
    std::clog << line << '\n';
  }

 private:
  bool quiet_;
  std::mutex mu_;
};

ExperimentSpec effective(const ExperimentSpec& spec, const RunOptions& opt) {
  ExperimentSpec e = spec;
  if (opt.seeds) e.seeds = *opt.seeds;
  e.validate();
  return e;
}

std::string seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

Dataset load_split(const fs::path& path, Split expected) {
  Dataset d = load(path);
  if (d.split != expected) {
    throw Error(ErrorKind::FormatError, path.string() + " holds split " + std::string(to_string(d.split)));
  }
  return d;
}

}  // namespace

void ExperimentSpec::validate() const {
  dataset.validate();
  train.validate();
  if (seeds.empty()) bad("seeds must not be empty");
  for (double a : sweep.alpha) {
    DatasetConfig d = dataset;
    d.alpha = a;
    d.validate();
  }
  for (double b : sweep.beta) {
    DatasetConfig d = dataset;
    d.beta = b;
    d.validate();
  }
  for (const Strategy& s : sweep.strategy) {
    TrainConfig t = train;
    t.strategy = s;
    t.validate();
  }
  if (!data_dir.empty() && (!sweep.alpha.empty() || !sweep.beta.empty())) {
    bad("sweep over alpha/beta needs generated data; drop data_dir");
  }
}

ExperimentSpec parse_spec(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    bad(std::string("spec is not valid JSON: ") + e.what());
  }
  ExperimentSpec spec;
  Fields f(j, "");
  if (const json* v = f.find("dataset")) spec.dataset = read_dataset(*v);
  if (const json* v = f.find("train")) spec.train = read_train(*v);
  if (const json* v = f.find("seeds")) {
    if (!v->is_array()) bad("seeds must be an array");
    spec.seeds.clear();
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) bad("seeds entries must be nonnegative integers");
      spec.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  f.text("output_dir", spec.output_dir);
  f.text("data_dir", spec.data_dir);
  if (const json* v = f.find("sweep")) spec.sweep = read_sweep(*v);
  f.finish();
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const fs::path& path) {
  const auto bytes = binio::read_all(path);
  return parse_spec(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string spec_to_json(const ExperimentSpec& spec) {
  ojson j;
  j["dataset"] = dataset_json(spec.dataset);
  j["train"] = train_json(spec.train);
  j["seeds"] = spec.seeds;
  j["output_dir"] = spec.output_dir;
  j["data_dir"] = spec.data_dir;
  ojson sweep;
  sweep["alpha"] = spec.sweep.alpha;
  sweep["beta"] = spec.sweep.beta;
  ojson strategies = ojson::array();
  for (const auto& s : spec.sweep.strategy) strategies.push_back(to_string(s));
  sweep["strategy"] = strategies;
  j["sweep"] = sweep;
  return j.dump(2) + "\n";
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  auto number = [&](std::string_view s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      bad("bad seed '" + std::string(s) + "' in --seeds");
    }
    return v;
  };
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      out.push_back(number(item));
    } else {
      const std::uint64_t lo = number(item.substr(0, dash)), hi = number(item.substr(dash + 1));
      if (hi < lo) bad("empty seed range '" + std::string(item) + "'");
      for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    }
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) bad("--seeds is empty");
  return out;
}

fs::path resolve_output_root(const ExperimentSpec& spec, const RunOptions& opt) {
  if (opt.out) return *opt.out;
  if (!spec.output_dir.empty()) return spec.output_dir;
  if (const char* env = std::getenv("SELECMIX_LAB_OUT"); env != nullptr && *env != '\0') return env;
  return "selecmix_out";
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_mean_std(std::span<const double> values) {
  if (values.empty()) return "";
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return format_double(mean) + "±" + format_double(sd);
}

SeedData make_seed_data(const ExperimentSpec& spec, std::uint64_t seed) {
  if (!spec.data_dir.empty()) {
    const fs::path dir = spec.data_dir;
    return {load_split(dir / kTrainFile, Split::Train), load_split(dir / kUnbiasedFile, Split::UnbiasedTest),
            load_split(dir / kConflictFile, Split::ConflictTest)};
  }
  DatasetConfig dc = spec.dataset;
  dc.seed = seed;
  auto [unbiased, conflict] = generate_eval(dc);
  return {generate(dc), std::move(unbiased), std::move(conflict)};
}

std::string metrics_csv(const RunHistory& h) {
  std::ostringstream out;
  out << "epoch,metric,value\n";
  auto row = [&](std::size_t epoch, const char* metric, double v) {
    out << epoch << ',' << metric << ',' << format_double(v) << '\n';
  };
  for (const EpochRecord& e : h.epochs) {
    row(e.epoch, "unbiased_acc", e.unbiased_acc);
    row(e.epoch, "conflict_acc", e.conflict_acc);
    row(e.epoch, "train_loss", e.train_loss);
    row(e.epoch, "aux_loss", e.aux_loss);
    if (e.recall_positive) row(e.epoch, "recall_positive", *e.recall_positive);
    if (e.recall_negative) row(e.epoch, "recall_negative", *e.recall_negative);
    if (e.recall) row(e.epoch, "recall", *e.recall);
    if (e.pair_stats) {
      row(e.epoch, "pos", e.pair_stats->positives);
      row(e.epoch, "neg", e.pair_stats->negatives);
      row(e.epoch, "contra_pos", e.pair_stats->contradicting_positives);
      row(e.epoch, "contra_neg", e.pair_stats->contradicting_negatives);
    }
  }
  if (h.probe_acc) row(h.epochs.empty() ? 0 : h.epochs.back().epoch, "probe_acc", *h.probe_acc);
  return out.str();
}

std::string pairs_csv(const RunHistory& h, const Dataset& train) {
  std::ostringstream out;
  out << "epoch,query,selected,lambda,branch,query_is_conflicting,selected_is_conflicting\n";
  for (const PairLogEntry& p : h.final_pairs) {
    out << p.epoch << ',' << p.query << ',' << p.selected << ',' << format_double(p.lambda) << ','
        << to_string(p.branch) << ',' << (train.examples[p.query].is_conflicting ? 1 : 0) << ','
        << (train.examples[p.selected].is_conflicting ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string history_json(const RunHistory& h, const DatasetConfig& data, std::string_view status) {
  ojson j;
  j["status"] = std::string(status);
  j["dataset"] = dataset_json(data);
  j["train"] = train_json(h.config);
  j["wall_time_s"] = h.wall_time_s;
  j["best_unbiased_acc"] = h.best_unbiased_acc();
  j["final_unbiased_acc"] = h.final_unbiased_acc();
  j["final_conflict_acc"] = h.final_conflict_acc();
  j["probe_acc"] = h.probe_acc ? ojson(*h.probe_acc) : ojson(nullptr);
  ojson epochs = ojson::array();
  for (const EpochRecord& e : h.epochs) {
    ojson r;
    r["epoch"] = e.epoch;
    r["unbiased_acc"] = e.unbiased_acc;
    r["conflict_acc"] = e.conflict_acc;
    r["train_loss"] = e.train_loss;
    r["aux_loss"] = e.aux_loss;
    if (e.recall_positive) r["recall_positive"] = *e.recall_positive;
    if (e.recall_negative) r["recall_negative"] = *e.recall_negative;
    if (e.recall) r["recall"] = *e.recall;
    if (e.pair_stats) {
      r["pair_stats"] = {{"pos", e.pair_stats->positives},
                         {"neg", e.pair_stats->negatives},
                         {"contra_pos", e.pair_stats->contradicting_positives},
                         {"contra_neg", e.pair_stats->contradicting_negatives}};
    }
    epochs.push_back(r);
  }
  j["epochs"] = epochs;
  return j.dump(2) + "\n";
}

void write_run_artifacts(const fs::path& dir, const RunHistory& h, const Dataset& train,
                         std::string_view status) {
  make_dirs(dir / "checkpoints");
  write_text(dir / "history.json", history_json(h, train.config, status));
  write_text(dir / "metrics.csv", metrics_csv(h));
  write_text(dir / "pairs.csv", pairs_csv(h, train));
  if (!h.debiased.layers.empty()) save_checkpoint(h.debiased, dir / "checkpoints" / "debiased.smxp");
  if (!h.auxiliary.layers.empty()) save_checkpoint(h.auxiliary, dir / "checkpoints" / "auxiliary.smxp");
}

std::vector<PairCategoryStats> trace_similarity(const TrainConfig& config, const Dataset& train,
                                                std::size_t n_pairs) {
  if (config.aux_loss == AuxLoss::Gce) bad("trace-sim needs aux_loss sc or gsc");
  std::vector<PairCategoryStats> rows;
  pretrain_auxiliary(config, train, config.epochs, [&](std::size_t, const MlpParams& aux) {
    rows.push_back(pair_similarity_stats(aux, train, n_pairs, config.seed));
  });
  return rows;
}

std::string trace_csv(std::span<const PairCategoryStats> rows) {
  std::ostringstream out;
  out << "epoch,pos,neg,contra_pos,contra_neg\n";
  for (std::size_t e = 0; e < rows.size(); ++e) {
    out << e << ',' << format_double(rows[e].positives) << ',' << format_double(rows[e].negatives) << ','
        << format_double(rows[e].contradicting_positives) << ','
        << format_double(rows[e].contradicting_negatives) << '\n';
  }
  return out.str();
}

fs::path cmd_gen_data(const ExperimentSpec& spec, const RunOptions& opt) {
  spec.validate();
  Log log(opt.quiet);
  const fs::path dir = resolve_output_root(spec, opt);
  make_dirs(dir);
  const Dataset train = generate(spec.dataset);
  const auto [unbiased, conflict] = generate_eval(spec.dataset);

  ojson files = ojson::array();
  for (auto [name, d] : {std::pair{kTrainFile, &train}, std::pair{kUnbiasedFile, &unbiased},
                         std::pair{kConflictFile, &conflict}}) {
    const auto bytes = serialize(*d);
    binio::write_all(dir / name, bytes.data(), bytes.size());
    ojson f;
    f["file"] = name;
    f["split"] = std::string(to_string(d->split));
    f["examples"] = d->size();
    f["conflicting"] = d->count_conflicting();
    f["noisy"] = d->count_noisy();
    f["fnv1a64"] = hex64(binio::fnv1a(bytes.data(), bytes.size()));
    files.push_back(f);
    log(std::string(name) + ": " + std::to_string(d->size()) + " examples, " +
        std::to_string(d->count_conflicting()) + " conflicting");
  }
  ojson manifest;
  manifest["dataset"] = dataset_json(spec.dataset);
  manifest["files"] = files;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return dir;
}

fs::path cmd_train(const ExperimentSpec& spec_in, const RunOptions& opt) {
  const ExperimentSpec spec = effective(spec_in, opt);
  Log log(opt.quiet);
  const fs::path run_dir = new_run_dir(resolve_output_root(spec, opt), spec_to_json(spec));
  std::string diverged;
  for (std::uint64_t seed : spec.seeds) {
    const SeedData data = make_seed_data(spec, seed);
    TrainConfig tc = spec.train;
    tc.seed = seed;
    log("seed " + std::to_string(seed) + ": " + to_string(tc.strategy) + ", " + std::to_string(tc.epochs) +
        " epochs");
    try {
      const RunHistory h = train(tc, {&data.train, &data.unbiased, &data.conflict});
      write_run_artifacts(run_dir / seed_dir(seed), h, data.train, "ok");
      log("seed " + std::to_string(seed) + ": best unbiased " + pct(h.best_unbiased_acc()) + ", final " +
          pct(h.final_unbiased_acc()));
    } catch (const DivergedError& e) {
      write_run_artifacts(run_dir / seed_dir(seed), e.partial(), data.train, "diverged");
      log("seed " + std::to_string(seed) + ": diverged: " + e.what());
      if (diverged.empty()) diverged = "seed " + std::to_string(seed) + ": " + e.what();
    }
  }
  if (!diverged.empty()) {
    throw Error(ErrorKind::Diverged, diverged + " (partial artifacts in " + run_dir.string() + ")");
  }
  return run_dir;
}

fs::path cmd_sweep(const ExperimentSpec& spec_in, const RunOptions& opt) {
  const ExperimentSpec spec = effective(spec_in, opt);
  Log log(opt.quiet);

  struct Cell {
    Strategy strategy;
    double alpha, beta;
    std::uint64_t seed;
    std::string status;
    RunHistory history;
  };
  const auto strategies = spec.sweep.strategy.empty() ? std::vector{spec.train.strategy} : spec.sweep.strategy;
  const auto alphas = spec.sweep.alpha.empty() ? std::vector{spec.dataset.alpha} : spec.sweep.alpha;
  const auto betas = spec.sweep.beta.empty() ? std::vector{spec.dataset.beta} : spec.sweep.beta;
  std::vector<Cell> cells;
  for (const auto& s : strategies)
    for (double a : alphas)
      for (double b : betas)
        for (std::uint64_t seed : spec.seeds) cells.push_back({s, a, b, seed, "", {}});

  const fs::path run_dir = new_run_dir(resolve_output_root(spec, opt), spec_to_json(spec));
  auto cell_name = [](const Cell& c) {
    return to_string(c.strategy) + "_a" + format_double(c.alpha) + "_b" + format_double(c.beta) + "_s" +
           std::to_string(c.seed);
  };
  auto run_cell = [&](Cell& c) {
    ExperimentSpec cs = spec;
    cs.train.strategy = c.strategy;
    cs.dataset.alpha = c.alpha;
    cs.dataset.beta = c.beta;
    TrainConfig tc = cs.train;
    tc.seed = c.seed;
    const fs::path dir = run_dir / "cells" / cell_name(c);
    try {
      const SeedData data = make_seed_data(cs, c.seed);
      try {
        c.history = train(tc, {&data.train, &data.unbiased, &data.conflict});
        c.status = "ok";
      } catch (const DivergedError& e) {
        c.history = e.partial();
        c.status = "diverged";
      }
      write_run_artifacts(dir, c.history, data.train, c.status);
    } catch (const Error& e) {
      c.status = "error:" + std::string(to_string(e.kind()));
      log(cell_name(c) + ": " + e.what());
    } catch (const std::exception& e) {
      c.status = "error";
      log(cell_name(c) + ": " + e.what());
    }
    log(cell_name(c) + ": " + c.status +
        (c.status == "ok" ? ", best unbiased " + pct(c.history.best_unbiased_acc()) : std::string()));
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.jobs, cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  std::ostringstream csv;
  csv << "kind,strategy,alpha,beta,seed,status,best_unbiased_acc,final_unbiased_acc,conflict_acc,probe_acc,"
         "recall\n";
  auto last_recall = [](const RunHistory& h) -> std::optional<double> {
    return h.epochs.empty() ? std::nullopt : h.epochs.back().recall;
  };
  auto opt_cell = [](std::optional<double> v) { return v ? format_double(*v) : std::string(); };
  for (const Cell& c : cells) {
    const bool ok = c.status == "ok";
    csv << "run," << to_string(c.strategy) << ',' << format_double(c.alpha) << ',' << format_double(c.beta)
        << ',' << c.seed << ',' << c.status << ',';
    if (ok) {
      csv << format_double(c.history.best_unbiased_acc()) << ',' << format_double(c.history.final_unbiased_acc())
          << ',' << format_double(c.history.final_conflict_acc()) << ',' << opt_cell(c.history.probe_acc) << ','
          << opt_cell(last_recall(c.history));
    } else {
      csv << ",,,,";
    }
    csv << '\n';
  }
  // One summary row per (strategy, alpha, beta), over the cells that finished.
  for (const auto& s : strategies) {
    for (double a : alphas) {
      for (double b : betas) {
        std::vector<double> best, fin, conf, probe, recall;
        for (const Cell& c : cells) {
          if (!(c.strategy == s && c.alpha == a && c.beta == b) || c.status != "ok") continue;
          best.push_back(c.history.best_unbiased_acc());
          fin.push_back(c.history.final_unbiased_acc());
          conf.push_back(c.history.final_conflict_acc());
          if (c.history.probe_acc) probe.push_back(*c.history.probe_acc);
          if (auto r = last_recall(c.history)) recall.push_back(*r);
        }
        csv << "summary," << to_string(s) << ',' << format_double(a) << ',' << format_double(b) << ",,n="
            << best.size() << ',' << format_mean_std(best) << ',' << format_mean_std(fin) << ','
            << format_mean_std(conf) << ',' << format_mean_std(probe) << ',' << format_mean_std(recall) << '\n';
      }
    }
  }
  write_text(run_dir / "sweep.csv", csv.str());
  return run_dir;
}

fs::path cmd_trace_sim(const ExperimentSpec& spec_in, const RunOptions& opt) {
  const ExperimentSpec spec = effective(spec_in, opt);
  if (spec.train.aux_loss == AuxLoss::Gce) bad("trace-sim needs aux_loss sc or gsc");
  Log log(opt.quiet);
  const fs::path run_dir = new_run_dir(resolve_output_root(spec, opt), spec_to_json(spec));
  for (std::uint64_t seed : spec.seeds) {
    const SeedData data = make_seed_data(spec, seed);
    TrainConfig tc = spec.train;
    tc.seed = seed;
    const std::size_t n_pairs = tc.trace_pairs ? tc.trace_pairs : kDefaultTracePairs;
    const auto rows = trace_similarity(tc, data.train, n_pairs);
    make_dirs(run_dir / seed_dir(seed));
    write_text(run_dir / seed_dir(seed) / "trace.csv", trace_csv(rows));
    const auto& last = rows.back();
    log("seed " + std::to_string(seed) + ": final contra_pos " + format_double(last.contradicting_positives) +
        ", contra_neg " + format_double(last.contradicting_negatives));
  }
  return run_dir;
}

fs::path cmd_eval(const fs::path& run_dir, const RunOptions& opt) {
  const ExperimentSpec spec = load_spec(run_dir / "spec.echo");
  Log log(opt.quiet);
  std::ostringstream csv;
  csv << "seed,unbiased_acc,conflict_acc,probe_acc\n";
  for (std::uint64_t seed : spec.seeds) {
    const fs::path ckpt = run_dir / seed_dir(seed) / "checkpoints";
    const MlpParams debiased = load_checkpoint(ckpt / "debiased.smxp");
    const MlpParams aux = load_checkpoint(ckpt / "auxiliary.smxp");
    const SeedData data = make_seed_data(spec, seed);
    const double unb = accuracy(debiased, data.unbiased);
    const double con = accuracy(debiased, data.conflict);
    const double probe = bias_probe(aux, data.unbiased, data.conflict);
    csv << seed << ',' << format_double(unb) << ',' << format_double(con) << ',' << format_double(probe) << '\n';
    log("seed " + std::to_string(seed) + ": unbiased " + pct(unb) + ", conflict " + pct(con) + ", probe " +
        pct(probe));
  }
  const fs::path out = run_dir / "eval.csv";
  write_text(out, csv.str());
  return out;
}

}  // namespace selecmix
