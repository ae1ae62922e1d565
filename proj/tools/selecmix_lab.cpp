// selecmix_lab: data generation, training, sweeps and traces for the
// synthetic debiasing benchmark.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "selecmix/error.hpp"
#include "selecmix/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kIo = 4 };

int exit_code_for(selecmix::ErrorKind kind) {
  using selecmix::ErrorKind;
  switch (kind) {
    case ErrorKind::Diverged: return kDiverged;
    case ErrorKind::IoError:
    case ErrorKind::FormatError: return kIo;
    default: return kConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SelecMix debiasing lab on synthetic biased data"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, seeds_text, run_dir;
  std::size_t jobs = 1;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub, bool needs_spec) {
    auto* spec = sub->add_option("--spec", spec_path, "experiment spec (JSON)");
    if (needs_spec) spec->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output root (default: $SELECMIX_LAB_OUT or ./selecmix_out)");
    sub->add_option("--seeds", seeds_text, "seed list, e.g. 0,1,2 or 0-4 (overrides the spec)");
    sub->add_flag("--quiet", quiet, "no progress output");
  };

  auto* gen = app.add_subcommand("gen-data", "write train/unbiased-test/conflict-test files and a manifest");
  add_common(gen, true);
  auto* trn = app.add_subcommand("train", "train one run per seed");
  add_common(trn, true);
  auto* swp = app.add_subcommand("sweep", "train over the spec's alpha/beta/strategy grid");
  add_common(swp, true);
  swp->add_option("--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);
  auto* trc = app.add_subcommand("trace-sim", "per-epoch pair similarity of the auxiliary encoder");
  add_common(trc, true);
  auto* evl = app.add_subcommand("eval", "re-evaluate the checkpoints of a train run");
  evl->add_option("--run", run_dir, "run directory written by train")->required()->check(CLI::ExistingDirectory);
  evl->add_flag("--quiet", quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    selecmix::RunOptions opt;
    opt.jobs = jobs;
    opt.quiet = quiet;
    if (!out_dir.empty()) opt.out = out_dir;
    if (!seeds_text.empty()) opt.seeds = selecmix::parse_seed_list(seeds_text);

    std::filesystem::path result;
    if (evl->parsed()) {
      result = selecmix::cmd_eval(run_dir, opt);
    } else {
      const selecmix::ExperimentSpec spec = selecmix::load_spec(spec_path);
      if (gen->parsed()) result = selecmix::cmd_gen_data(spec, opt);
      else if (trn->parsed()) result = selecmix::cmd_train(spec, opt);
      else if (swp->parsed()) result = selecmix::cmd_sweep(spec, opt);
      else result = selecmix::cmd_trace_sim(spec, opt);
    }
    std::cout << result.string() << '\n';
    return kOk;
  } catch (const selecmix::Error& e) {
    std::cerr << "selecmix_lab: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "selecmix_lab: " << e.what() << '\n';
    return kFailure;
  }
}
