#include "selecmix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace selecmix {

namespace {

std::optional<MixMode> parse_mode(std::string_view s) noexcept {
  if (s == "A") return MixMode::A;
  if (s == "B") return MixMode::B;
  if (s == "AB") return MixMode::AB;
  return std::nullopt;
}

MixedBatch passthrough_batch(const Batch& batch) {
  MixedBatch mb;
  mb.inputs = batch.x;
  mb.labels = SoftLabelBatch::one_hot(batch.y, batch.num_classes);
  mb.pairs.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) mb.pairs[i] = {i, i, 1.0, Branch::Passthrough};
  return mb;
}

/// Accumulates weight * dCE/dtheta for one batch; returns weight * loss.
double accumulate_ce(const MlpParams& net, const Matrix& x, const SoftLabelBatch& labels, double weight,
                     MlpGrads& acc) {
  const ForwardResult fw = forward_classifier(net, x);
  const LossResult loss = ce(fw.output, labels);
  add_scaled(acc, backward(net, fw.cache, loss.grad_input), weight);
  return weight * loss.value;
}

void fill_recall(EpochRecord& rec, const std::vector<PairLogEntry>& pairs, const Dataset& train) {
  std::size_t selected = 0, contradicting = 0;
  for (Branch branch : {Branch::Positive, Branch::Negative}) {
    const bool any = std::any_of(pairs.begin(), pairs.end(),
                                 [&](const PairLogEntry& e) { return e.branch == branch; });
    if (!any) continue;
    const RecallReport r = pair_selection_recall(pairs, train, branch);
    (branch == Branch::Positive ? rec.recall_positive : rec.recall_negative) = r.recall;
    selected += r.selected;
    contradicting += r.contradicting;
  }
  if (selected > 0) rec.recall = static_cast<double>(contradicting) / static_cast<double>(selected);
}

}  // namespace

std::string to_string(const Strategy& s) {
  const std::string mode(to_string(s.mode));
  switch (s.kind) {
    case StrategyKind::Vanilla: return "vanilla";
    case StrategyKind::Mixup: return "mixup";
    case StrategyKind::SelecMix: return "selecmix-" + mode;
    case StrategyKind::GtSelecMix: return "gt-selecmix-" + mode;
    case StrategyKind::Lisa: return "lisa-" + mode;
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view s) noexcept {
  if (s == "vanilla") return Strategy{StrategyKind::Vanilla, MixMode::AB};
  if (s == "mixup") return Strategy{StrategyKind::Mixup, MixMode::AB};
  const std::pair<std::string_view, StrategyKind> prefixes[] = {
      {"selecmix-", StrategyKind::SelecMix},
      {"gt-selecmix-", StrategyKind::GtSelecMix},
      {"lisa-", StrategyKind::Lisa},
  };
  for (auto [prefix, kind] : prefixes) {
    if (s.starts_with(prefix)) {
      if (auto mode = parse_mode(s.substr(prefix.size()))) return Strategy{kind, *mode};
    }
  }
  return std::nullopt;
}

std::string_view to_string(AuxLoss a) noexcept {
  switch (a) {
    case AuxLoss::Gsc: return "gsc";
    case AuxLoss::Sc: return "sc";
    case AuxLoss::Gce: return "gce";
  }
  return "unknown";
}

std::optional<AuxLoss> parse_aux_loss(std::string_view s) noexcept {
  if (s == "gsc") return AuxLoss::Gsc;
  if (s == "sc") return AuxLoss::Sc;
  if (s == "gce") return AuxLoss::Gce;
  return std::nullopt;
}

std::string_view to_string(AuxSchedule s) noexcept {
  return s == AuxSchedule::Simultaneous ? "simultaneous" : "pretrain";
}

std::optional<AuxSchedule> parse_aux_schedule(std::string_view s) noexcept {
  if (s == "simultaneous") return AuxSchedule::Simultaneous;
  if (s == "pretrain") return AuxSchedule::Pretrain;
  return std::nullopt;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (batch_size < 2) fail("batch_size must be at least 2");
  if (!(lambda_base >= 0.0) || !(lambda_ours >= 0.0)) fail("lambda_base and lambda_ours must be nonnegative");
  if (lambda_base == 0.0 && lambda_ours == 0.0) fail("lambda_base and lambda_ours cannot both be 0");
  if (!(tau > 0.0)) fail("tau must be positive");
  if (!(q > 0.0 && q <= 1.0)) fail("q must lie in (0, 1]");
  if (!(lr_debiased > 0.0) || !(lr_aux > 0.0)) fail("learning rates must be positive");
  if (hidden_width == 0 || embed_dim == 0) fail("network widths must be positive");
  if (strategy.kind == StrategyKind::SelecMix) {
    const bool contrastive = aux_loss != AuxLoss::Gce;
    switch (similarity) {
      case SimilarityKind::GscCosine:
        if (!contrastive) fail("gsc-cosine similarity needs aux_loss gsc or sc");
        break;
      case SimilarityKind::GceCosine:
      case SimilarityKind::GceL2:
      case SimilarityKind::GceKl:
        if (contrastive) fail(std::string(to_string(similarity)) + " similarity needs aux_loss gce");
        break;
      case SimilarityKind::GroundTruth:
      case SimilarityKind::Constant:
        break;
    }
  }
}

double RunHistory::best_unbiased_acc() const noexcept {
  double best = 0.0;
  for (const auto& e : epochs) best = std::max(best, e.unbiased_acc);
  return best;
}

double RunHistory::final_unbiased_acc() const noexcept {
  return epochs.empty() ? 0.0 : epochs.back().unbiased_acc;
}

double RunHistory::final_conflict_acc() const noexcept {
  return epochs.empty() ? 0.0 : epochs.back().conflict_acc;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  Batch b;
  b.x = gather_features(d, indices);
  b.y.resize(indices.size());
  b.bias.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    b.y[r] = d.examples[indices[r]].y;
    b.bias[r] = d.examples[indices[r]].b;
  }
  b.num_classes = static_cast<std::size_t>(d.config.num_classes);
  return b;
}

MlpParams init_debiased(const TrainConfig& config, const Dataset& train) {
  Rng rng(config.seed, Stream::Init);
  return make_classifier(static_cast<std::size_t>(train.config.input_dim()), config.hidden_width,
                         static_cast<std::size_t>(train.config.num_classes), rng);
}

MlpParams init_auxiliary(const TrainConfig& config, const Dataset& train) {
  Rng rng(config.seed, Stream::AuxInit);
  const auto in = static_cast<std::size_t>(train.config.input_dim());
  if (config.aux_loss == AuxLoss::Gce) {
    return make_classifier(in, config.hidden_width, static_cast<std::size_t>(train.config.num_classes), rng);
  }
  return make_encoder(in, config.hidden_width, config.embed_dim, rng);
}

double auxiliary_step(const TrainConfig& config, MlpParams& aux, OptimizerState& opt, const Matrix& x,
                      std::span<const int> y) {
  LossResult loss;
  ForwardResult fw;
  if (aux.head == HeadKind::Projection) {
    fw = forward_encoder(aux, x);
    loss = config.aux_loss == AuxLoss::Gsc
               ? gsc(fw.output, y, config.tau, config.q, EmptyPositives::Skip)
               : sc(fw.output, y, config.tau, EmptyPositives::Skip);
  } else {
    fw = forward_classifier(aux, x);
    loss = gce(fw.output, y, config.q);
  }
  if (!std::isfinite(loss.value)) throw Error(ErrorKind::Diverged, "auxiliary loss is not finite");
  adam_step(opt, aux, backward(aux, fw.cache, loss.grad_input));
  return loss.value;
}

MlpParams pretrain_auxiliary(const TrainConfig& config, const Dataset& train) {
  return pretrain_auxiliary(config, train, config.pretrain_epochs);
}

MlpParams pretrain_auxiliary(const TrainConfig& config, const Dataset& train, std::size_t epochs,
                             const AuxEpochHook& hook) {
  config.validate();
  MlpParams aux = init_auxiliary(config, train);
  if (hook) hook(0, aux);
  OptimizerState opt = make_adam(aux, {.learning_rate = config.lr_aux});
  Rng order(config.seed, Stream::Pretrain);
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    order.shuffle(std::span(perm));
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t end = std::min(perm.size(), start + config.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> idx(perm.data() + start, end - start);
      const Batch b = make_batch(train, idx);
      auxiliary_step(config, aux, opt, b.x, b.y);
    }
    if (hook) hook(epoch, aux);
  }
  return aux;
}

MixedBatch build_mixed_batch(const TrainConfig& config, const Batch& batch, const MlpParams& aux,
                             Rng& rng) {
  switch (config.strategy.kind) {
    case StrategyKind::Vanilla: return passthrough_batch(batch);
    case StrategyKind::Mixup: return vanilla_mixup_batch(batch, rng);
    case StrategyKind::SelecMix:
      return selecmix_batch(batch, SimilarityBackend{config.similarity, &aux}, config.strategy.mode, rng);
    case StrategyKind::GtSelecMix: return gt_selecmix_batch(batch, config.strategy.mode, rng);
    case StrategyKind::Lisa: return lisa_batch(batch, config.strategy.mode, rng);
  }
  return passthrough_batch(batch);
}

RunHistory train(const TrainConfig& config, const TrainData& data) {
  config.validate();
  if (data.train == nullptr) throw Error(ErrorKind::InvalidConfig, "training split missing");
  const auto started = std::chrono::steady_clock::now();
  const Dataset& tr = *data.train;
  const auto classes = static_cast<std::size_t>(tr.config.num_classes);

  RunHistory h;
  h.config = config;
  h.debiased = init_debiased(config, tr);
  OptimizerState opt_theta = make_adam(h.debiased, {.learning_rate = config.lr_debiased});

  const bool aux_used = config.strategy.uses_auxiliary() || config.train_aux_always;
  h.auxiliary = config.aux_schedule == AuxSchedule::Pretrain ? pretrain_auxiliary(config, tr)
                                                             : init_auxiliary(config, tr);
  const bool aux_updates = aux_used && config.aux_schedule == AuxSchedule::Simultaneous;
  OptimizerState opt_phi = make_adam(h.auxiliary, {.learning_rate = config.lr_aux});

  Rng order(config.seed, Stream::Order);
  Rng mixing(config.seed, Stream::Mixing);
  std::vector<std::size_t> perm(tr.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const bool vanilla = config.strategy.kind == StrategyKind::Vanilla;

  auto diverged = [&](const std::string& why) {
    h.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return DivergedError(why, h);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order.shuffle(std::span(perm));
    std::vector<PairLogEntry> pairs;
    double loss_sum = 0.0, aux_sum = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t end = std::min(perm.size(), start + config.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> idx(perm.data() + start, end - start);
      const Batch batch = make_batch(tr, idx);

      MlpGrads grads = zero_grads_like(h.debiased);
      double loss = 0.0;
      try {
        if (vanilla) {
          // B~ = B, so both terms collapse onto the raw batch.
          loss = accumulate_ce(h.debiased, batch.x, SoftLabelBatch::one_hot(batch.y, classes),
                               config.lambda_base + config.lambda_ours, grads);
        } else {
          const MixedBatch mixed = build_mixed_batch(config, batch, h.auxiliary, mixing);
          if (config.lambda_base > 0.0) {
            loss += accumulate_ce(h.debiased, batch.x, SoftLabelBatch::one_hot(batch.y, classes),
                                  config.lambda_base, grads);
          }
          if (config.lambda_ours > 0.0) {
            loss += accumulate_ce(h.debiased, mixed.inputs, mixed.labels, config.lambda_ours, grads);
          }
          if (config.strategy.kind != StrategyKind::Mixup) {
            for (const PairRecord& rec : mixed.pairs) {
              pairs.push_back({epoch, idx[rec.query], idx[rec.selected], rec.lambda, rec.branch});
            }
          }
        }
        if (!std::isfinite(loss)) throw diverged("debiased loss is not finite at epoch " + std::to_string(epoch));
        adam_step(opt_theta, h.debiased, grads);
        if (aux_updates) aux_sum += auxiliary_step(config, h.auxiliary, opt_phi, batch.x, batch.y);
      } catch (const DivergedError&) {
        throw;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Diverged || e.kind() == ErrorKind::NonFinite) throw diverged(e.what());
        throw;
      }
      loss_sum += loss;
      ++n_batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0;
    rec.aux_loss = n_batches && aux_updates ? aux_sum / static_cast<double>(n_batches) : 0.0;
    if (data.unbiased_test != nullptr) rec.unbiased_acc = accuracy(h.debiased, *data.unbiased_test);
    if (data.conflict_test != nullptr) rec.conflict_acc = accuracy(h.debiased, *data.conflict_test);
    fill_recall(rec, pairs, tr);
    if (config.trace_pairs > 0 && h.auxiliary.head == HeadKind::Projection) {
      try {
        rec.pair_stats = pair_similarity_stats(h.auxiliary, tr, config.trace_pairs, config.seed);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::EmptyCategory) throw;
      }
    }
    h.epochs.push_back(rec);
    if (epoch == config.epochs) h.final_pairs = std::move(pairs);
  }

  if (config.final_probe && data.unbiased_test != nullptr && data.conflict_test != nullptr) {
    h.probe_acc = bias_probe(h.auxiliary, *data.unbiased_test, *data.conflict_test);
  }
  h.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return h;
}

}  // namespace selecmix
