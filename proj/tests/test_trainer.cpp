#include <numeric>

#include "helpers.hpp"
#include "selecmix/trainer.hpp"

using namespace selecmix;

namespace {

struct Fixture {
  Dataset train, unbiased, conflict;
  Fixture() {
    DatasetConfig c;
    c.n_train = 300;
    c.n_test = 200;
    c.alpha = 0.05;
    c.seed = 1;
    train = generate(c);
    std::tie(unbiased, conflict) = generate_eval(c);
  }
  TrainData data() const { return {&train, &unbiased, &conflict}; }
};

TrainConfig small_config(const std::string& strategy) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.seed = 7;
  c.strategy = *parse_strategy(strategy);
  c.hidden_width = 16;
  c.embed_dim = 8;
  return c;
}

std::vector<std::size_t> shuffled_order(std::vector<std::size_t>& perm, Rng& rng) {
  rng.shuffle(std::span(perm));
  return perm;
}

/// The auxiliary model trained on raw batches in the run's batch order.
MlpParams reference_aux(const TrainConfig& c, const Dataset& train) {
  MlpParams aux = init_auxiliary(c, train);
  OptimizerState opt = make_adam(aux, {.learning_rate = c.lr_aux});
  Rng order(c.seed, Stream::Order);
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t e = 0; e < c.epochs; ++e) {
    shuffled_order(perm, order);
    for (std::size_t s = 0; s < perm.size(); s += c.batch_size) {
      const std::size_t end = std::min(perm.size(), s + c.batch_size);
      if (end - s < 2) continue;
      const Batch b = make_batch(train, std::span<const std::size_t>(perm.data() + s, end - s));
      auxiliary_step(c, aux, opt, b.x, b.y);
    }
  }
  return aux;
}

void check_same_history(const RunHistory& a, const RunHistory& b) {
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].unbiased_acc == b.epochs[e].unbiased_acc);
    CHECK(a.epochs[e].conflict_acc == b.epochs[e].conflict_acc);
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].aux_loss == b.epochs[e].aux_loss);
    CHECK(a.epochs[e].recall == b.epochs[e].recall);
  }
  CHECK(a.debiased == b.debiased);
  CHECK(a.auxiliary == b.auxiliary);
  REQUIRE(a.final_pairs.size() == b.final_pairs.size());
  for (std::size_t i = 0; i < a.final_pairs.size(); ++i) {
    CHECK(a.final_pairs[i].selected == b.final_pairs[i].selected);
    CHECK(a.final_pairs[i].lambda == b.final_pairs[i].lambda);
  }
}

}  // namespace

TEST_CASE("strategy names round trip") {
  for (const char* s : {"vanilla", "mixup", "selecmix-A", "selecmix-B", "selecmix-AB", "gt-selecmix-A",
                        "gt-selecmix-B", "gt-selecmix-AB", "lisa-A", "lisa-B", "lisa-AB"}) {
    const auto parsed = parse_strategy(s);
    REQUIRE(parsed.has_value());
    CHECK(to_string(*parsed) == s);
  }
  CHECK_FALSE(parse_strategy("selecmix").has_value());
  CHECK_FALSE(parse_strategy("selecmix-C").has_value());
  CHECK_FALSE(parse_strategy("Vanilla").has_value());
  CHECK(parse_aux_loss("gce") == AuxLoss::Gce);
  CHECK_FALSE(parse_aux_loss("ce").has_value());
  CHECK(parse_aux_schedule("pretrain") == AuxSchedule::Pretrain);
}

TEST_CASE("config validation") {
  auto rejects = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_KIND(c.validate(), ErrorKind::InvalidConfig);
  };
  CHECK_NOTHROW(TrainConfig{}.validate());
  rejects([](TrainConfig& c) { c.batch_size = 1; });
  rejects([](TrainConfig& c) { c.lambda_base = 0.0, c.lambda_ours = 0.0; });
  rejects([](TrainConfig& c) { c.lambda_base = -1.0; });
  rejects([](TrainConfig& c) { c.tau = 0.0; });
  rejects([](TrainConfig& c) { c.q = 0.0; });
  rejects([](TrainConfig& c) { c.q = 1.5; });
  rejects([](TrainConfig& c) { c.lr_debiased = 0.0; });
  rejects([](TrainConfig& c) { c.embed_dim = 0; });
  rejects([](TrainConfig& c) { c.aux_loss = AuxLoss::Gce; });
  rejects([](TrainConfig& c) { c.similarity = SimilarityKind::GceKl; });
  TrainConfig ok;
  ok.aux_loss = AuxLoss::Gce;
  ok.similarity = SimilarityKind::GceL2;
  CHECK_NOTHROW(ok.validate());

  const Fixture f;
  TrainConfig bad = small_config("vanilla");
  bad.batch_size = 1;
  CHECK_THROWS_KIND(train(bad, f.data()), ErrorKind::InvalidConfig);
}

TEST_CASE("vanilla with (1, 0) is plain ERM, bit for bit") {
  const Fixture f;
  TrainConfig c = small_config("vanilla");
  c.lambda_base = 1.0;
  c.lambda_ours = 0.0;
  const RunHistory h = train(c, f.data());

  MlpParams theta = init_debiased(c, f.train);
  OptimizerState opt = make_adam(theta, {.learning_rate = c.lr_debiased});
  Rng order(c.seed, Stream::Order);
  std::vector<std::size_t> perm(f.train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t e = 0; e < c.epochs; ++e) {
    shuffled_order(perm, order);
    for (std::size_t s = 0; s < perm.size(); s += c.batch_size) {
      const std::size_t end = std::min(perm.size(), s + c.batch_size);
      const Batch b = make_batch(f.train, std::span<const std::size_t>(perm.data() + s, end - s));
      const ForwardResult fw = forward_classifier(theta, b.x);
      const LossResult loss = ce(fw.output, SoftLabelBatch::one_hot(b.y, 10));
      adam_step(opt, theta, backward(theta, fw.cache, loss.grad_input));
    }
  }
  CHECK(h.debiased == theta);
  CHECK(h.epochs.size() == 2);
  CHECK(h.final_pairs.empty());
  CHECK(h.epochs.back().unbiased_acc == accuracy(theta, f.unbiased));
}

TEST_CASE("zero epochs returns the initialization") {
  const Fixture f;
  TrainConfig c = small_config("selecmix-AB");
  c.epochs = 0;
  const RunHistory h = train(c, f.data());
  CHECK(h.epochs.empty());
  CHECK(h.debiased == init_debiased(c, f.train));
  CHECK(h.auxiliary == init_auxiliary(c, f.train));
  CHECK(h.best_unbiased_acc() == 0.0);
  CHECK(h.final_unbiased_acc() == 0.0);
}

TEST_CASE("training is deterministic") {
  const Fixture f;
  for (const char* s : {"vanilla", "mixup", "selecmix-AB", "gt-selecmix-A", "lisa-AB"}) {
    TrainConfig c = small_config(s);
    c.trace_pairs = 50;
    check_same_history(train(c, f.data()), train(c, f.data()));
  }
  TrainConfig a = small_config("selecmix-AB"), b = a;
  b.seed = 8;
  CHECK(train(a, f.data()).debiased != train(b, f.data()).debiased);
}

TEST_CASE("the auxiliary model only ever sees raw batches") {
  const Fixture f;
  const TrainConfig c = small_config("selecmix-AB");
  const MlpParams expected = reference_aux(c, f.train);
  CHECK(train(c, f.data()).auxiliary == expected);

  TrainConfig v = small_config("vanilla");
  v.train_aux_always = true;
  CHECK(train(v, f.data()).auxiliary == expected);

  TrainConfig g = small_config("selecmix-AB");
  g.aux_loss = AuxLoss::Gce;
  g.similarity = SimilarityKind::GceCosine;
  const RunHistory gh = train(g, f.data());
  CHECK(gh.auxiliary.head == HeadKind::Classifier);
  CHECK(gh.auxiliary == reference_aux(g, f.train));
}

TEST_CASE("the auxiliary model never changes the vanilla trajectory") {
  const Fixture f;
  TrainConfig plain = small_config("vanilla");
  TrainConfig with_aux = plain;
  with_aux.train_aux_always = true;
  const RunHistory a = train(plain, f.data());
  const RunHistory b = train(with_aux, f.data());
  CHECK(a.debiased == b.debiased);
  CHECK(a.auxiliary == init_auxiliary(plain, f.train));
  CHECK(param_hash(b.auxiliary) != param_hash(a.auxiliary));
}

TEST_CASE("a frozen auxiliary model is not touched by the classifier loss") {
  const Fixture f;
  TrainConfig c = small_config("selecmix-AB");
  c.aux_schedule = AuxSchedule::Pretrain;
  c.pretrain_epochs = 0;
  const RunHistory h = train(c, f.data());
  CHECK(param_hash(h.auxiliary) == param_hash(init_auxiliary(c, f.train)));
  CHECK(h.debiased != init_debiased(c, f.train));
  for (const EpochRecord& e : h.epochs) CHECK(e.aux_loss == 0.0);

  c.pretrain_epochs = 2;
  const MlpParams pre = pretrain_auxiliary(c, f.train);
  CHECK(pre == pretrain_auxiliary(c, f.train));
  CHECK(pre != init_auxiliary(c, f.train));
  CHECK(train(c, f.data()).auxiliary == pre);
}

TEST_CASE("pretrain hook sees every epoch") {
  const Fixture f;
  const TrainConfig c = small_config("selecmix-AB");
  std::vector<std::size_t> seen;
  MlpParams last;
  const MlpParams out = pretrain_auxiliary(c, f.train, 3, [&](std::size_t e, const MlpParams& aux) {
    seen.push_back(e);
    last = aux;
  });
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(last == out);
  CHECK(pretrain_auxiliary(c, f.train, 0) == init_auxiliary(c, f.train));
}

TEST_CASE("epoch records and pair logs") {
  const Fixture f;
  TrainConfig c = small_config("selecmix-AB");
  c.trace_pairs = 100;
  c.final_probe = true;
  const RunHistory h = train(c, f.data());
  REQUIRE(h.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    const EpochRecord& r = h.epochs[e];
    CHECK(r.epoch == e + 1);
    CHECK(r.unbiased_acc >= 0.0);
    CHECK(r.unbiased_acc <= 1.0);
    CHECK(r.train_loss > 0.0);
    CHECK(r.aux_loss > 0.0);
    CHECK(r.pair_stats.has_value());
    CHECK(r.recall.has_value());
  }
  CHECK(h.best_unbiased_acc() >= h.final_unbiased_acc());
  CHECK(h.probe_acc.has_value());
  // 300 examples in batches of 32: nine full batches and one of 12.
  CHECK(h.final_pairs.size() == 300);
  std::vector<int> hits(300, 0);
  for (const PairLogEntry& p : h.final_pairs) {
    CHECK(p.epoch == 2);
    REQUIRE(p.query < 300);
    REQUIRE(p.selected < 300);
    ++hits[p.query];
    if (p.branch != Branch::Passthrough) {
      CHECK(p.lambda <= 0.5);
      CHECK((p.branch == Branch::Positive) == (f.train.examples[p.query].y == f.train.examples[p.selected].y));
    }
  }
  CHECK(std::all_of(hits.begin(), hits.end(), [](int n) { return n == 1; }));

  const RunHistory m = train(small_config("mixup"), f.data());
  CHECK(m.final_pairs.empty());
  CHECK_FALSE(m.epochs.back().recall.has_value());
}

TEST_CASE("ground-truth selection has perfect recall") {
  const Fixture f;
  const RunHistory h = train(small_config("gt-selecmix-AB"), f.data());
  for (const EpochRecord& e : h.epochs) {
    REQUIRE(e.recall.has_value());
    CHECK(*e.recall == 1.0);
  }
}

TEST_CASE("lambda_base adds the raw batch term") {
  const Fixture f;
  TrainConfig ours = small_config("gt-selecmix-AB");
  TrainConfig both = ours;
  both.lambda_base = 1.0;
  const RunHistory a = train(ours, f.data()), b = train(both, f.data());
  CHECK(a.debiased != b.debiased);
  CHECK(b.epochs.front().train_loss > a.epochs.front().train_loss);
}

TEST_CASE("divergence aborts with a partial history") {
  const Fixture f;
  TrainConfig c = small_config("vanilla");
  c.epochs = 5;
  c.lr_debiased = 1e300;
  try {
    train(c, f.data());
    FAIL("expected divergence");
  } catch (const DivergedError& e) {
    CHECK(e.kind() == ErrorKind::Diverged);
    CHECK(e.partial().epochs.size() < 5);
  }
  TrainConfig g = small_config("selecmix-AB");
  g.lr_aux = 1e300;
  CHECK_THROWS_KIND(train(g, f.data()), ErrorKind::Diverged);
}
