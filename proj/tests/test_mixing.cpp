#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "selecmix/mixing.hpp"

using namespace selecmix;

namespace {

Batch random_batch(Rng& rng, std::size_t b, int classes, std::size_t dim = 4) {
  Batch batch;
  batch.x = testutil::random_matrix(rng, b, dim);
  batch.y = testutil::random_labels(rng, b, classes);
  batch.bias = testutil::random_labels(rng, b, classes);
  batch.num_classes = static_cast<std::size_t>(classes);
  return batch;
}

/// Exhaustive scan with an explicit candidate list.
std::size_t scan(std::size_t i, const std::vector<int>& y, const Matrix& s, bool positive) {
  std::vector<std::size_t> cand;
  for (std::size_t j = 0; j < y.size(); ++j)
    if (positive ? (j != i && y[j] == y[i]) : (y[j] != y[i])) cand.push_back(j);
  std::size_t best = cand.front();
  for (std::size_t j : cand) {
    const bool better = positive ? s(i, j) < s(i, best) : s(i, j) > s(i, best);
    if (better) best = j;
  }
  return best;
}

void check_row_is_mix(const Batch& b, const MixedBatch& mb, std::size_t r) {
  const PairRecord& p = mb.pairs[r];
  for (std::size_t c = 0; c < b.x.cols(); ++c) {
    const double xi = b.x(p.query, c), xk = b.x(p.selected, c);
    CHECK(mb.inputs(r, c) == doctest::Approx(p.lambda * xi + (1 - p.lambda) * xk).epsilon(1e-14));
    CHECK(mb.inputs(r, c) >= std::min(xi, xk));
    CHECK(mb.inputs(r, c) <= std::max(xi, xk));
  }
}

Matrix one_hot_row(std::size_t classes, int y) {
  Matrix m(1, classes);
  m(0, static_cast<std::size_t>(y)) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("selection on tiny fixtures") {
  const std::vector<int> y{0, 1, 0, 1, 2};
  Matrix s(5, 5);
  CHECK(select_contradicting_positive(0, y, s) == 2);
  CHECK(select_contradicting_positive(1, y, s) == 3);
  CHECK(select_contradicting_negative(0, y, s) == 1);
  CHECK(select_contradicting_negative(4, y, s) == 0);
  CHECK_THROWS_KIND(select_contradicting_positive(4, y, s), ErrorKind::EmptyCandidateSet);
  const std::vector<int> same{3, 3, 3};
  CHECK_THROWS_KIND(select_contradicting_negative(0, same, Matrix(3, 3)), ErrorKind::EmptyCandidateSet);

  for (std::size_t j = 0; j < 5; ++j) s(0, j) = static_cast<double>(j);
  CHECK(select_contradicting_negative(0, y, s) == 4);
  CHECK(select_contradicting_positive(0, y, s) == 2);
}

TEST_CASE("selection equals an exhaustive scan on random batches") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng.uniform_index(31);
    const auto y = testutil::random_labels(rng, b, 4);
    Matrix s = testutil::random_matrix(rng, b, b);
    // Coarse values force ties.
    if (trial % 2 == 0)
      for (double& v : s.data()) v = std::round(v);
    for (std::size_t i = 0; i < b; ++i) {
      bool pos = false, neg = false;
      for (std::size_t j = 0; j < b; ++j) {
        pos |= j != i && y[j] == y[i];
        neg |= y[j] != y[i];
      }
      if (pos) CHECK(select_contradicting_positive(i, y, s) == scan(i, y, s, true));
      if (neg) CHECK(select_contradicting_negative(i, y, s) == scan(i, y, s, false));
    }
  }
}

TEST_CASE("selections are invariant to the contrastive temperature") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = l2_normalize_rows(testutil::random_matrix(rng, 16, 8));
    const auto y = testutil::random_labels(rng, 16, 3);
    const Matrix raw = cosine_sim_matrix(z);
    for (double tau : {0.05, 0.2, 1.0, 7.0}) {
      const Matrix p = contrastive_probabilities(z, tau);
      for (std::size_t i = 0; i < 16; ++i) {
        if (std::count(y.begin(), y.end(), y[i]) > 1)
          CHECK(select_contradicting_positive(i, y, raw) == select_contradicting_positive(i, y, p));
        if (std::count(y.begin(), y.end(), y[i]) < 16)
          CHECK(select_contradicting_negative(i, y, raw) == select_contradicting_negative(i, y, p));
      }
    }
  }
}

TEST_CASE("selecmix matches a step-by-step simulation") {
  Rng data(3);
  for (MixMode mode : {MixMode::A, MixMode::B, MixMode::AB}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Batch b = random_batch(data, 8, 3);
      const Matrix s = testutil::random_matrix(data, 8, 8);
      Rng rng(seed, Stream::Mixing), sim(seed, Stream::Mixing);
      const MixedBatch mb = selecmix_from_scores(b, s, mode, rng);

      bool positive = mode == MixMode::A;
      if (mode == MixMode::AB) positive = sim.uniform() > 0.5;
      for (std::size_t i = 0; i < 8; ++i) {
        const double drawn = sim.uniform();
        const double lambda = drawn < 0.5 ? drawn : 1.0 - drawn;
        const auto n_same = std::count(b.y.begin(), b.y.end(), b.y[i]);
        const bool has_pos = n_same > 1, has_neg = n_same < 8;
        const PairRecord& p = mb.pairs[i];
        CHECK(p.query == i);
        if ((positive && has_pos) || (!positive && !has_neg && has_pos)) {
          CHECK(p.branch == Branch::Positive);
          CHECK(p.selected == scan(i, b.y, s, true));
        } else if (has_neg) {
          CHECK(p.branch == Branch::Negative);
          CHECK(p.selected == scan(i, b.y, s, false));
        } else {
          CHECK(p.branch == Branch::Passthrough);
        }
        if (p.branch != Branch::Passthrough) CHECK(p.lambda == lambda);
      }
    }
  }
}

TEST_CASE("selecmix draws one coin per batch in mode AB") {
  Rng data(4);
  std::size_t positive_batches = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Batch b = random_batch(data, 12, 2);
    b.y = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    Rng rng(seed);
    const MixedBatch mb = selecmix_from_scores(b, testutil::random_matrix(data, 12, 12), MixMode::AB, rng);
    const Branch first = mb.pairs[0].branch;
    for (const PairRecord& p : mb.pairs) CHECK(p.branch == first);
    positive_batches += first == Branch::Positive ? 1 : 0;
  }
  CHECK(positive_batches > 70);
  CHECK(positive_batches < 130);
}

TEST_CASE("selecmix output contract") {
  Rng data(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Batch b = random_batch(data, 16, 4);
    Rng rng(static_cast<std::uint64_t>(trial));
    const MixedBatch mb = selecmix_from_scores(b, testutil::random_matrix(data, 16, 16), MixMode::AB, rng);
    REQUIRE(mb.pairs.size() == 16);
    CHECK(mb.inputs.rows() == 16);
    CHECK(mb.labels.size() == 16);
    for (std::size_t r = 0; r < 16; ++r) {
      const PairRecord& p = mb.pairs[r];
      check_row_is_mix(b, mb, r);
      const Matrix expected = one_hot_row(4, b.y[p.selected]);
      for (std::size_t c = 0; c < 4; ++c) CHECK(mb.labels.probs()(r, c) == expected(0, c));
      if (p.branch == Branch::Passthrough) {
        CHECK(p.selected == r);
        CHECK(p.lambda == 1.0);
      } else {
        CHECK(p.lambda <= 0.5);
        CHECK(p.lambda >= 0.0);
        CHECK((p.branch == Branch::Positive) == (b.y[p.selected] == b.y[r]));
        CHECK(p.selected != r);
      }
    }
  }
}

TEST_CASE("selecmix fallbacks") {
  Rng rng(6);
  Batch distinct;
  distinct.x = testutil::random_matrix(rng, 4, 3);
  distinct.y = {0, 1, 2, 3};
  distinct.num_classes = 4;
  const MixedBatch a = selecmix_from_scores(distinct, Matrix(4, 4), MixMode::A, rng);
  for (const PairRecord& p : a.pairs) CHECK(p.branch == Branch::Negative);

  Batch uniform = distinct;
  uniform.y = {2, 2, 2, 2};
  const MixedBatch bm = selecmix_from_scores(uniform, Matrix(4, 4), MixMode::B, rng);
  for (const PairRecord& p : bm.pairs) CHECK(p.branch == Branch::Positive);

  Batch mixed = distinct;
  mixed.y = {0, 0, 1, 2};
  const MixedBatch m = selecmix_from_scores(mixed, Matrix(4, 4), MixMode::A, rng);
  CHECK(m.pairs[0].branch == Branch::Positive);
  CHECK(m.pairs[0].selected == 1);
  CHECK(m.pairs[2].branch == Branch::Negative);

  Batch one = distinct;
  one.x = Matrix(1, 3);
  one.y = {0};
  CHECK_THROWS_KIND(selecmix_from_scores(one, Matrix(1, 1), MixMode::AB, rng), ErrorKind::BatchTooSmall);
  CHECK_THROWS_KIND(vanilla_mixup_batch(one, rng), ErrorKind::BatchTooSmall);
  CHECK_THROWS_KIND(selecmix_from_scores(distinct, Matrix(3, 3), MixMode::AB, rng), ErrorKind::ShapeMismatch);
}

TEST_CASE("ground-truth selecmix uses exact contradicting sets") {
  Rng data(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Batch b = random_batch(data, 16, 3);
    for (MixMode mode : {MixMode::A, MixMode::B, MixMode::AB}) {
      Rng rng(static_cast<std::uint64_t>(trial));
      const MixedBatch mb = gt_selecmix_batch(b, mode, rng);
      for (std::size_t r = 0; r < 16; ++r) {
        const PairRecord& p = mb.pairs[r];
        check_row_is_mix(b, mb, r);
        CHECK(mb.labels.probs()(r, static_cast<std::size_t>(b.y[p.selected])) == 1.0);
        bool any_pos = false, any_neg = false;
        for (std::size_t j = 0; j < 16; ++j) {
          any_pos |= j != r && b.y[j] == b.y[r] && b.bias[j] != b.bias[r];
          any_neg |= b.y[j] != b.y[r] && b.bias[j] == b.bias[r];
        }
        if (p.branch == Branch::Positive) {
          CHECK(b.y[p.selected] == b.y[r]);
          CHECK(b.bias[p.selected] != b.bias[r]);
          CHECK(p.lambda <= 0.5);
          if (mode == MixMode::B) CHECK(!any_neg);
        } else if (p.branch == Branch::Negative) {
          CHECK(b.y[p.selected] != b.y[r]);
          CHECK(b.bias[p.selected] == b.bias[r]);
          CHECK(p.lambda <= 0.5);
          if (mode == MixMode::A) CHECK(!any_pos);
        } else {
          CHECK(!any_pos);
          CHECK(!any_neg);
        }
      }
    }
  }
}

TEST_CASE("ground-truth selecmix on an enumerated fixture") {
  Batch b;
  b.x = Matrix(6, 2);
  b.y = {0, 0, 0, 1, 1, 2};
  b.bias = {0, 1, 1, 0, 1, 2};
  b.num_classes = 3;
  // Positives of 0: {1, 2}. Negatives of 0: {3}. Example 5 has no candidates.
  std::set<std::size_t> seen;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const MixedBatch mb = gt_selecmix_batch(b, MixMode::A, rng);
    CHECK(mb.pairs[0].branch == Branch::Positive);
    seen.insert(mb.pairs[0].selected);
    CHECK(mb.pairs[5].branch == Branch::Passthrough);
    CHECK(mb.pairs[3].selected == 4);
    const MixedBatch neg = gt_selecmix_batch(b, MixMode::B, rng);
    CHECK(neg.pairs[0].selected == 3);
    CHECK(neg.pairs[3].selected == 0);
    CHECK(neg.pairs[2].selected == 4);
  }
  CHECK(seen == std::set<std::size_t>{1, 2});
  Batch no_bias = b;
  no_bias.bias.clear();
  Rng rng(0);
  CHECK_THROWS_KIND(gt_selecmix_batch(no_bias, MixMode::AB, rng), ErrorKind::BackendUnavailable);
  CHECK_THROWS_KIND(lisa_batch(no_bias, MixMode::AB, rng), ErrorKind::BackendUnavailable);
}

TEST_CASE("mixing an aligned query with a conflicting partner synthesizes a conflicting example") {
  // Bias block is the last 3 coordinates with separated means.
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Batch b;
    b.num_classes = 3;
    b.y = {0, 0};
    b.bias = {0, 2};
    b.x = Matrix(2, 5);
    for (std::size_t c = 0; c < 2; ++c) b.x(0, c) = rng.normal(), b.x(1, c) = rng.normal();
    b.x(0, 2) = 1.0;
    b.x(1, 4) = 1.0;
    Rng mix(static_cast<std::uint64_t>(trial));
    const MixedBatch mb = gt_selecmix_batch(b, MixMode::A, mix);
    const PairRecord& p = mb.pairs[0];
    REQUIRE(p.branch == Branch::Positive);
    if (p.lambda >= 0.5) continue;
    std::size_t dominant = 2;
    for (std::size_t c = 3; c < 5; ++c)
      if (mb.inputs(0, c) > mb.inputs(0, dominant)) dominant = c;
    const int label = b.y[p.selected];
    CHECK(static_cast<int>(dominant - 2) != label);
  }
}

TEST_CASE("lisa interpolates labels and keeps lambda") {
  Rng data(9);
  bool saw_big_lambda = false;
  for (int trial = 0; trial < 50; ++trial) {
    const Batch b = random_batch(data, 16, 3);
    Rng rng(static_cast<std::uint64_t>(trial));
    const MixedBatch mb = lisa_batch(b, MixMode::B, rng);
    for (std::size_t r = 0; r < 16; ++r) {
      const PairRecord& p = mb.pairs[r];
      check_row_is_mix(b, mb, r);
      saw_big_lambda |= p.lambda > 0.5 && p.branch != Branch::Passthrough;
      const auto yi = static_cast<std::size_t>(b.y[r]);
      const auto yk = static_cast<std::size_t>(b.y[p.selected]);
      if (p.branch == Branch::Negative) {
        CHECK(mb.labels.probs()(r, yi) == p.lambda);
        CHECK(mb.labels.probs()(r, yk) == 1.0 - p.lambda);
      } else {
        CHECK(mb.labels.probs()(r, yk) == 1.0);
      }
    }
  }
  CHECK(saw_big_lambda);
}

TEST_CASE("vanilla mixup") {
  Rng data(10);
  const Batch b = random_batch(data, 32, 4);
  Rng rng(0), sim(0);
  const MixedBatch mb = vanilla_mixup_batch(b, rng);
  for (std::size_t r = 0; r < 32; ++r) {
    const PairRecord& p = mb.pairs[r];
    CHECK(p.branch == Branch::Mixup);
    CHECK(p.selected == sim.uniform_index(32));
    CHECK(p.lambda == sim.uniform());
    check_row_is_mix(b, mb, r);
    double total = 0.0;
    for (std::size_t c = 0; c < 4; ++c) total += mb.labels.probs()(r, c);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    if (b.y[r] != b.y[p.selected])
      CHECK(mb.labels.probs()(r, static_cast<std::size_t>(b.y[r])) == p.lambda);
  }
}

TEST_CASE("mix_value endpoints and clamping") {
  CHECK(mix_value(2.0, 5.0, 1.0) == 2.0);
  CHECK(mix_value(2.0, 5.0, 0.0) == 5.0);
  CHECK(mix_value(2.0, 5.0, 0.3) == doctest::Approx(0.3 * 2.0 + 0.7 * 5.0));
  CHECK(mix_value(0.1, 0.1, 0.37) == 0.1);
}

TEST_CASE("similarity backends") {
  Rng rng(11);
  Batch b = random_batch(rng, 8, 3, 6);
  for (std::size_t c = 0; c < 6; ++c) b.x(5, c) = b.x(2, c);
  b.bias[5] = b.bias[2];
  const MlpParams enc = make_encoder(6, 10, 4, rng);
  const MlpParams clf = make_classifier(6, 10, 3, rng);

  const Matrix g = similarity_scores({SimilarityKind::GscCosine, &enc}, b);
  for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(g(i, i) - 1.0) < 1e-12);
  CHECK(max_abs_diff(g, g.transposed()) == 0.0);

  for (SimilarityKind k : {SimilarityKind::GscCosine, SimilarityKind::GceCosine, SimilarityKind::GceL2,
                           SimilarityKind::GceKl, SimilarityKind::GroundTruth}) {
    const MlpParams* model = k == SimilarityKind::GscCosine ? &enc : &clf;
    const Matrix s = similarity_scores({k, model}, b);
    for (std::size_t j = 0; j < 8; ++j) CHECK(s(2, 5) >= s(2, j) - 1e-12);
  }

  const Matrix kl = similarity_scores({SimilarityKind::GceKl, &clf}, b);
  CHECK(max_abs_diff(kl, kl.transposed()) > 1e-6);
  const Matrix l2 = similarity_scores({SimilarityKind::GceL2, &clf}, b);
  for (std::size_t i = 0; i < 8; ++i) CHECK(l2(i, i) == 0.0);
  const Matrix gt = similarity_scores({SimilarityKind::GroundTruth, nullptr}, b);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(gt(i, j) == (b.bias[i] == b.bias[j] ? 1.0 : 0.0));

  CHECK_THROWS_KIND(similarity_scores({SimilarityKind::GscCosine, nullptr}, b), ErrorKind::BackendUnavailable);
  CHECK_THROWS_KIND(similarity_scores({SimilarityKind::GscCosine, &clf}, b), ErrorKind::BackendUnavailable);
  CHECK_THROWS_KIND(similarity_scores({SimilarityKind::GceKl, &enc}, b), ErrorKind::BackendUnavailable);
  Batch no_bias = b;
  no_bias.bias.clear();
  CHECK_THROWS_KIND(similarity_scores({SimilarityKind::GroundTruth, nullptr}, no_bias), ErrorKind::BackendUnavailable);
}

TEST_CASE("selecmix_batch equals scoring then selecting") {
  Rng rng(12);
  const Batch b = random_batch(rng, 16, 3, 6);
  const MlpParams enc = make_encoder(6, 10, 4, rng);
  Rng r1(5), r2(5);
  const MixedBatch direct = selecmix_batch(b, {SimilarityKind::GscCosine, &enc}, MixMode::AB, r1);
  const MixedBatch manual = selecmix_from_scores(b, similarity_scores({SimilarityKind::GscCosine, &enc}, b), MixMode::AB, r2);
  CHECK(direct.inputs == manual.inputs);
  CHECK(direct.labels.probs() == manual.labels.probs());

  for (SimilarityKind k : {SimilarityKind::GscCosine, SimilarityKind::GceCosine, SimilarityKind::GceL2,
                           SimilarityKind::GceKl, SimilarityKind::GroundTruth, SimilarityKind::Constant}) {
    CHECK(parse_similarity_kind(to_string(k)) == k);
  }
  CHECK_FALSE(parse_similarity_kind("cosine").has_value());
}
