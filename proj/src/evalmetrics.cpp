#include "selecmix/evalmetrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "selecmix/error.hpp"
#include "selecmix/losses.hpp"

namespace selecmix {

namespace {

constexpr std::size_t kChunk = 1024;

int argmax_row(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return static_cast<int>(best);
}

Matrix normalize_or_zero(Matrix m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = norm2(row);
    for (double& v : row) v = n > 1e-12 ? v / n : 0.0;
  }
  return m;
}

}  // namespace

std::vector<int> predict(const MlpParams& classifier, const Matrix& x) {
  std::vector<int> out(x.rows());
  for (std::size_t start = 0; start < x.rows(); start += kChunk) {
    const std::size_t end = std::min(x.rows(), start + kChunk);
    Matrix chunk(end - start, x.cols());
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
              x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols()), chunk.data().begin());
    const Matrix logits = forward_classifier(classifier, chunk).output;
    for (std::size_t r = 0; r < logits.rows(); ++r) out[start + r] = argmax_row(logits.row(r));
  }
  return out;
}

double accuracy(const MlpParams& classifier, const Dataset& d, Subset subset) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (subset == Subset::All || d.examples[i].is_conflicting) idx.push_back(i);
  if (idx.empty()) throw Error(ErrorKind::EmptySubset, "no examples in the requested subset");
  const std::vector<int> pred = predict(classifier, gather_features(d, idx));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < idx.size(); ++r) correct += pred[r] == d.examples[idx[r]].y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

Matrix embed(const MlpParams& model, const Matrix& x) {
  Matrix out;
  for (std::size_t start = 0; start < x.rows(); start += kChunk) {
    const std::size_t end = std::min(x.rows(), start + kChunk);
    Matrix chunk(end - start, x.cols());
    std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
              x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols()), chunk.data().begin());
    Matrix e = model.head == HeadKind::Projection ? forward_encoder(model, chunk).output
                                                  : normalize_or_zero(forward_classifier(model, chunk).cache.penultimate());
    if (out.empty()) out = Matrix(x.rows(), e.cols());
    std::copy(e.data().begin(), e.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * e.cols()));
  }
  return out;
}

double bias_probe_embeddings(const Matrix& train_emb, std::span<const int> train_b,
                             const Matrix& eval_emb, std::span<const int> eval_b,
                             std::size_t num_classes, const ProbeConfig& config) {
  if (train_emb.rows() == 0 || eval_emb.rows() == 0) throw Error(ErrorKind::EmptySubset, "empty probe split");
  MlpParams probe;
  probe.head = HeadKind::Classifier;
  probe.layers.push_back({Matrix(train_emb.cols(), num_classes), std::vector<double>(num_classes, 0.0)});
  OptimizerState opt = make_adam(probe, {.learning_rate = config.learning_rate});
  const SoftLabelBatch targets = SoftLabelBatch::one_hot(train_b, num_classes);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const ForwardResult fw = forward_classifier(probe, train_emb);
    const LossResult loss = ce(fw.output, targets);
    adam_step(opt, probe, backward(probe, fw.cache, loss.grad_input));
  }
  const std::vector<int> pred = predict(probe, eval_emb);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == eval_b[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double bias_probe(const MlpParams& encoder, const Dataset& train, const Dataset& eval,
                  const ProbeConfig& config) {
  std::vector<int> train_b(train.size()), eval_b(eval.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_b[i] = train.examples[i].b;
  for (std::size_t i = 0; i < eval.size(); ++i) eval_b[i] = eval.examples[i].b;
  return bias_probe_embeddings(embed(encoder, features(train)), train_b, embed(encoder, features(eval)),
                               eval_b, static_cast<std::size_t>(train.config.num_classes), config);
}

PairCategoryStats pair_similarity_stats(const MlpParams& encoder, const Dataset& d,
                                        std::size_t n_pairs, std::uint64_t seed) {
  return pair_similarity_stats_embeddings(normalize_or_zero(embed(encoder, features(d))), d, n_pairs,
                                          seed);
}

PairCategoryStats pair_similarity_stats_embeddings(const Matrix& unit_rows, const Dataset& d,
                                                   std::size_t n_pairs, std::uint64_t seed) {
  const std::size_t n = d.size();
  const auto classes = static_cast<std::size_t>(d.config.num_classes);
  // Group members by (y, b); every category is a union of such groups.
  std::vector<std::vector<std::vector<std::size_t>>> groups(classes,
                                                            std::vector<std::vector<std::size_t>>(classes));
  for (std::size_t i = 0; i < n; ++i) {
    const Example& e = d.examples[i];
    groups[static_cast<std::size_t>(e.y)][static_cast<std::size_t>(e.b)].push_back(i);
  }
  auto group_size = [&](std::size_t y, std::size_t b) { return groups[y][b].size(); };

  enum Category { Pos, Neg, ContraPos, ContraNeg };
  // Candidate groups for partner j of example i in a category, with the
  // query itself excluded from its own group.
  auto partner_groups = [&](std::size_t i, Category cat) {
    const auto yi = static_cast<std::size_t>(d.examples[i].y);
    const auto bi = static_cast<std::size_t>(d.examples[i].b);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t y = 0; y < classes; ++y) {
      for (std::size_t b = 0; b < classes; ++b) {
        const bool same_y = y == yi, same_b = b == bi;
        bool ok = false;
        switch (cat) {
          case Pos: ok = same_y; break;
          case Neg: ok = !same_y; break;
          case ContraPos: ok = same_y && !same_b; break;
          case ContraNeg: ok = !same_y && same_b; break;
        }
        if (ok) out.emplace_back(y, b);
      }
    }
    return out;
  };
  auto partner_count = [&](std::size_t i, Category cat) {
    std::size_t total = 0;
    for (auto [y, b] : partner_groups(i, cat)) total += group_size(y, b);
    if (cat == Pos) total -= 1;
    return total;
  };

  Rng rng(seed, Stream::PairStats);
  PairCategoryStats stats;
  for (Category cat : {Pos, Neg, ContraPos, ContraNeg}) {
    std::vector<double> cumulative(n);
    double running = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      running += static_cast<double>(partner_count(i, cat));
      cumulative[i] = running;
    }
    if (running == 0.0) {
      static constexpr const char* names[] = {"positives", "negatives", "contradicting positives",
                                              "contradicting negatives"};
      throw Error(ErrorKind::EmptyCategory, std::string("no ") + names[cat] + " in sample");
    }
    double sum = 0.0;
    for (std::size_t s = 0; s < n_pairs; ++s) {
      const double u = rng.uniform() * running;
      const std::size_t i = static_cast<std::size_t>(
          std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      const auto cand = partner_groups(i, cat);
      std::size_t pick = rng.uniform_index(partner_count(i, cat));
      std::size_t j = n;
      for (auto [y, b] : cand) {
        const auto& members = groups[y][b];
        const auto self = std::find(members.begin(), members.end(), i);
        const std::size_t eff = members.size() - (self != members.end() ? 1 : 0);
        if (pick >= eff) {
          pick -= eff;
          continue;
        }
        // Skip over the query's own slot when it sits in this group.
        const auto self_pos = static_cast<std::size_t>(self - members.begin());
        j = members[pick >= self_pos && self != members.end() ? pick + 1 : pick];
        break;
      }
      sum += dot(unit_rows.row(i), unit_rows.row(j));
    }
    const double mean = n_pairs == 0 ? 0.0 : sum / static_cast<double>(n_pairs);
    switch (cat) {
      case Pos: stats.positives = mean; stats.n_positives = n_pairs; break;
      case Neg: stats.negatives = mean; stats.n_negatives = n_pairs; break;
      case ContraPos: stats.contradicting_positives = mean; stats.n_contradicting_positives = n_pairs; break;
      case ContraNeg: stats.contradicting_negatives = mean; stats.n_contradicting_negatives = n_pairs; break;
    }
  }
  return stats;
}

bool is_contradicting(const Example& query, const Example& selected, Branch branch) noexcept {
  const bool same_y = query.y == selected.y;
  const bool same_b = query.b == selected.b;
  if (branch == Branch::Positive) return same_y && !same_b;
  if (branch == Branch::Negative) return !same_y && same_b;
  return false;
}

RecallReport pair_selection_recall(std::span<const PairLogEntry> log, const Dataset& d, Branch branch) {
  RecallReport r;
  r.branch = branch;
  for (const auto& e : log) {
    if (e.branch != branch) continue;
    ++r.selected;
    r.contradicting += is_contradicting(d.examples[e.query], d.examples[e.selected], branch) ? 1 : 0;
  }
  if (r.selected == 0) throw Error(ErrorKind::EmptyLog, std::string("no ") + std::string(to_string(branch)) + " selections logged");
  r.recall = static_cast<double>(r.contradicting) / static_cast<double>(r.selected);
  return r;
}

}  // namespace selecmix
