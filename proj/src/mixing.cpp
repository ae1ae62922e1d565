#include "selecmix/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "selecmix/error.hpp"

namespace selecmix {

namespace {

void require_batch(const Batch& batch) {
  if (batch.size() < 2) throw Error(ErrorKind::BatchTooSmall, "mixing needs at least two examples");
  if (batch.x.rows() != batch.size()) throw Error(ErrorKind::ShapeMismatch, "features/labels row count");
  if (batch.num_classes == 0) throw Error(ErrorKind::ShapeMismatch, "num_classes not set");
}

void require_bias(const Batch& batch) {
  if (batch.bias.size() != batch.size()) {
    throw Error(ErrorKind::BackendUnavailable, "bias labels are required for this strategy");
  }
}

/// Writes row `row` of the mixed batch and the matching label row.
void emit(const Batch& batch, const PairRecord& rec, bool interpolate_labels, Matrix& inputs,
          Matrix& labels, std::size_t row) {
  auto xi = batch.x.row(rec.query);
  auto xk = batch.x.row(rec.selected);
  auto out = inputs.row(row);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = mix_value(xi[c], xk[c], rec.lambda);

  const auto yi = static_cast<std::size_t>(batch.y[rec.query]);
  const auto yk = static_cast<std::size_t>(batch.y[rec.selected]);
  if (!interpolate_labels || yi == yk) {
    labels(row, yk) = 1.0;
  } else {
    labels(row, yi) = rec.lambda;
    labels(row, yk) = 1.0 - rec.lambda;
  }
}

MixedBatch assemble(const Batch& batch, std::vector<PairRecord> pairs, bool interpolate_labels) {
  MixedBatch mb;
  Matrix inputs(batch.size(), batch.x.cols());
  Matrix labels(batch.size(), batch.num_classes);
  for (std::size_t r = 0; r < pairs.size(); ++r) emit(batch, pairs[r], interpolate_labels, inputs, labels, r);
  mb.inputs = std::move(inputs);
  mb.labels = SoftLabelBatch(std::move(labels));
  mb.pairs = std::move(pairs);
  return mb;
}

bool initial_branch_positive(MixMode mode, Rng& rng) {
  switch (mode) {
    case MixMode::A: return true;
    case MixMode::B: return false;
    case MixMode::AB: return rng.uniform() > 0.5;
  }
  return true;
}

bool has_positive(std::size_t i, std::span<const int> y) {
  for (std::size_t j = 0; j < y.size(); ++j)
    if (j != i && y[j] == y[i]) return true;
  return false;
}

bool has_negative(std::size_t i, std::span<const int> y) {
  for (std::size_t j = 0; j < y.size(); ++j)
    if (y[j] != y[i]) return true;
  return false;
}

/// Exact contradicting sets from bias labels.
std::vector<std::size_t> exact_candidates(const Batch& batch, std::size_t i, bool positive) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (j == i) continue;
    const bool same_y = batch.y[j] == batch.y[i];
    const bool same_b = batch.bias[j] == batch.bias[i];
    if (positive ? (same_y && !same_b) : (!same_y && same_b)) out.push_back(j);
  }
  return out;
}

/// Shared driver for the two bias-label strategies.
MixedBatch exact_set_mixing(const Batch& batch, MixMode mode, Rng& rng, bool selecmix_rule) {
  require_batch(batch);
  require_bias(batch);
  const bool positive_first = initial_branch_positive(mode, rng);
  std::vector<PairRecord> pairs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double lambda = rng.uniform();
    if (selecmix_rule) lambda = std::min(lambda, 1.0 - lambda);
    PairRecord rec{i, i, 1.0, Branch::Passthrough};
    for (bool positive : {positive_first, !positive_first}) {
      const auto cand = exact_candidates(batch, i, positive);
      if (cand.empty()) continue;
      rec.selected = cand[rng.uniform_index(cand.size())];
      rec.lambda = lambda;
      rec.branch = positive ? Branch::Positive : Branch::Negative;
      break;
    }
    pairs[i] = rec;
  }
  return assemble(batch, std::move(pairs), !selecmix_rule);
}

double safe_norm(std::span<const double> v) {
  const double n = norm2(v);
  return n > 1e-12 ? n : 0.0;
}

}  // namespace

std::string_view to_string(Branch b) noexcept {
  switch (b) {
    case Branch::Positive: return "positive";
    case Branch::Negative: return "negative";
    case Branch::Passthrough: return "passthrough";
    case Branch::Mixup: return "mixup";
  }
  return "unknown";
}

std::string_view to_string(MixMode m) noexcept {
  switch (m) {
    case MixMode::A: return "A";
    case MixMode::B: return "B";
    case MixMode::AB: return "AB";
  }
  return "?";
}

std::string_view to_string(SimilarityKind k) noexcept {
  switch (k) {
    case SimilarityKind::GscCosine: return "gsc-cosine";
    case SimilarityKind::GceCosine: return "gce-cosine";
    case SimilarityKind::GceL2: return "gce-l2";
    case SimilarityKind::GceKl: return "gce-kl";
    case SimilarityKind::GroundTruth: return "ground-truth";
    case SimilarityKind::Constant: return "constant";
  }
  return "unknown";
}

std::optional<SimilarityKind> parse_similarity_kind(std::string_view s) noexcept {
  for (auto k : {SimilarityKind::GscCosine, SimilarityKind::GceCosine, SimilarityKind::GceL2,
                 SimilarityKind::GceKl, SimilarityKind::GroundTruth, SimilarityKind::Constant}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

double mix_value(double a, double b, double lambda) noexcept {
  const double v = lambda * a + (1.0 - lambda) * b;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

Matrix similarity_scores(const SimilarityBackend& backend, const Batch& batch) {
  const std::size_t n = batch.size();
  switch (backend.kind) {
    case SimilarityKind::Constant:
      return Matrix(n, n, 0.0);
    case SimilarityKind::GroundTruth: {
      require_bias(batch);
      Matrix s(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s(i, j) = batch.bias[i] == batch.bias[j] ? 1.0 : 0.0;
      return s;
    }
    case SimilarityKind::GscCosine: {
      if (backend.model == nullptr || backend.model->head != HeadKind::Projection) {
        throw Error(ErrorKind::BackendUnavailable, "gsc-cosine needs a projection-head encoder");
      }
      return cosine_sim_matrix(forward_encoder(*backend.model, batch.x).output);
    }
    case SimilarityKind::GceCosine:
    case SimilarityKind::GceL2:
    case SimilarityKind::GceKl:
      break;
  }

  if (backend.model == nullptr || backend.model->head != HeadKind::Classifier) {
    throw Error(ErrorKind::BackendUnavailable,
                std::string(to_string(backend.kind)) + " needs a GCE-trained classifier");
  }
  const ForwardResult fw = forward_classifier(*backend.model, batch.x);
  Matrix s(n, n);
  if (backend.kind == SimilarityKind::GceKl) {
    const Matrix logp = log_softmax_rows(fw.output);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double kl = 0.0;
        for (std::size_t c = 0; c < logp.cols(); ++c)
          kl += std::exp(logp(i, c)) * (logp(i, c) - logp(j, c));
        s(i, j) = -kl;
      }
    }
    return s;
  }

  const Matrix& h = fw.cache.penultimate();
  if (backend.kind == SimilarityKind::GceL2) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double d2 = 0.0;
        auto hi = h.row(i);
        auto hj = h.row(j);
        for (std::size_t c = 0; c < hi.size(); ++c) d2 += (hi[c] - hj[c]) * (hi[c] - hj[c]);
        s(i, j) = s(j, i) = -std::sqrt(d2);
      }
    }
    return s;
  }

  // Cosine of penultimate activations; an all-zero ReLU row scores 0.
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = safe_norm(h.row(i));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double denom = norms[i] * norms[j];
      s(i, j) = s(j, i) = denom > 0.0 ? dot(h.row(i), h.row(j)) / denom : 0.0;
    }
  }
  return s;
}

std::size_t select_contradicting_positive(std::size_t i, std::span<const int> labels,
                                          const Matrix& scores) {
  std::size_t best = labels.size();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (j == i || labels[j] != labels[i]) continue;
    if (best == labels.size() || scores(i, j) < scores(i, best)) best = j;
  }
  if (best == labels.size()) throw Error(ErrorKind::EmptyCandidateSet, "no positive for query " + std::to_string(i));
  return best;
}

std::size_t select_contradicting_negative(std::size_t i, std::span<const int> labels,
                                          const Matrix& scores) {
  std::size_t best = labels.size();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == labels[i]) continue;
    if (best == labels.size() || scores(i, j) > scores(i, best)) best = j;
  }
  if (best == labels.size()) throw Error(ErrorKind::EmptyCandidateSet, "no negative for query " + std::to_string(i));
  return best;
}

MixedBatch selecmix_from_scores(const Batch& batch, const Matrix& scores, MixMode mode, Rng& rng) {
  require_batch(batch);
  if (scores.rows() != batch.size() || scores.cols() != batch.size()) {
    throw Error(ErrorKind::ShapeMismatch, "score matrix must be B x B");
  }
  const bool positive_first = initial_branch_positive(mode, rng);
  std::vector<PairRecord> pairs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double lambda = rng.uniform();
    lambda = std::min(lambda, 1.0 - lambda);
    PairRecord rec{i, i, 1.0, Branch::Passthrough};
    for (bool positive : {positive_first, !positive_first}) {
      if (positive && has_positive(i, batch.y)) {
        rec = {i, select_contradicting_positive(i, batch.y, scores), lambda, Branch::Positive};
        break;
      }
      if (!positive && has_negative(i, batch.y)) {
        rec = {i, select_contradicting_negative(i, batch.y, scores), lambda, Branch::Negative};
        break;
      }
    }
    pairs[i] = rec;
  }
  return assemble(batch, std::move(pairs), false);
}

MixedBatch selecmix_batch(const Batch& batch, const SimilarityBackend& backend, MixMode mode,
                          Rng& rng) {
  require_batch(batch);
  return selecmix_from_scores(batch, similarity_scores(backend, batch), mode, rng);
}

MixedBatch gt_selecmix_batch(const Batch& batch, MixMode mode, Rng& rng) {
  return exact_set_mixing(batch, mode, rng, true);
}

MixedBatch lisa_batch(const Batch& batch, MixMode mode, Rng& rng) {
  return exact_set_mixing(batch, mode, rng, false);
}

MixedBatch vanilla_mixup_batch(const Batch& batch, Rng& rng) {
  require_batch(batch);
  std::vector<PairRecord> pairs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t j = rng.uniform_index(batch.size());
    const double lambda = rng.uniform();
    pairs[i] = {i, j, lambda, Branch::Mixup};
  }
  return assemble(batch, std::move(pairs), true);
}

}  // namespace selecmix
