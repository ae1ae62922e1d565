#include "selecmix/model.hpp"

#include <cmath>
#include <string>

#include "selecmix/binio.hpp"
#include "selecmix/error.hpp"

namespace selecmix {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'X', 'P'};
constexpr std::uint32_t kVersion = 1;

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix out = matmul(x, layer.weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return out;
}

void relu_inplace(Matrix& m) noexcept {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

ForwardResult forward_common(const MlpParams& p, const Matrix& x) {
  if (p.layers.empty()) throw Error(ErrorKind::ShapeMismatch, "network has no layers");
  if (x.cols() != p.input_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(x.cols()) +
                                              " columns, network expects " +
                                              std::to_string(p.input_dim()));
  }
  ForwardResult result;
  result.cache.head = p.head;
  result.cache.activations.reserve(p.layers.size());
  Matrix a = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Matrix out = affine(a, p.layers[l]);
    result.cache.activations.push_back(std::move(a));
    if (l + 1 < p.layers.size()) relu_inplace(out);
    a = std::move(out);
  }
  result.cache.head_output = std::move(a);
  return result;
}

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> z;
  z.reserve(layers.size());
  for (const auto& l : layers) {
    z.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
  }
  return z;
}

}  // namespace

std::size_t MlpParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].out_dim()) {
      throw Error(ErrorKind::ShapeMismatch, "bias length mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && layers[l - 1].out_dim() != layers[l].in_dim()) {
      throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " does not chain");
    }
  }
}

bool MlpParams::all_finite() const noexcept {
  for (const auto& l : layers) {
    if (!l.weight.all_finite()) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

MlpParams make_mlp(std::span<const std::size_t> widths, HeadKind head, Rng& rng) {
  if (widths.size() < 2) throw Error(ErrorKind::ShapeMismatch, "need at least input and output width");
  MlpParams p;
  p.head = head;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{Matrix(in, out), std::vector<double>(out)};
    for (double& w : layer.weight.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
    for (double& b : layer.bias) b = (2.0 * rng.uniform() - 1.0) * bound;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MlpParams make_classifier(std::size_t input_dim, std::size_t hidden, std::size_t num_classes,
                          Rng& rng) {
  const std::size_t widths[] = {input_dim, hidden, hidden, num_classes};
  return make_mlp(widths, HeadKind::Classifier, rng);
}

MlpParams make_encoder(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim, Rng& rng) {
  const std::size_t widths[] = {input_dim, hidden, hidden, embed_dim};
  return make_mlp(widths, HeadKind::Projection, rng);
}

ForwardResult forward_classifier(const MlpParams& p, const Matrix& x) {
  if (p.head != HeadKind::Classifier) throw Error(ErrorKind::ShapeMismatch, "expected classifier head");
  ForwardResult r = forward_common(p, x);
  r.output = r.cache.head_output;
  return r;
}

ForwardResult forward_encoder(const MlpParams& p, const Matrix& x) {
  if (p.head != HeadKind::Projection) throw Error(ErrorKind::ShapeMismatch, "expected projection head");
  ForwardResult r = forward_common(p, x);
  const Matrix& h = r.cache.head_output;
  r.cache.norms.resize(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) r.cache.norms[i] = norm2(h.row(i));
  r.output = l2_normalize_rows(h);
  r.cache.normalized = r.output;
  return r;
}

MlpGrads backward(const MlpParams& p, const ForwardCache& cache, const Matrix& grad_output) {
  if (cache.activations.size() != p.layers.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cache does not match network depth");
  }
  const Matrix& out = cache.head_output;
  if (grad_output.rows() != out.rows() || grad_output.cols() != out.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "grad_output shape does not match network output");
  }

  Matrix delta = grad_output;
  if (cache.head == HeadKind::Projection) {
    // dL/dh = (I - z z^T) dL/dz / ||h||
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto g = delta.row(i);
      auto z = cache.normalized.row(i);
      const double zg = dot(z, g);
      const double inv = 1.0 / cache.norms[i];
      for (std::size_t c = 0; c < g.size(); ++c) g[c] = (g[c] - z[c] * zg) * inv;
    }
  }

  MlpGrads grads;
  grads.layers.resize(p.layers.size());
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Matrix& a = cache.activations[l];
    DenseLayer& g = grads.layers[l];
    g.weight = matmul_at_b(a, delta);
    g.bias.assign(delta.cols(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto row = delta.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c];
    }
    if (l == 0) break;
    Matrix next = matmul_a_bt(delta, p.layers[l].weight);
    // a is the ReLU output of the previous layer; zero entries pass no gradient.
    const auto av = a.data();
    auto nv = next.data();
    for (std::size_t i = 0; i < nv.size(); ++i)
      if (!(av[i] > 0.0)) nv[i] = 0.0;
    delta = std::move(next);
  }
  return grads;
}

MlpGrads zero_grads_like(const MlpParams& p) { return MlpGrads{zeros_like(p.layers)}; }

void add_scaled(MlpGrads& acc, const MlpGrads& g, double scale) {
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    auto dst = acc.layers[l].weight.data();
    auto src = g.layers[l].weight.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    for (std::size_t i = 0; i < acc.layers[l].bias.size(); ++i)
      acc.layers[l].bias[i] += scale * g.layers[l].bias[i];
  }
}

namespace {

std::vector<double> flatten_layers(const std::vector<DenseLayer>& layers) {
  std::vector<double> v;
  for (const auto& l : layers) {
    v.insert(v.end(), l.weight.values().begin(), l.weight.values().end());
    v.insert(v.end(), l.bias.begin(), l.bias.end());
  }
  return v;
}

}  // namespace

std::vector<double> flatten(const MlpParams& p) { return flatten_layers(p.layers); }
std::vector<double> flatten(const MlpGrads& g) { return flatten_layers(g.layers); }

MlpParams unflatten(const MlpParams& shape, std::span<const double> values) {
  if (values.size() != shape.parameter_count()) {
    throw Error(ErrorKind::ShapeMismatch, "flat parameter vector has wrong length");
  }
  MlpParams p = shape;
  std::size_t pos = 0;
  for (auto& l : p.layers) {
    for (double& w : l.weight.data()) w = values[pos++];
    for (double& b : l.bias) b = values[pos++];
  }
  return p;
}

OptimizerState make_adam(const MlpParams& p, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = zeros_like(p.layers);
  s.second_moment = zeros_like(p.layers);
  return s;
}

void adam_step(OptimizerState& state, MlpParams& p, const MlpGrads& grads) {
  if (grads.layers.size() != p.layers.size() || state.first_moment.size() != p.layers.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);

  auto update = [&](std::span<double> param, std::span<const double> grad, std::span<double> m,
                    std::span<double> v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / corr1;
      const double v_hat = v[i] / corr2;
      param[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  };

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    update(p.layers[l].weight.data(), grads.layers[l].weight.data(),
           state.first_moment[l].weight.data(), state.second_moment[l].weight.data());
    update(p.layers[l].bias, grads.layers[l].bias, state.first_moment[l].bias,
           state.second_moment[l].bias);
  }
  if (!p.all_finite()) throw Error(ErrorKind::Diverged, "non-finite parameter after Adam step");
}

std::vector<std::uint8_t> serialize(const MlpParams& p) {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(p.head));
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    w.u32(static_cast<std::uint32_t>(l.in_dim()));
    w.u32(static_cast<std::uint32_t>(l.out_dim()));
    for (double v : l.weight.values()) w.f64(v);
    for (double v : l.bias) w.f64(v);
  }
  return w.finish();
}

void save_checkpoint(const MlpParams& p, const std::filesystem::path& path) {
  const auto bytes = serialize(p);
  binio::write_all(path, bytes.data(), bytes.size());
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::from_file(path);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw Error(ErrorKind::FormatError, "bad magic");
  if (const auto v = r.u32(); v != kVersion) {
    throw Error(ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(v));
  }
  MlpParams p;
  const std::uint8_t head = r.u8();
  if (head > 1) throw Error(ErrorKind::FormatError, "bad head kind");
  p.head = static_cast<HeadKind>(head);
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    DenseLayer layer{Matrix(in, out), std::vector<double>(out)};
    for (double& v : layer.weight.data()) v = r.f64();
    for (double& v : layer.bias) v = r.f64();
    p.layers.push_back(std::move(layer));
  }
  if (!r.at_end()) throw Error(ErrorKind::FormatError, "trailing bytes in checkpoint");
  p.validate();
  return p;
}

std::uint64_t param_hash(const MlpParams& p) {
  const auto bytes = serialize(p);
  return binio::fnv1a(bytes.data(), bytes.size());
}

}  // namespace selecmix
