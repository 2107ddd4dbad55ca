#include "repflow/blocks.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "repflow/error.hpp"
#include "repflow/random.hpp"

namespace repflow {

namespace {

constexpr std::uint64_t kSpectralSeed = 0x5ec7a1u;
constexpr int kSpectralMaxIter = 10000;
constexpr double kSpectralTol = 1e-10;

std::uint64_t param_stream(std::string_view name, std::size_t layer, std::size_t index = 0) {
  std::string label(name);
  label += '/';
  label += std::to_string(layer);
  return stream_id(label, index);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

bool finite(const Matrix& m) { return m.allFinite(); }

void apply_phi(Matrix& x, Nonlinearity mode, double (*exact)(double)) {
  if (mode == Nonlinearity::linear_gain) {
    x *= 0.5;
  } else {
    x = x.unaryExpr(exact);
  }
}

Matrix gaussian_matrix(CounterRng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Vector bias_vector(const InitScheme& scheme, Eigen::Index size, double std, std::uint64_t stream) {
  Vector b = Vector::Zero(size);
  if (std <= 0.0) return b;
  CounterRng rng(scheme.seed, stream);
  for (Eigen::Index i = 0; i < size; ++i) b(i) = rng.normal(0.0, std);
  return b;
}

void check_shape(const char* what, const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols)
    throw Error(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

}  // namespace

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double silu(double x) noexcept { return x / (1.0 + std::exp(-x)); }

void TransformerParams::validate() const {
  const Eigen::Index d = dim();
  const Eigen::Index f = ffn_dim();
  require(d >= 1 && f >= 1, "transformer params: empty shapes");
  check_shape("w_q", w_q, d, d);
  check_shape("w_k", w_k, d, d);
  check_shape("w_v", w_v, d, d);
  check_shape("w_1", w_1, f, d);
  check_shape("w_2", w_2, d, f);
  require(b_1.size() == f, "b_1: expected length " + std::to_string(f));
  require(b_2.size() == d, "b_2: expected length " + std::to_string(d));
  require(finite(w_q) && finite(w_k) && finite(w_v) && finite(w_1) && finite(w_2) && b_1.allFinite() &&
              b_2.allFinite(),
          "transformer params: non-finite entry");
}

void MambaParams::validate() const {
  const std::size_t n = steps();
  require(n >= 1, "mamba params: no steps");
  require(b_bar.size() == n && c.size() == n, "mamba params: per-step lists differ in length");
  require(!conv_taps.empty(), "mamba params: conv kernel must have at least one tap");
  const Eigen::Index d = dim();
  const Eigen::Index m = state_dim();
  require(d >= 1 && m >= 1, "mamba params: empty shapes");
  check_shape("w_z", w_z, d, d);
  require(finite(w_z), "mamba params: non-finite entry");
  for (const auto& tap : conv_taps) {
    check_shape("conv tap", tap, d, d);
    require(finite(tap), "mamba params: non-finite entry");
  }
  for (std::size_t t = 0; t < n; ++t) {
    check_shape("a_bar", a_bar[t], m, m);
    check_shape("b_bar", b_bar[t], m, d);
    check_shape("c", c[t], d, m);
    require(finite(a_bar[t]) && finite(b_bar[t]) && finite(c[t]), "mamba params: non-finite entry");
  }
}

MambaParams MambaParams::prefix(std::size_t n) const {
  if (n == 0 || n > steps()) throw Error("mamba prefix: n out of range");
  MambaParams out;
  out.a_bar.assign(a_bar.begin(), a_bar.begin() + static_cast<std::ptrdiff_t>(n));
  out.b_bar.assign(b_bar.begin(), b_bar.begin() + static_cast<std::ptrdiff_t>(n));
  out.c.assign(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
  out.conv_taps = conv_taps;
  out.w_z = w_z;
  out.nonlinearity = nonlinearity;
  return out;
}

InitScheme::Kind parse_init_kind(std::string_view name) {
  if (name == "gaussian") return InitScheme::Kind::gaussian;
  if (name == "xavier") return InitScheme::Kind::xavier;
  if (name == "he") return InitScheme::Kind::he;
  throw Error("unknown init scheme: " + std::string(name));
}

std::string to_string(InitScheme::Kind kind) {
  switch (kind) {
    case InitScheme::Kind::gaussian: return "gaussian";
    case InitScheme::Kind::xavier: return "xavier";
    case InitScheme::Kind::he: return "he";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "transformer") return Architecture::transformer;
  if (name == "mamba") return Architecture::mamba;
  throw Error("unknown architecture: " + std::string(name));
}

std::string to_string(Architecture arch) { return arch == Architecture::transformer ? "transformer" : "mamba"; }

Matrix init_matrix(const InitScheme& scheme, Eigen::Index rows, Eigen::Index cols, std::uint64_t stream) {
  if (rows < 1 || cols < 1) throw Error("init: invalid shape");
  CounterRng rng(scheme.seed, stream);
  Matrix m(rows, cols);
  switch (scheme.kind) {
    case InitScheme::Kind::gaussian: {
      if (!(scheme.sigma_w > 0.0)) throw Error("init: gaussian sigma_w must be positive");
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, scheme.sigma_w);
      break;
    }
    case InitScheme::Kind::xavier: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
      break;
    }
    case InitScheme::Kind::he: {
      const double sd = std::sqrt(2.0 / static_cast<double>(cols));
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sd);
      break;
    }
  }
  return m;
}

TransformerParams init_transformer(const InitScheme& scheme, const TransformerShape& shape, std::size_t layer) {
  const Eigen::Index d = shape.d;
  const Eigen::Index f = shape.d_ff > 0 ? shape.d_ff : 4 * d;
  if (d < 1) throw Error("init_transformer: d must be >= 1");
  TransformerParams p;
  p.w_q = init_matrix(scheme, d, d, param_stream("transformer.w_q", layer));
  p.w_k = init_matrix(scheme, d, d, param_stream("transformer.w_k", layer));
  p.w_v = init_matrix(scheme, d, d, param_stream("transformer.w_v", layer));
  p.w_1 = init_matrix(scheme, f, d, param_stream("transformer.w_1", layer));
  p.w_2 = init_matrix(scheme, d, f, param_stream("transformer.w_2", layer));
  p.b_1 = bias_vector(scheme, f, shape.bias_std, param_stream("transformer.b_1", layer));
  p.b_2 = bias_vector(scheme, d, shape.bias_std, param_stream("transformer.b_2", layer));
  p.attention = shape.attention;
  p.nonlinearity = shape.nonlinearity;
  return p;
}

namespace {

MambaParams init_mamba_common(const InitScheme& scheme, const MambaShape& shape, std::size_t layer) {
  if (shape.n < 1 || shape.d < 1 || shape.m < 1 || shape.kernel < 1) throw Error("init_mamba: invalid shape");
  MambaParams p;
  p.w_z = init_matrix(scheme, shape.d, shape.d, param_stream("mamba.w_z", layer));
  p.conv_taps.reserve(shape.kernel);
  for (std::size_t j = 0; j < shape.kernel; ++j)
    p.conv_taps.push_back(init_matrix(scheme, shape.d, shape.d, param_stream("mamba.conv", layer, j)));
  p.b_bar.reserve(shape.n);
  p.c.reserve(shape.n);
  for (std::size_t t = 0; t < shape.n; ++t) {
    p.b_bar.push_back(init_matrix(scheme, shape.m, shape.d, param_stream("mamba.b", layer, t)));
    p.c.push_back(init_matrix(scheme, shape.d, shape.m, param_stream("mamba.c", layer, t)));
  }
  p.nonlinearity = shape.nonlinearity;
  return p;
}

}  // namespace

MambaParams init_mamba(const InitScheme& scheme, const MambaShape& shape, std::size_t layer) {
  MambaParams p = init_mamba_common(scheme, shape, layer);
  CounterRng rng(scheme.seed, param_stream("mamba.dt", layer));
  const double lo = std::log(1e-3);
  const double hi = std::log(1e-1);
  p.a_bar.reserve(shape.n);
  for (std::size_t t = 0; t < shape.n; ++t) {
    const double dt = std::exp(rng.uniform(lo, hi));
    Matrix a = Matrix::Zero(shape.m, shape.m);
    for (Eigen::Index i = 0; i < shape.m; ++i) a(i, i) = std::exp(-dt * static_cast<double>(i + 1));
    p.a_bar.push_back(std::move(a));
    p.b_bar[t] *= dt;
  }
  return p;
}

MambaParams init_mamba_contractive(const InitScheme& scheme, const MambaShape& shape, double rho,
                                   std::size_t layer) {
  if (!(rho > 0.0 && rho < 1.0)) throw Error("init_mamba_contractive: rho must lie in (0, 1)");
  MambaParams p = init_mamba_common(scheme, shape, layer);
  p.a_bar.reserve(shape.n);
  for (std::size_t t = 0; t < shape.n; ++t) {
    CounterRng rng(scheme.seed, param_stream("mamba.a", layer, t));
    Matrix g = gaussian_matrix(rng, shape.m, shape.m);
    p.a_bar.push_back(g * (rho / spectral_norm(g)));
  }
  return p;
}

Matrix attention_forward(const Matrix& h, const TransformerParams& params) {
  if (h.cols() != params.dim()) throw Error("attention_forward: dimension mismatch");
  const Eigen::Index n = h.rows();
  if (params.attention == AttentionMode::mean_field) {
    const Eigen::RowVectorXd mean_v = h.colwise().mean() * params.w_v.transpose();
    return mean_v.replicate(n, 1);
  }
  const Matrix q = h * params.w_q.transpose();
  const Matrix k = h * params.w_k.transpose();
  const Matrix v = h * params.w_v.transpose();
  Matrix scores = (q * k.transpose()) / std::sqrt(static_cast<double>(params.dim()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
    scores.row(i) /= scores.row(i).sum();
  }
  return scores * v;
}

Matrix ffn_forward(const Matrix& x, const TransformerParams& params) {
  if (x.cols() != params.dim()) throw Error("ffn_forward: dimension mismatch");
  Matrix hidden = x * params.w_1.transpose();
  hidden.rowwise() += params.b_1.transpose();
  apply_phi(hidden, params.nonlinearity, gelu);
  Matrix out = hidden * params.w_2.transpose();
  out.rowwise() += params.b_2.transpose();
  return out;
}

Matrix transformer_update(const Matrix& h, const TransformerParams& params) {
  const Matrix a = attention_forward(h, params);
  return a + ffn_forward(h + a, params);
}

Matrix transformer_block_forward(const Matrix& h, const TransformerParams& params) {
  return h + transformer_update(h, params);
}

Matrix s6_scan(const Matrix& h_prime, const MambaParams& params) {
  const auto n = static_cast<std::size_t>(h_prime.rows());
  if (h_prime.cols() != params.dim()) throw Error("s6_scan: dimension mismatch");
  if (n > params.steps()) throw Error("s6_scan: sequence longer than parameter steps");
  Matrix out(h_prime.rows(), h_prime.cols());
  Vector s = Vector::Zero(params.state_dim());
  for (std::size_t t = 0; t < n; ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    s = params.a_bar[t] * s + params.b_bar[t] * h_prime.row(r).transpose();
    out.row(r) = (params.c[t] * s).transpose();
  }
  return out;
}

Matrix s6_operator_matrix(const MambaParams& params, std::size_t n) {
  if (n == 0 || n > params.steps()) throw Error("s6_operator_matrix: n out of range");
  const Eigen::Index d = params.dim();
  const auto nd = static_cast<Eigen::Index>(n) * d;
  Matrix op = Matrix::Zero(nd, nd);
  for (std::size_t j = 0; j < n; ++j) {
    // Propagated state map from input j: prod_{k=j+1}^{i} A_k B_j.
    Matrix carry = params.b_bar[j];
    for (std::size_t i = j; i < n; ++i) {
      if (i > j) carry = params.a_bar[i] * carry;
      op.block(static_cast<Eigen::Index>(i) * d, static_cast<Eigen::Index>(j) * d, d, d) = params.c[i] * carry;
    }
  }
  return op;
}

Vector stack_tokens(const Matrix& h) {
  Vector v(h.size());
  const Eigen::Index d = h.cols();
  for (Eigen::Index t = 0; t < h.rows(); ++t) v.segment(t * d, d) = h.row(t).transpose();
  return v;
}

Matrix unstack_tokens(const Vector& v, Eigen::Index n, Eigen::Index d) {
  if (v.size() != n * d) throw Error("unstack_tokens: size mismatch");
  Matrix h(n, d);
  for (Eigen::Index t = 0; t < n; ++t) h.row(t) = v.segment(t * d, d).transpose();
  return h;
}

Matrix mamba_input_projection(const Matrix& h, const MambaParams& params) {
  if (h.cols() != params.dim()) throw Error("mamba_block_forward: dimension mismatch");
  Matrix hp = h * params.conv_taps.front().transpose();
  for (std::size_t j = 1; j < params.conv_taps.size(); ++j) {
    const auto shift = static_cast<Eigen::Index>(j);
    if (shift >= h.rows()) break;
    const Eigen::Index rows = h.rows() - shift;
    hp.bottomRows(rows).noalias() += h.topRows(rows) * params.conv_taps[j].transpose();
  }
  apply_phi(hp, params.nonlinearity, silu);
  return hp;
}

Matrix mamba_update(const Matrix& h, const MambaParams& params) {
  Matrix z = h * params.w_z.transpose();
  apply_phi(z, params.nonlinearity, silu);
  const Matrix o = s6_scan(mamba_input_projection(h, params), params);
  return o.cwiseProduct(z);
}

Matrix mamba_block_forward(const Matrix& h, const MambaParams& params) { return h + mamba_update(h, params); }

double spectral_norm(const Matrix& m) {
  if (!m.allFinite()) throw Error("spectral_norm: non-finite matrix");
  if (m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  CounterRng rng(kSpectralSeed, stream_id("spectral_norm"));
  const Eigen::Index cols = m.cols();
  auto random_unit = [&] {
    Vector v(cols);
    for (Eigen::Index i = 0; i < cols; ++i) v(i) = rng.normal();
    return Vector(v / v.norm());
  };
  Vector v = random_unit();
  for (int iter = 1; iter <= kSpectralMaxIter; ++iter) {
    const Vector w = m.transpose() * (m * v);
    const double lambda = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0) {
      v = random_unit();
      continue;
    }
    if ((w - lambda * v).norm() <= kSpectralTol * lambda) return std::sqrt(lambda);
    v = w / wn;
  }
  throw Error("spectral_norm: no convergence after " + std::to_string(kSpectralMaxIter) + " iterations");
}

ActivationStack stack_from_blocks(const Matrix& h0, const std::function<BlockFn(std::size_t)>& make_block,
                                  std::size_t depth, StackMeta meta) {
  if (depth < 1) throw Error("stack_from_blocks: depth must be >= 1");
  std::vector<Matrix> snapshots;
  snapshots.reserve(depth + 1);
  snapshots.push_back(h0);
  for (std::size_t l = 0; l < depth; ++l) {
    const BlockFn block = make_block(l);
    snapshots.push_back(block(snapshots.back()));
  }
  return ActivationStack::from_layers(snapshots, std::move(meta));
}

Matrix sinusoidal_positions(std::size_t n, Eigen::Index d) {
  Matrix p(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * rate;
      p(t, k) = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return p;
}

Matrix embedded_tokens(std::size_t n, Eigen::Index d, std::size_t vocab, std::uint64_t seed) {
  if (n < 1 || d < 1 || vocab < 1) throw Error("embedded_tokens: invalid shape");
  CounterRng pick(seed, stream_id("tokens"));
  Matrix h = sinusoidal_positions(n, d);
  for (Eigen::Index t = 0; t < h.rows(); ++t) {
    // Embedding rows are drawn per token id, so repeated tokens share a row.
    CounterRng row(seed, stream_id("embedding", pick.below(vocab)));
    for (Eigen::Index k = 0; k < d; ++k) h(t, k) += row.normal();
  }
  return h;
}

ActivationStack random_init_stack(const RandomStackSpec& spec) {
  const Matrix h0 = embedded_tokens(spec.n, spec.d, spec.vocab, spec.scheme.seed);
  StackMeta meta{"random-" + to_string(spec.arch) + "-" + to_string(spec.scheme.kind),
                 "seed-" + std::to_string(spec.scheme.seed), "synthetic"};
  if (spec.arch == Architecture::transformer) {
    TransformerShape shape;
    shape.d = spec.d;
    return stack_from_blocks(
        h0,
        [&](std::size_t l) -> BlockFn {
          auto p = std::make_shared<TransformerParams>(init_transformer(spec.scheme, shape, l));
          return [p](const Matrix& h) { return transformer_block_forward(h, *p); };
        },
        spec.depth, std::move(meta));
  }
  MambaShape shape;
  shape.n = spec.n;
  shape.d = spec.d;
  shape.m = spec.state_dim;
  return stack_from_blocks(
      h0,
      [&](std::size_t l) -> BlockFn {
        auto p = std::make_shared<MambaParams>(init_mamba(spec.scheme, shape, l));
        return [p](const Matrix& h) { return mamba_block_forward(h, *p); };
      },
      spec.depth, std::move(meta));
}

}  // namespace repflow
