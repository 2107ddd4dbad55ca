#include "repflow/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "repflow/error.hpp"
#include "repflow/parallel.hpp"
#include "repflow/random.hpp"

namespace repflow {

namespace {

constexpr std::size_t kChunk = 2048;
constexpr std::size_t kMinTrials = 1000;

struct ChunkStats {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  Matrix sum_f;
};

void check_square(const char* what, const Matrix& m, Eigen::Index d) {
  if (m.rows() != d || m.cols() != d) throw Error(std::string(what) + ": shape mismatch");
}

TransformerParams linearized_regime(TransformerParams p) {
  p.attention = AttentionMode::mean_field;
  p.nonlinearity = Nonlinearity::linear_gain;
  return p;
}

MambaParams linearized_regime(MambaParams p) {
  p.nonlinearity = Nonlinearity::linear_gain;
  return p;
}

}  // namespace

void GaussianInputSpec::validate() const {
  if (n < 1 || d < 1) throw Error("input spec: n and d must be >= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("input spec: sigma must be positive");
}

StabilityEstimate mc_expected_st2(const BlockFn& block, const GaussianInputSpec& spec, std::size_t trials,
                                  std::uint64_t seed) {
  spec.validate();
  if (trials < kMinTrials) throw Error("mc_expected_st2: need at least " + std::to_string(kMinTrials) + " trials");
  const auto n = static_cast<Eigen::Index>(spec.n);
  const Eigen::Index d = spec.d;
  const std::size_t chunks = (trials + kChunk - 1) / kChunk;
  std::vector<ChunkStats> stats(chunks);

  parallel_for(chunks, [&](std::size_t c) {
    ChunkStats& s = stats[c];
    s.sum_f = Matrix::Zero(n, d);
    Matrix h(n, d);
    const std::size_t end = std::min(trials, (c + 1) * kChunk);
    for (std::size_t trial = c * kChunk; trial < end; ++trial) {
      CounterRng rng(seed, stream_id("mc.trial", trial));
      for (Eigen::Index t = 0; t < n; ++t)
        for (Eigen::Index k = 0; k < d; ++k) h(t, k) = spec.sigma * rng.normal();
      const Matrix out = block(h);
      if (out.rows() != n || out.cols() != d) throw Error("mc_expected_st2: block changed the shape");
      const Matrix f = out - h;
      const double x = f.squaredNorm();
      if (!std::isfinite(x)) throw Error("non-finite block output at trial " + std::to_string(trial));
      ++s.count;
      const double delta = x - s.mean;
      s.mean += delta / static_cast<double>(s.count);
      s.m2 += delta * (x - s.mean);
      s.sum_f += f;
    }
  });

  // Chan et al. pairwise merge, always in chunk order.
  ChunkStats all = std::move(stats.front());
  for (std::size_t c = 1; c < chunks; ++c) {
    const ChunkStats& s = stats[c];
    const auto na = static_cast<double>(all.count);
    const auto nb = static_cast<double>(s.count);
    const double delta = s.mean - all.mean;
    const double nt = na + nb;
    all.mean += delta * nb / nt;
    all.m2 += s.m2 + delta * delta * na * nb / nt;
    all.count += s.count;
    all.sum_f += s.sum_f;
  }
  StabilityEstimate est;
  est.trials = trials;
  est.total = all.mean;
  const auto t = static_cast<double>(trials);
  est.std_error = std::sqrt(all.m2 / (t - 1.0) / t);
  est.mean_sq = (all.sum_f / t).squaredNorm();
  est.trace = est.total - est.mean_sq;
  return est;
}

StabilityEstimate closed_form_trans(const TransformerParams& params, const GaussianInputSpec& spec) {
  spec.validate();
  params.validate();
  if (params.attention != AttentionMode::mean_field || params.nonlinearity != Nonlinearity::linear_gain)
    throw Error("closed_form_trans: needs mean_field attention and linear_gain nonlinearity");
  if (params.dim() != spec.d) throw Error("closed_form_trans: shape mismatch between params and input");
  const Eigen::Index d = spec.d;
  const auto n = static_cast<double>(spec.n);
  const double s2 = spec.sigma * spec.sigma;
  const Matrix t2 = 0.5 * params.w_2 * params.w_1;
  const Matrix t1 = Matrix::Identity(d, d) + t2;
  const Matrix t1v = t1 * params.w_v;
  const Vector mu = 0.5 * params.w_2 * params.b_1 + params.b_2;

  StabilityEstimate est;
  est.mean_sq = n * mu.squaredNorm();
  est.trace = s2 * t1v.squaredNorm() + n * s2 * t2.squaredNorm() + 2.0 * s2 * (t1v * t2.transpose()).trace();
  est.total = est.mean_sq + est.trace;
  return est;
}

std::vector<std::vector<Matrix>> mamba_mixing_blocks(const MambaParams& params, std::size_t n) {
  if (n == 0 || n > params.steps()) throw Error("mamba_mixing_blocks: n out of range");
  const Matrix& wh = params.w_hprime();
  std::vector<std::vector<Matrix>> m(n);
  for (std::size_t t = 0; t < n; ++t) m[t].resize(t + 1);
  for (std::size_t j = 0; j < n; ++j) {
    Matrix carry = params.b_bar[j] * wh;
    for (std::size_t t = j; t < n; ++t) {
      if (t > j) carry = params.a_bar[t] * carry;
      m[t][j] = params.c[t] * carry;
    }
  }
  return m;
}

StabilityEstimate closed_form_mamba(const MambaParams& params, const GaussianInputSpec& spec,
                                    const MambaClosedFormOptions& options) {
  spec.validate();
  params.validate();
  if (params.nonlinearity != Nonlinearity::linear_gain)
    throw Error("closed_form_mamba: needs linear_gain nonlinearity");
  if (params.kernel_size() != 1) throw Error("closed_form_mamba: needs a single convolution tap");
  if (params.dim() != spec.d) throw Error("closed_form_mamba: shape mismatch between params and input");
  if (spec.n > params.steps()) throw Error("closed_form_mamba: shape mismatch, sequence longer than parameter steps");

  const double s2 = spec.sigma * spec.sigma;
  const auto blocks = mamba_mixing_blocks(params, spec.n);
  const Vector wz_diag = (params.w_z * params.w_z.transpose()).diagonal();
  StabilityEstimate est;
  for (std::size_t t = 0; t < spec.n; ++t) {
    const Matrix& mtt = blocks[t][t];
    const Vector cross = (mtt * params.w_z.transpose()).diagonal();
    est.mean_sq += (options.g_mu * s2 * cross).squaredNorm();
    const std::size_t upto = options.form == MambaClosedFormOptions::Form::exact ? t + 1 : t;
    Vector s_diag = Vector::Zero(spec.d);
    for (std::size_t j = 0; j < upto; ++j) s_diag += blocks[t][j].rowwise().squaredNorm();
    // diag(M W_z^T) and diag(W_z M^T) coincide.
    est.trace += wz_diag.dot(s_diag) + cross.squaredNorm();
  }
  est.trace *= options.g_sigma * s2 * s2;
  est.total = est.mean_sq + est.trace;
  return est;
}

void TheoryConstants::validate() const {
  const double vals[] = {alpha_t, beta_t, gamma_t, alpha_m, beta_m, c, b, h, z, sigma_sq};
  for (const double v : vals)
    if (!std::isfinite(v) || v < 0.0) throw Error("theory constants must be finite and non-negative");
  if (!(rho >= 0.0 && rho < 1.0)) throw Error("contractivity violated: rho = " + std::to_string(rho));
}

TheoryConstants stability_gap_constants(const TransformerParams& t_params, const MambaParams& m_params,
                                        const GaussianInputSpec& spec) {
  spec.validate();
  t_params.validate();
  m_params.validate();
  const Eigen::Index d = spec.d;
  if (t_params.dim() != d || m_params.dim() != d) throw Error("stability_gap_constants: dimension mismatch");
  if (spec.n > m_params.steps()) throw Error("stability_gap_constants: sequence longer than parameter steps");
  check_square("w_z", m_params.w_z, d);

  TheoryConstants k;
  k.n = spec.n;
  k.d = d;
  k.sigma_sq = spec.sigma * spec.sigma;
  const Matrix w21 = t_params.w_2 * t_params.w_1;
  k.alpha_t = 0.25 * (t_params.w_2 * t_params.b_1).squaredNorm() + t_params.b_2.squaredNorm();
  k.beta_t = w21.squaredNorm();
  k.gamma_t = static_cast<double>(d) + w21.trace() + 0.25 * w21.squaredNorm();
  k.gamma_t_ge_d = k.gamma_t >= static_cast<double>(d);

  const Matrix hz = m_params.w_hprime() * m_params.w_z.transpose();
  for (std::size_t t = 0; t < spec.n; ++t) {
    k.rho = std::max(k.rho, spectral_norm(m_params.a_bar[t]));
    k.c = std::max(k.c, spectral_norm(m_params.c[t]));
    k.b = std::max(k.b, spectral_norm(m_params.b_bar[t]));
    k.alpha_m += (m_params.c[t] * m_params.b_bar[t] * hz).squaredNorm();
  }
  if (!(k.rho < 1.0)) throw Error("contractivity violated: max_t ||A_t||_2 = " + std::to_string(k.rho));
  k.h = spectral_norm(m_params.w_hprime());
  k.z = m_params.w_z.norm();
  k.beta_m = k.z * k.z * k.c * k.c * k.b * k.b * k.h * k.h * (1.0 + 1.0 / (1.0 - k.rho * k.rho));
  if (k.gamma_t < 0.0) throw Error("stability_gap_constants: gamma_T is negative");
  return k;
}

double sigma_max(const TheoryConstants& k) {
  k.validate();
  const double a = 4.0 * k.beta_m + k.alpha_m;
  const double b = 4.0 * (k.beta_t + 4.0 * k.gamma_t);
  const double c = 16.0 * k.alpha_t;
  if (a == 0.0) return std::numeric_limits<double>::infinity();
  const double disc = std::sqrt(b * b + 4.0 * a * c);
  // b >= 0, so the "+" root never cancels; the 2c/(disc - b) form would.
  return (b + disc) / (2.0 * a);
}

double q_polynomial(const TheoryConstants& k, double n) {
  const double s2 = k.sigma_sq;
  const double a = 4.0 * s2 * k.beta_t;
  const double b = 16.0 * s2 * k.gamma_t + 16.0 * k.alpha_t - 4.0 * s2 * s2 * k.beta_m;
  const double d = -s2 * s2 * k.alpha_m;
  return (a * n + b) * n * n + d;
}

double mamba_trace_bound(const TheoryConstants& k, double g_sigma) {
  return g_sigma * k.sigma_sq * k.sigma_sq * k.beta_m * static_cast<double>(k.n);
}

OrderingReport ordering_check(const TransformerParams& t_params, const MambaParams& m_params, Eigen::Index d,
                              double sigma, const std::vector<std::size_t>& n_grid, std::size_t trials,
                              std::uint64_t seed) {
  if (n_grid.empty()) throw Error("ordering_check: empty n grid");
  const TransformerParams tp = linearized_regime(t_params);
  const MambaParams mp_full = linearized_regime(m_params);
  OrderingReport report;
  report.all_hold = true;
  report.all_agree = true;
  for (const std::size_t n : n_grid) {
    const GaussianInputSpec spec{n, d, sigma};
    const MambaParams mp = mp_full.prefix(n);
    OrderingPoint pt;
    pt.n = n;
    const TheoryConstants k = stability_gap_constants(tp, mp, spec);
    pt.q = q_polynomial(k, static_cast<double>(n));
    pt.trans_closed = closed_form_trans(tp, spec);
    pt.mamba_closed = closed_form_mamba(mp, spec);
    pt.trans_mc = mc_expected_st2([&](const Matrix& h) { return transformer_block_forward(h, tp); }, spec, trials,
                                  seed);
    pt.mamba_mc = mc_expected_st2([&](const Matrix& h) { return mamba_block_forward(h, mp); }, spec, trials, seed);
    pt.mc_gap = pt.trans_mc.total - pt.mamba_mc.total;
    pt.mc_gap_std_error = std::hypot(pt.trans_mc.std_error, pt.mamba_mc.std_error);
    pt.ordering_holds = pt.mc_gap > 0.0;
    pt.q_sign_agrees = (pt.q > 0.0) == (pt.mc_gap > 0.0);
    report.all_hold = report.all_hold && pt.ordering_holds;
    report.all_agree = report.all_agree && pt.q_sign_agrees;
    report.points.push_back(std::move(pt));
  }
  return report;
}

namespace {

Matrix depth_mean(const ActivationStack& stack) {
  Matrix mean = Matrix::Zero(static_cast<Eigen::Index>(stack.tokens()), static_cast<Eigen::Index>(stack.dims()));
  for (std::size_t l = 0; l < stack.layers(); ++l) mean += stack.layer(l);
  return mean / static_cast<double>(stack.layers());
}

double deviation_energy(const ActivationStack& stack) {
  const Matrix mean = depth_mean(stack);
  double e = 0.0;
  for (std::size_t l = 0; l < stack.layers(); ++l) e += (stack.layer(l) - mean).squaredNorm();
  return e;
}

}  // namespace

double path_energy(const ActivationStack& stack) {
  double e = 0.0;
  Matrix prev = stack.layer(0);
  for (std::size_t l = 1; l < stack.layers(); ++l) {
    Matrix cur = stack.layer(l);
    e += (cur - prev).squaredNorm();
    prev = std::move(cur);
  }
  return e;
}

double depth_stability(const ActivationStack& stack) {
  const auto nd = static_cast<double>(stack.tokens() * stack.dims());
  return deviation_energy(stack) / (nd * static_cast<double>(stack.layers()));
}

double poincare_constant(std::size_t snapshots) {
  if (snapshots < 2) throw Error("poincare_constant: need at least two snapshots");
  const double s = std::sin(std::numbers::pi / (2.0 * static_cast<double>(snapshots)));
  return 1.0 / (4.0 * s * s);
}

DepthReport poincare_check(const ActivationStack& stack, const std::vector<double>& lambdas) {
  DepthReport r;
  r.path_energy = path_energy(stack);
  r.deviation_energy = deviation_energy(stack);
  r.depth_stability = r.deviation_energy / (static_cast<double>(stack.tokens() * stack.dims() * stack.layers()));
  r.poincare_constant = poincare_constant(stack.layers());
  const double rhs = r.poincare_constant * r.path_energy;
  r.ratio = rhs > 0.0 ? r.deviation_energy / rhs : 0.0;
  r.bound_holds = r.deviation_energy <= rhs + 1e-12 * std::max(r.deviation_energy, rhs);
  if (!lambdas.empty()) {
    if (lambdas.size() != stack.layers() - 1)
      throw Error("poincare_check: need one Lipschitz constant per block");
    r.lipschitz_products = lipschitz_products(lambdas);
  }
  return r;
}

std::vector<double> lipschitz_products(const std::vector<double>& lambdas) {
  std::vector<double> kappa(lambdas.size());
  double prod = 1.0;
  for (std::size_t i = lambdas.size(); i-- > 0;) {
    kappa[i] = prod;
    if (lambdas[i] < 0.0) throw Error("lipschitz constants must be non-negative");
    prod *= lambdas[i];
  }
  return kappa;
}

std::vector<double> lipschitz_chain_bound(const std::vector<double>& lambdas, const std::vector<double>& norms) {
  if (lambdas.size() != norms.size()) throw Error("lipschitz_chain_bound: length mismatch");
  std::vector<double> out = lipschitz_products(lambdas);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= norms[i];
  return out;
}

double mamba_layer_lipschitz(const MambaParams& params, std::size_t n, double radius) {
  if (params.nonlinearity != Nonlinearity::linear_gain || params.kernel_size() != 1)
    throw Error("mamba_layer_lipschitz: needs linear_gain and a single convolution tap");
  if (radius < 0.0) throw Error("mamba_layer_lipschitz: negative radius");
  const Eigen::Index d = params.dim();
  Matrix op = s6_operator_matrix(params, n);
  const Matrix& wh = params.w_hprime();
  for (std::size_t j = 0; j < n; ++j) {
    const auto col = static_cast<Eigen::Index>(j) * d;
    op.middleCols(col, d) = op.middleCols(col, d) * wh;
  }
  return 1.0 + 0.5 * spectral_norm(params.w_z) * spectral_norm(op) * radius;
}

}  // namespace repflow
