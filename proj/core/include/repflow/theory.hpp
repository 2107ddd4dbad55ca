#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "repflow/activation_store.hpp"
#include "repflow/blocks.hpp"
#include "repflow/linalg.hpp"

namespace repflow {

/// h0 with iid N(0, sigma^2) entries, [n x d].
struct GaussianInputSpec {
  std::size_t n = 1;
  Eigen::Index d = 1;
  double sigma = 0.1;

  void validate() const;
};

/// E||F(h0)||_F^2 split into ||mu_F||^2 (summed over tokens) and Tr(Sigma_F).
struct StabilityEstimate {
  double mean_sq = 0.0;
  double trace = 0.0;
  double total = 0.0;
  double std_error = 0.0;  // of `total`; 0 for closed forms
  std::size_t trials = 0;
};

/// Draws h0 ~ spec per trial (stream keyed by (seed, trial)), evaluates
/// ||block(h0) - h0||_F^2 and returns its sample mean with standard error.
/// mean_sq is ||mean F||^2 and trace = total - mean_sq. Trials are processed
/// in fixed chunks, so the result does not depend on the thread count.
StabilityEstimate mc_expected_st2(const BlockFn& block, const GaussianInputSpec& spec, std::size_t trials,
                                  std::uint64_t seed);

/// Mean-field attention with phi(x) = x/2:
///   mean_sq = n ||W2 b1 / 2 + b2||^2,
///   trace = s2 Tr(T1 Wv Wv^T T1^T) + n s2 Tr(T2 T2^T) + 2 s2 Tr(T1 Wv T2^T),
/// T2 = W2 W1 / 2, T1 = I + T2.
StabilityEstimate closed_form_trans(const TransformerParams& params, const GaussianInputSpec& spec);

struct MambaClosedFormOptions {
  enum class Form {
    exact,       // S_t sums j <= t (Isserlis, all pairings)
    as_printed,  // S_t sums j < t
  };
  double g_mu = 0.25;
  double g_sigma = 1.0 / 16.0;
  Form form = Form::exact;
};

/// Needs phi(x) = x/2 and a single convolution tap. With
/// M_tj = C_t (A_t ... A_{j+1}) B_j W_h':
///   mean_sq = sum_t || g_mu s2 diag(M_tt W_z^T) ||^2,
///   trace = g_sigma s2^2 sum_t { Tr[(W_z W_z^T) o S_t] + Tr[(M_tt W_z^T) o (W_z M_tt^T)] },
/// S_t = sum_j M_tj M_tj^T.
StabilityEstimate closed_form_mamba(const MambaParams& params, const GaussianInputSpec& spec,
                                    const MambaClosedFormOptions& options = {});

/// M_tj for 0 <= j <= t < n, indexed [t][j].
std::vector<std::vector<Matrix>> mamba_mixing_blocks(const MambaParams& params, std::size_t n);

struct TheoryConstants {
  double alpha_t = 0.0, beta_t = 0.0, gamma_t = 0.0;
  double alpha_m = 0.0, beta_m = 0.0;
  double rho = 0.0, c = 0.0, b = 0.0, h = 0.0, z = 0.0;
  double sigma_sq = 0.0;
  std::size_t n = 0;
  Eigen::Index d = 0;
  bool gamma_t_ge_d = false;

  void validate() const;
};

/// Constants of the Transformer/Mamba gap:
///   alpha_T = ||W2 b1||^2/4 + ||b2||^2, beta_T = ||W2 W1||_F^2,
///   gamma_T = d + Tr(W2 W1) + ||W2 W1||_F^2/4,
///   alpha_M = sum_t ||C_t B_t W_h' W_z^T||_F^2 (t < n),
///   beta_M = z^2 c^2 b^2 h^2 (1 + 1/(1 - rho^2)),
/// rho, c, b = max_t spectral norms of A_t, C_t, B_t; h = ||W_h'||_2; z = ||W_z||_F.
/// Throws "contractivity violated" unless rho < 1.
TheoryConstants stability_gap_constants(const TransformerParams& t_params, const MambaParams& m_params,
                                        const GaussianInputSpec& spec);

/// Positive root in x = sigma^2 of (4 beta_M + alpha_M) x^2 - 4 (beta_T + 4 gamma_T) x - 16 alpha_T.
/// +infinity when 4 beta_M + alpha_M = 0.
double sigma_max(const TheoryConstants& k);

/// Q(n) = a n^3 + b n^2 + d with a = 4 s2 beta_T, b = 16 s2 gamma_T + 16 alpha_T - 4 s2^2 beta_M,
/// d = -s2^2 alpha_M, s2 = k.sigma_sq.
double q_polynomial(const TheoryConstants& k, double n);

/// Upper bound g_sigma s2^2 beta_M n on the Mamba covariance trace.
double mamba_trace_bound(const TheoryConstants& k, double g_sigma = 1.0 / 16.0);

struct OrderingPoint {
  std::size_t n = 0;
  StabilityEstimate trans_mc, mamba_mc;
  StabilityEstimate trans_closed, mamba_closed;
  double q = 0.0;
  double mc_gap = 0.0;            // trans_mc.total - mamba_mc.total
  double mc_gap_std_error = 0.0;
  bool ordering_holds = false;    // mc_gap > 0
  bool q_sign_agrees = false;     // sign(q) == sign(mc_gap)
};

struct OrderingReport {
  std::vector<OrderingPoint> points;
  bool all_hold = false;
  bool all_agree = false;
};

/// Linearized-regime comparison on a grid of sequence lengths. Uses mean-field,
/// phi(x) = x/2 copies of both parameter sets; the Mamba parameters need at
/// least max(n_grid) steps.
OrderingReport ordering_check(const TransformerParams& t_params, const MambaParams& m_params, Eigen::Index d,
                              double sigma, const std::vector<std::size_t>& n_grid, std::size_t trials,
                              std::uint64_t seed);

/// sum_l ||h(l+1) - h(l)||_F^2.
double path_energy(const ActivationStack& stack);
/// (1/(n d)) (1/(L+1)) sum_l ||h(l) - hbar||_F^2 over all L+1 snapshots.
double depth_stability(const ActivationStack& stack);

/// 1 / (4 sin^2(pi / (2 N))) for a chain of N snapshots.
double poincare_constant(std::size_t snapshots);

struct DepthReport {
  double path_energy = 0.0;
  double depth_stability = 0.0;
  double poincare_constant = 0.0;
  double deviation_energy = 0.0;  // sum_l ||h(l) - hbar||_F^2
  double ratio = 0.0;             // deviation_energy / (constant * path_energy), 0 if both vanish
  bool bound_holds = false;
  std::vector<double> lipschitz_products;  // kappa_l, filled when Lipschitz constants are supplied
};

DepthReport poincare_check(const ActivationStack& stack, const std::vector<double>& lambdas = {});

/// kappa_l = prod_{k=l+1}^{L-1} lambda_k (product over the blocks after l).
std::vector<double> lipschitz_products(const std::vector<double>& lambdas);
/// kappa_l * norms_l.
std::vector<double> lipschitz_chain_bound(const std::vector<double>& lambdas, const std::vector<double>& norms);

/// Lipschitz constant of h -> h + F(h) on the Frobenius ball of `radius`
/// for a K = 1, phi(x) = x/2 Mamba block: 1 + ||W_z||_2 ||P||_2 radius / 2, where P is
/// the token-mixing operator (S6 operator with W_h' applied to every token).
double mamba_layer_lipschitz(const MambaParams& params, std::size_t n, double radius);

}  // namespace repflow
