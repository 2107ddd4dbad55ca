#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "repflow/activation_store.hpp"
#include "repflow/linalg.hpp"

namespace repflow {

enum class AttentionMode { softmax, mean_field };

/// exact: GELU in the Transformer FFN, SiLU in the Mamba gates.
/// linear_gain: phi(x) = x / 2, the first-order surrogate of both.
enum class Nonlinearity { exact, linear_gain };

/// Single-head, unmasked, norm-free Transformer block:
///   h + Attn(h) + FFN(h + Attn(h)),  FFN(x) = W2 phi(W1 x + b1) + b2.
/// q_t = W_Q h_t, k_t = W_K h_t, v_t = W_V h_t.
struct TransformerParams {
  Matrix w_q, w_k, w_v;  // [d x d]
  Matrix w_1;            // [d_ff x d]
  Vector b_1;            // [d_ff]
  Matrix w_2;            // [d x d_ff]
  Vector b_2;            // [d]
  AttentionMode attention = AttentionMode::softmax;
  Nonlinearity nonlinearity = Nonlinearity::exact;

  Eigen::Index dim() const noexcept { return w_q.rows(); }
  Eigen::Index ffn_dim() const noexcept { return w_1.rows(); }
  void validate() const;
};

/// Gated Mamba surrogate with expansion 1 and identity output map:
///   h + S6(h') o z,  z_t = phi(W_z h_t),  h'_t = phi(sum_j tap_j h_{t-j}),
/// with the S6 recursion s_t = A_t s_{t-1} + B_t h'_t, o_t = C_t s_t, s_0 = 0.
/// The per-step A_t, B_t, C_t are given sequences, one entry per position.
struct MambaParams {
  std::vector<Matrix> a_bar;      // n x [m x m]
  std::vector<Matrix> b_bar;      // n x [m x d]
  std::vector<Matrix> c;          // n x [d x m]
  std::vector<Matrix> conv_taps;  // K x [d x d]; tap j = W_{c_j} W_h, tap 0 = W_h'
  Matrix w_z;                     // [d x d]
  Nonlinearity nonlinearity = Nonlinearity::exact;

  std::size_t steps() const noexcept { return a_bar.size(); }
  Eigen::Index dim() const noexcept { return w_z.rows(); }
  Eigen::Index state_dim() const noexcept { return a_bar.empty() ? 0 : a_bar.front().rows(); }
  std::size_t kernel_size() const noexcept { return conv_taps.size(); }
  const Matrix& w_hprime() const { return conv_taps.front(); }

  /// The first `n` steps (same projections).
  MambaParams prefix(std::size_t n) const;
  void validate() const;
};

struct InitScheme {
  enum class Kind { gaussian, xavier, he };
  Kind kind = Kind::xavier;
  double sigma_w = 0.02;  // gaussian only
  std::uint64_t seed = 0;
};

InitScheme::Kind parse_init_kind(std::string_view name);
std::string to_string(InitScheme::Kind kind);

/// [rows x cols] matrix acting as W x, so fan_in = cols, fan_out = rows.
///   gaussian: N(0, sigma_w^2); xavier: U(+-sqrt(6/(fan_in+fan_out))); he: N(0, 2/fan_in).
/// `stream` selects an independent Philox stream under scheme.seed.
Matrix init_matrix(const InitScheme& scheme, Eigen::Index rows, Eigen::Index cols, std::uint64_t stream);

struct TransformerShape {
  Eigen::Index d = 0;
  Eigen::Index d_ff = 0;  // 0 selects 4d
  AttentionMode attention = AttentionMode::softmax;
  Nonlinearity nonlinearity = Nonlinearity::exact;
  double bias_std = 0.0;  // biases ~ N(0, bias_std^2); 0 gives zero biases
};

struct MambaShape {
  std::size_t n = 0;  // sequence length (number of S6 steps)
  Eigen::Index d = 0;
  Eigen::Index m = 16;
  std::size_t kernel = 1;
  Nonlinearity nonlinearity = Nonlinearity::exact;
};

/// `layer` picks fresh parameter streams so stacked layers are independent.
TransformerParams init_transformer(const InitScheme& scheme, const TransformerShape& shape, std::size_t layer = 0);

/// A_t = exp(dt_t * A) with A = -diag(1..m), dt_t log-uniform in [1e-3, 1e-1],
/// B_t = dt_t * B_t' ; B_t', C_t and projections drawn from `scheme`.
MambaParams init_mamba(const InitScheme& scheme, const MambaShape& shape, std::size_t layer = 0);

/// Like init_mamba but with dense A_t rescaled to spectral norm exactly `rho`.
MambaParams init_mamba_contractive(const InitScheme& scheme, const MambaShape& shape, double rho,
                                   std::size_t layer = 0);

Matrix attention_forward(const Matrix& h, const TransformerParams& params);
Matrix ffn_forward(const Matrix& x, const TransformerParams& params);
/// F(h) = Attn(h) + FFN(h + Attn(h)), the residual update.
Matrix transformer_update(const Matrix& h, const TransformerParams& params);
Matrix transformer_block_forward(const Matrix& h, const TransformerParams& params);

/// Sequential S6 recursion over the rows of h_prime.
Matrix s6_scan(const Matrix& h_prime, const MambaParams& params);

/// Block-lower-triangular [n*d x n*d] operator whose (i, j) block is
/// C_i (A_i ... A_{j+1}) B_j for i >= j. Acts on tokens stacked row-major.
Matrix s6_operator_matrix(const MambaParams& params, std::size_t n);

/// The row-major stacking of a [n x d] matrix that s6_operator_matrix acts on.
Vector stack_tokens(const Matrix& h);
Matrix unstack_tokens(const Vector& v, Eigen::Index n, Eigen::Index d);

/// h'_t before the S6 scan (convolution taps plus nonlinearity).
Matrix mamba_input_projection(const Matrix& h, const MambaParams& params);
/// F(h) = S6(h') o z, the residual update.
Matrix mamba_update(const Matrix& h, const MambaParams& params);
Matrix mamba_block_forward(const Matrix& h, const MambaParams& params);

/// Largest singular value by power iteration on M^T M. Stops when the
/// eigen-residual falls below 1e-10 relative; throws after 10000 iterations.
double spectral_norm(const Matrix& m);

double gelu(double x) noexcept;
double silu(double x) noexcept;

using BlockFn = std::function<Matrix(const Matrix&)>;

/// Applies make_block(l) for l = 0..depth-1 and records every snapshot.
ActivationStack stack_from_blocks(const Matrix& h0, const std::function<BlockFn(std::size_t)>& make_block,
                                  std::size_t depth, StackMeta meta = {});

/// Token embedding plus sinusoidal positional encoding for a random token
/// sequence: h0_t = E[x_t] + p_t with E ~ N(0, 1) over a `vocab`-sized table.
Matrix embedded_tokens(std::size_t n, Eigen::Index d, std::size_t vocab, std::uint64_t seed);
Matrix sinusoidal_positions(std::size_t n, Eigen::Index d);

enum class Architecture { transformer, mamba };
Architecture parse_architecture(std::string_view name);
std::string to_string(Architecture arch);

struct RandomStackSpec {
  Architecture arch = Architecture::transformer;
  InitScheme scheme;
  std::size_t depth = 8;
  std::size_t n = 128;
  Eigen::Index d = 64;
  Eigen::Index state_dim = 16;
  std::size_t vocab = 1000;
};

/// Randomly initialized stack: embedded_tokens input, fresh exact-mode
/// parameters per layer.
ActivationStack random_init_stack(const RandomStackSpec& spec);

}  // namespace repflow
