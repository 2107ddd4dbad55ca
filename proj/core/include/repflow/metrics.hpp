#pragma once

#include "repflow/activation_store.hpp"
#include "repflow/linalg.hpp"

namespace repflow {

/// Cosine of each token with itself one snapshot later: entry (l, t) compares
/// snapshot l and l+1 at position t. Shape [layers-1 x tokens].
Matrix layerwise_token_similarity(const ActivationStack& stack);

/// Mean pairwise cosine among the rows of `layer`, self-pairs excluded.
double inter_token_similarity(const Matrix& layer);

/// inter_token_similarity of every snapshot, length layers().
Vector inter_token_profile(const ActivationStack& stack);

/// Linear CKA with column centering:
///   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F),
/// clamped to [0, 1]. Throws "degenerate input" if either centered matrix is 0.
double linear_cka(const Matrix& x, const Matrix& y);

/// Symmetric [layers x layers] CKA between all snapshot pairs; diagonal is 1.
Matrix cka_matrix(const ActivationStack& stack);

/// Mean absolute midpoint residual |h(l+1) - (h(l) + h(l+2))/2| over all
/// consecutive triples, tokens and dims. Needs >= 3 snapshots.
double smoothness(const ActivationStack& stack);

/// Mean over (token, dim) of the RMS deviation of the snapshots from their
/// depth mean, taken over every stored snapshot.
double stability(const ActivationStack& stack);

struct MetricReport {
  Matrix layerwise_cosine;  // [layers-1 x tokens]
  Vector inter_token;       // [layers]
  Matrix cka;               // [layers x layers]
  double smoothness = 0.0;  // NaN when the stack has fewer than 3 snapshots
  double stability = 0.0;
};

MetricReport compute_metrics(const ActivationStack& stack);

}  // namespace repflow
