#include "repflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "repflow/error.hpp"
#include "repflow/parallel.hpp"

namespace repflow {
namespace {

Matrix centered_columns(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

}  // namespace

Matrix layerwise_token_similarity(const ActivationStack& stack) {
  const std::size_t transitions = stack.layers() - 1;
  const std::size_t n = stack.tokens();
  Matrix out(static_cast<Eigen::Index>(transitions), static_cast<Eigen::Index>(n));
  for (std::size_t l = 0; l < transitions; ++l) {
    for (std::size_t t = 0; t < n; ++t) {
      const Vector a = stack.token(l, t);
      const Vector b = stack.token(l + 1, t);
      const double na = a.norm();
      const double nb = b.norm();
      if (na == 0.0 || nb == 0.0) {
        throw Error("zero-norm token vector at layer " + std::to_string(na == 0.0 ? l : l + 1) + ", token " +
                    std::to_string(t));
      }
      out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(t)) = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    }
  }
  return out;
}

double inter_token_similarity(const Matrix& layer) {
  const Eigen::Index n = layer.rows();
  if (n < 2) throw Error("inter-token similarity needs at least 2 tokens");
  Matrix unit = layer;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = layer.row(i).norm();
    if (norm == 0.0) throw Error("zero-norm token vector at row " + std::to_string(i));
    unit.row(i) /= norm;
  }
  const Matrix gram = unit * unit.transpose();
  double upper = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) upper += gram(i, j);
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return upper / pairs;
}

Vector inter_token_profile(const ActivationStack& stack) {
  Vector out(static_cast<Eigen::Index>(stack.layers()));
  for (std::size_t l = 0; l < stack.layers(); ++l) {
    out(static_cast<Eigen::Index>(l)) = inter_token_similarity(stack.layer(l));
  }
  return out;
}

double linear_cka(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw Error("linear_cka: row counts differ");
  if (x.rows() < 2) throw Error("linear_cka needs at least 2 rows");
  const Matrix xc = centered_columns(x);
  const Matrix yc = centered_columns(y);
  if (xc.squaredNorm() == 0.0 || yc.squaredNorm() == 0.0) throw Error("linear_cka: degenerate input");
  const double cross = (yc.transpose() * xc).squaredNorm();
  const double self_x = (xc.transpose() * xc).norm();
  const double self_y = (yc.transpose() * yc).norm();
  return std::clamp(cross / (self_x * self_y), 0.0, 1.0);
}

Matrix cka_matrix(const ActivationStack& stack) {
  const std::size_t count = stack.layers();
  std::vector<Matrix> snapshots;
  snapshots.reserve(count);
  for (std::size_t l = 0; l < count; ++l) snapshots.push_back(stack.layer(l));

  const auto size = static_cast<Eigen::Index>(count);
  Matrix out = Matrix::Identity(size, size);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = i + 1; j < count; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    values[p] = linear_cka(snapshots[pairs[p].first], snapshots[pairs[p].second]);
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(pairs[p].first);
    const auto j = static_cast<Eigen::Index>(pairs[p].second);
    out(i, j) = out(j, i) = values[p];
  }
  return out;
}

double smoothness(const ActivationStack& stack) {
  const std::size_t snapshots = stack.layers();
  if (snapshots < 3) throw Error("smoothness needs at least 3 snapshots");
  const std::size_t n = stack.tokens();
  const std::size_t d = stack.dims();
  const std::size_t triples = snapshots - 2;
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      double residuals = 0.0;
      for (std::size_t l = 0; l < triples; ++l) {
        residuals += std::abs(stack.at(l + 1, t, k) - 0.5 * (stack.at(l, t, k) + stack.at(l + 2, t, k)));
      }
      total += residuals / static_cast<double>(triples);
    }
  }
  return total / static_cast<double>(n * d);
}

double stability(const ActivationStack& stack) {
  const std::size_t snapshots = stack.layers();
  const std::size_t n = stack.tokens();
  const std::size_t d = stack.dims();
  const auto count = static_cast<double>(snapshots);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0.0;
      for (std::size_t l = 0; l < snapshots; ++l) mean += stack.at(l, t, k);
      mean /= count;
      double sq = 0.0;
      for (std::size_t l = 0; l < snapshots; ++l) {
        const double dev = stack.at(l, t, k) - mean;
        sq += dev * dev;
      }
      total += std::sqrt(sq / count);
    }
  }
  return total / static_cast<double>(n * d);
}

MetricReport compute_metrics(const ActivationStack& stack) {
  MetricReport report;
  report.layerwise_cosine = layerwise_token_similarity(stack);
  report.inter_token = inter_token_profile(stack);
  report.cka = cka_matrix(stack);
  report.smoothness = stack.layers() >= 3 ? smoothness(stack) : std::numeric_limits<double>::quiet_NaN();
  report.stability = stability(stack);
  return report;
}

}  // namespace repflow
