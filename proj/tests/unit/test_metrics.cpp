#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "repflow/error.hpp"
#include "repflow/metrics.hpp"
#include "test_util.hpp"

using namespace repflow;

namespace {

using Tensor = std::vector<std::vector<std::vector<double>>>;  // [layer][token][dim]

ActivationStack make_stack(const Tensor& t) {
  std::vector<double> data;
  for (const auto& layer : t)
    for (const auto& tok : layer)
      for (const double v : tok) data.push_back(v);
  return ActivationStack(t.size(), t[0].size(), t[0][0].size(), data);
}

Tensor random_tensor(std::size_t l, std::size_t n, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed, 3);
  Tensor t(l, std::vector<std::vector<double>>(n, std::vector<double>(d)));
  for (auto& layer : t)
    for (auto& tok : layer)
      for (double& v : tok) v = rng.normal();
  return t;
}

double naive_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return ab / std::sqrt(aa * bb);
}

double naive_inter(const std::vector<std::vector<double>>& rows) {
  double s = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) s += naive_cos(rows[i], rows[j]), ++pairs;
  return s / pairs;
}

// Linear CKA written as HSIC ratios over centered Gram matrices K = X X^T.
double naive_cka(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
  const std::size_t n = x.size();
  auto gram = [&](const std::vector<std::vector<double>>& m) {
    std::vector<std::vector<double>> k(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i][j] = std::inner_product(m[i].begin(), m[i].end(), m[j].begin(), 0.0);
    // H K H with H = I - 11^T/n
    std::vector<double> row(n, 0), col(n, 0);
    double all = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) row[i] += k[i][j] / n, col[j] += k[i][j] / n, all += k[i][j] / (n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) k[i][j] = k[i][j] - row[i] - col[j] + all;
    return k;
  };
  const auto kx = gram(x), ky = gram(y);
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) xy += kx[i][j] * ky[i][j], xx += kx[i][j] * kx[i][j], yy += ky[i][j] * ky[i][j];
  return xy / std::sqrt(xx * yy);
}

double naive_smoothness(const Tensor& t) {
  const std::size_t l = t.size(), n = t[0].size(), d = t[0][0].size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double r = 0;
      for (std::size_t j = 0; j + 2 < l; ++j) r += std::abs(t[j + 1][i][k] - (t[j][i][k] + t[j + 2][i][k]) / 2);
      s += r / (l - 2);
    }
  return s / (n * d);
}

double naive_stability(const Tensor& t) {
  const std::size_t l = t.size(), n = t[0].size(), d = t[0][0].size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0;
      for (std::size_t j = 0; j < l; ++j) mean += t[j][i][k] / l;
      double v = 0;
      for (std::size_t j = 0; j < l; ++j) v += (t[j][i][k] - mean) * (t[j][i][k] - mean) / l;
      s += std::sqrt(v);
    }
  return s / (n * d);
}

Matrix orthogonal(Eigen::Index d, std::uint64_t seed) {
  const Eigen::HouseholderQR<Matrix> qr(test::gaussian(d, d, seed, 17));
  return qr.householderQ();
}

}  // namespace

TEST_CASE("layerwise cosine examples") {
  CHECK(layerwise_token_similarity(make_stack({{{1, 2}, {3, -1}}, {{1, 2}, {3, -1}}})).isOnes());
  const Matrix neg = layerwise_token_similarity(make_stack({{{1, 2}, {3, -1}}, {{-1, -2}, {-3, 1}}}));
  CHECK(neg.isApprox(-Matrix::Ones(1, 2)));
  const Matrix c = layerwise_token_similarity(make_stack({{{1, 0}}, {{1, 1}}}));
  CHECK(c(0, 0) == doctest::Approx(0.70710678118654752).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(layerwise_token_similarity(make_stack({{{1, 0}, {1, 1}}, {{1, 1}, {0, 0}}})),
                       doctest::Contains("layer 1, token 1"), Error);
}

TEST_CASE("inter-token similarity examples") {
  Matrix same(3, 2);
  same << 2, 1, 2, 1, 2, 1;
  CHECK(inter_token_similarity(same) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(inter_token_similarity(Matrix::Identity(2, 2)) == 0.0);
  Matrix three(3, 2);
  three << 1, 0, 1, 1, 0, 1;
  CHECK(inter_token_similarity(three) == doctest::Approx(0.47140452079103168).epsilon(1e-12));
  CHECK_THROWS_AS(inter_token_similarity(Matrix::Ones(1, 3)), Error);
  Matrix zero_row = Matrix::Ones(3, 2);
  zero_row.row(1).setZero();
  CHECK_THROWS_AS(inter_token_similarity(zero_row), Error);
}

TEST_CASE("cosine metrics ignore per-token positive rescaling") {
  const Tensor t = random_tensor(3, 5, 4, 11);
  Tensor scaled = t;
  CounterRng rng(11, 99);
  for (auto& layer : scaled)
    for (auto& tok : layer) {
      const double s = rng.uniform(0.1, 10.0);
      for (double& v : tok) v *= s;
    }
  const auto a = make_stack(t), b = make_stack(scaled);
  CHECK((layerwise_token_similarity(a) - layerwise_token_similarity(b)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((inter_token_profile(a) - inter_token_profile(b)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear CKA examples and invariances") {
  const Matrix x = test::gaussian(50, 6, 1);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    const Matrix xd = test::gaussian(40, 5, 1000 + draw);
    const Matrix r = orthogonal(5, draw);
    const Eigen::RowVectorXd c = test::gaussian(1, 5, 2000 + draw) * 10.0;
    const Matrix y = (xd * r).rowwise() + c;
    REQUIRE(std::abs(linear_cka(xd, y) - linear_cka(xd, xd)) < 1e-6);
  }
  // Independent Gaussians: E[CKA] is about d/n, far below 0.05 at n = 1000.
  CHECK(linear_cka(test::gaussian(1000, 4, 5), test::gaussian(1000, 4, 6)) < 0.05);
  CHECK_THROWS_WITH_AS(linear_cka(Matrix::Ones(5, 2), x.topRows(5)), doctest::Contains("degenerate input"), Error);
}

TEST_CASE("CKA matrix") {
  const Tensor same(4, {{1, 2}, {0, 1}, {3, -1}});
  CHECK((cka_matrix(make_stack(same)) - Matrix::Ones(4, 4)).cwiseAbs().maxCoeff() < 1e-12);

  const ActivationStack two = make_stack(random_tensor(2, 6, 3, 8));
  const Matrix m2 = cka_matrix(two);
  CHECK(m2(0, 1) == linear_cka(two.layer(0), two.layer(1)));
  CHECK(m2(0, 0) == 1.0);

  const ActivationStack five = make_stack(random_tensor(5, 9, 4, 9));
  const Matrix m5 = cka_matrix(five);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(m5(i, i) - 1.0) < 1e-9);
    for (int j = 0; j < 5; ++j) {
      CHECK(m5(i, j) == m5(j, i));
      CHECK(m5(i, j) >= 0.0);
      CHECK(m5(i, j) <= 1.0);
      if (i != j) CHECK(std::abs(m5(i, j) - linear_cka(five.layer(i), five.layer(j))) < 1e-14);
    }
  }
}

TEST_CASE("smoothness examples") {
  Tensor affine(5, std::vector<std::vector<double>>(2, std::vector<double>(3)));
  for (int l = 0; l < 5; ++l)
    for (int t = 0; t < 2; ++t)
      for (int k = 0; k < 3; ++k) affine[l][t][k] = l * (0.5 + t - k) + 2.0 * k;
  CHECK(smoothness(make_stack(affine)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(smoothness(make_stack(Tensor(4, {{1, 2}, {3, 4}}))) == 0.0);

  // (-1)^l a over 3 snapshots: residual |−a − a| = 2|a| per dim.
  const std::vector<double> a{0.5, -2.0, 1.25};
  Tensor alt(3, std::vector<std::vector<double>>(1, a));
  for (double& v : alt[1][0]) v = -v;
  CHECK(smoothness(make_stack(alt)) == doctest::Approx(2.0 * (0.5 + 2.0 + 1.25) / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(smoothness(make_stack(Tensor(2, {{1.0}}))), Error);
}

TEST_CASE("smoothness vanishes exactly on midpoint chains") {
  Tensor t = random_tensor(6, 3, 2, 21);
  // Force every interior snapshot to the midpoint of its neighbours by
  // building an affine chain from the first two snapshots.
  for (std::size_t l = 2; l < t.size(); ++l)
    for (std::size_t i = 0; i < t[0].size(); ++i)
      for (std::size_t k = 0; k < t[0][0].size(); ++k) t[l][i][k] = 2 * t[l - 1][i][k] - t[l - 2][i][k];
  CHECK(smoothness(make_stack(t)) < 1e-12);
  t[3][1][0] += 0.25;  // one interior point off the midpoint
  CHECK(smoothness(make_stack(t)) > 0.01);
}

TEST_CASE("stability examples") {
  CHECK(stability(make_stack(Tensor(3, {{1, 2}, {3, 4}}))) == 0.0);
  const std::vector<double> a{1.5, -0.5, 2.0};
  std::vector<double> neg(a);
  for (double& v : neg) v = -v;
  CHECK(stability(make_stack(Tensor{{a}, {neg}})) == doctest::Approx((1.5 + 0.5 + 2.0) / 3.0).epsilon(1e-12));
  const ActivationStack s = make_stack(random_tensor(4, 3, 2, 31));
  CHECK(stability(s.scaled(3.5)) == doctest::Approx(3.5 * stability(s)).epsilon(1e-12));
}

TEST_CASE("stability ignores layer order while smoothness does not") {
  Tensor t = random_tensor(5, 3, 2, 41);
  Tensor perm{t[3], t[0], t[4], t[1], t[2]};
  CHECK(stability(make_stack(perm)) == doctest::Approx(stability(make_stack(t))).epsilon(1e-12));
  Tensor chain(3, {{0.0}});
  chain[1][0][0] = 1.0;
  chain[2][0][0] = 2.0;  // 0, 1, 2: smoothness 0
  Tensor swapped{chain[1], chain[0], chain[2]};
  CHECK(smoothness(make_stack(chain)) == 0.0);
  CHECK(smoothness(make_stack(swapped)) == doctest::Approx(1.5));
}

TEST_CASE("metrics match naive reference loops") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor t = random_tensor(4, 3, 2, 500 + seed);
    const ActivationStack s = make_stack(t);
    const MetricReport r = compute_metrics(s);
    for (std::size_t l = 0; l + 1 < 4; ++l)
      for (std::size_t i = 0; i < 3; ++i)
        REQUIRE(std::abs(r.layerwise_cosine(l, i) - naive_cos(t[l][i], t[l + 1][i])) < 1e-12);
    for (std::size_t l = 0; l < 4; ++l) REQUIRE(std::abs(r.inter_token(l) - naive_inter(t[l])) < 1e-12);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(std::abs(r.cka(i, j) - std::clamp(naive_cka(t[i], t[j]), 0.0, 1.0)) < 1e-12);
    REQUIRE(std::abs(r.smoothness - naive_smoothness(t)) < 1e-12);
    REQUIRE(std::abs(r.stability - naive_stability(t)) < 1e-12);
  }
}

TEST_CASE("report on a two-snapshot stack leaves smoothness undefined") {
  const MetricReport r = compute_metrics(make_stack(random_tensor(2, 3, 2, 1)));
  CHECK(std::isnan(r.smoothness));
  CHECK(r.cka.rows() == 2);
  CHECK(r.layerwise_cosine.rows() == 1);
}
