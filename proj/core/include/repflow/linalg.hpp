#pragma once

#include <Eigen/Dense>

namespace repflow {

// Token matrices are [tokens x dims]: one row per token. Linear maps act on
// tokens as column vectors, so applying W to every row of h is h * W^T.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace repflow
