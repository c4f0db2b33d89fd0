#pragma once

#include <Eigen/Dense>

namespace prpl {

// All downstream arithmetic is f64; feature payloads are widened on use.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline RowVector column_means(const Matrix& m) { return m.colwise().mean(); }

}  // namespace prpl
