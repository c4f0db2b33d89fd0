#pragma once

// Independent reference computations for the test suites. Nothing here calls
// into the optimized paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "prpl/linalg.hpp"
#include "prpl/random.hpp"

namespace prpl::oracle {

// Biased MMD^2 by the literal triple loop: for every pair, for every bandwidth.
inline double naive_mmd2(const Matrix& a, const Matrix& b, const std::vector<double>& sigmas) {
  auto k = [&](const auto& x, const auto& y) {
    double total = 0.0;
    for (double s : sigmas) {
      double sq = 0.0;
      for (Eigen::Index c = 0; c < x.size(); ++c) sq += (x(c) - y(c)) * (x(c) - y(c));
      total += std::exp(-sq / (2.0 * s * s));
    }
    return total / static_cast<double>(sigmas.size());
  };
  double aa = 0.0, bb = 0.0, ab = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j) aa += k(a.row(i), a.row(j));
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) bb += k(b.row(i), b.row(j));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) ab += k(a.row(i), b.row(j));
  const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  return aa / (na * na) + bb / (nb * nb) - 2.0 * ab / (na * nb);
}

// Central difference of f at one scalar coordinate.
inline double central_difference(const std::function<double()>& f, double& coord, double h = 1e-4) {
  const double saved = coord;
  coord = saved + h;
  const double up = f();
  coord = saved - h;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * h);
}

// Fourth-order central difference (five-point stencil). Same step h, but
// the O(h^2) truncation term of the plain stencil cancels; that term is what
// dominates for narrow RBF bandwidths.
inline double central_difference5(const std::function<double()>& f, double& coord, double h = 1e-4) {
  const double saved = coord;
  double v[4];
  const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
  for (int k = 0; k < 4; ++k) {
    coord = saved + offsets[k];
    v[k] = f();
  }
  coord = saved;
  return (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h);
}

// Relative error with a small floor so that coordinates whose true gradient
// is ~0 are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Sorted list of all pairwise Euclidean distances.
inline std::vector<double> all_pair_distances(const Matrix& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.rows(); ++j) out.push_back((m.row(i) - m.row(j)).norm());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace prpl::oracle
