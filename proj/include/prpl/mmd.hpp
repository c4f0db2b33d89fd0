#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prpl/confident_set.hpp"
#include "prpl/error.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/linalg.hpp"

namespace prpl {

inline constexpr double kDefaultBandwidthMultipliers[] = {0.25, 0.5, 1.0, 2.0, 4.0};

// Bandwidths of the RBF kernels averaged into kappa.
class KernelBank {
 public:
  explicit KernelBank(std::vector<double> bandwidths) : bandwidths_(std::move(bandwidths)) {
    if (bandwidths_.empty()) fail(ErrorKind::kInvalidArgument, "kernel bank needs at least one bandwidth");
    for (double s : bandwidths_) {
      if (!(s > 0.0) || !std::isfinite(s))
        fail(ErrorKind::kInvalidArgument, "kernel bandwidths must be positive and finite");
      inv_two_sigma2_.push_back(1.0 / (2.0 * s * s));
    }
  }

  const std::vector<double>& bandwidths() const { return bandwidths_; }
  std::size_t size() const { return bandwidths_.size(); }

  // kappa as a function of the squared distance.
  double eval(double sq_dist) const {
    double acc = 0.0;
    for (double c : inv_two_sigma2_) acc += std::exp(-sq_dist * c);
    return acc / static_cast<double>(inv_two_sigma2_.size());
  }

  // kappa and w = -d kappa / d(sq_dist) * 2, i.e. (1/m) sum exp(.) / sigma^2.
  // The gradient of kappa(x, y) with respect to x is -w * (x - y).
  std::pair<double, double> eval_with_slope(double sq_dist) const {
    double k = 0.0, w = 0.0;
    for (double c : inv_two_sigma2_) {
      const double e = std::exp(-sq_dist * c);
      k += e;
      w += e * 2.0 * c;
    }
    const double m = static_cast<double>(inv_two_sigma2_.size());
    return {k / m, w / m};
  }

 private:
  std::vector<double> bandwidths_;
  std::vector<double> inv_two_sigma2_;
};

namespace detail {

template <typename RowA, typename RowB>
double squared_distance(const RowA& a, const RowB& b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double diff = a(k) - b(k);
    s += diff * diff;
  }
  return s;
}

inline void check_cols(const Matrix& a, const Matrix& b, const char* what) {
  if (a.cols() != b.cols())
    fail(ErrorKind::kDimensionMismatch, std::string(what) + ": column counts differ (" +
                                            std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
}

inline double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

inline constexpr std::size_t kMedianSubsampleRows = 1000;

// sigma_i = multiplier_i * median pairwise Euclidean distance. Above 1000
// rows an evenly strided subsample is used. Even pair counts take the mean
// of the two middle distances.
inline KernelBank median_heuristic(const Matrix& data,
                                   std::span<const double> multipliers = kDefaultBandwidthMultipliers) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (n < 2) fail(ErrorKind::kInvalidArgument, "median heuristic needs at least 2 rows");
  if (multipliers.empty()) fail(ErrorKind::kInvalidArgument, "median heuristic needs at least one multiplier");
  std::vector<Eigen::Index> rows;
  const std::size_t take = std::min(n, kMedianSubsampleRows);
  rows.reserve(take);
  for (std::size_t i = 0; i < take; ++i) rows.push_back(static_cast<Eigen::Index>(i * n / take));

  std::vector<double> dists;
  dists.reserve(take * (take - 1) / 2);
  for (std::size_t i = 0; i < take; ++i)
    for (std::size_t j = i + 1; j < take; ++j)
      dists.push_back(std::sqrt(detail::squared_distance(data.row(rows[i]), data.row(rows[j]))));
  const double median = detail::median_of(dists);
  if (!(median > 0.0)) fail(ErrorKind::kDegenerateData, "median pairwise distance is zero");

  std::vector<double> sigmas;
  sigmas.reserve(multipliers.size());
  for (double m : multipliers) sigmas.push_back(m * median);
  return KernelBank(std::move(sigmas));
}

inline double kappa(std::span<const double> x, std::span<const double> y, const KernelBank& bank) {
  if (x.size() != y.size()) fail(ErrorKind::kDimensionMismatch, "kappa: vector lengths differ");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
  return bank.eval(s);
}

namespace detail {

// sum_{i,j} kappa(a_i, a_j), self-pairs included (each contributes exactly 1).
inline double within_kernel_sum(const Matrix& a, const KernelBank& bank) {
  const Eigen::Index n = a.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) row += bank.eval(squared_distance(a.row(i), a.row(j)));
    total += 2.0 * row + 1.0;
  }
  return total;
}

inline double cross_kernel_sum(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) row += bank.eval(squared_distance(a.row(i), b.row(j)));
    total += row;
  }
  return total;
}

}  // namespace detail

// Biased (V-statistic) squared MMD between the row samples of a and b.
inline double mmd2(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  detail::check_cols(a, b, "mmd2");
  if (a.rows() < 1 || b.rows() < 1) fail(ErrorKind::kInvalidArgument, "mmd2 needs non-empty samples");
  const double na = static_cast<double>(a.rows());
  const double nb = static_cast<double>(b.rows());
  return detail::within_kernel_sum(a, bank) / (na * na) + detail::within_kernel_sum(b, bank) / (nb * nb) -
         2.0 * detail::cross_kernel_sum(a, b, bank) / (na * nb);
}

// d mmd2(a, b) / d a. The gradient for b is grad_mmd2_wrt_a(b, a, bank).
inline Matrix grad_mmd2_wrt_a(const Matrix& a, const Matrix& b, const KernelBank& bank) {
  detail::check_cols(a, b, "grad_mmd2");
  if (a.rows() < 1 || b.rows() < 1) fail(ErrorKind::kInvalidArgument, "mmd2 needs non-empty samples");
  const double na = static_cast<double>(a.rows());
  const double nb = static_cast<double>(b.rows());
  const double within_scale = 2.0 / (na * na);
  const double cross_scale = 2.0 / (na * nb);
  Matrix g = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    RowVector acc = RowVector::Zero(a.cols());
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
      if (j == i) continue;
      const auto [k, w] = bank.eval_with_slope(detail::squared_distance(a.row(i), a.row(j)));
      (void)k;
      acc -= within_scale * w * (a.row(i) - a.row(j));
    }
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const auto [k, w] = bank.eval_with_slope(detail::squared_distance(a.row(i), b.row(j)));
      (void)k;
      acc += cross_scale * w * (a.row(i) - b.row(j));
    }
    g.row(i) = acc;
  }
  return g;
}

// L2 distance between the row means of two output matrices.
inline double marginal_distance(const Matrix& outputs_source, const Matrix& outputs_target) {
  detail::check_cols(outputs_source, outputs_target, "marginal_distance");
  if (outputs_source.rows() < 1 || outputs_target.rows() < 1)
    fail(ErrorKind::kInvalidArgument, "marginal_distance needs non-empty inputs");
  return (column_means(outputs_source) - column_means(outputs_target)).norm();
}

// Class-conditional feature distance between the labeled source and the
// confident target rows: mean over classes present on both sides of the L2
// gap between per-class feature means. Classes absent from either side are
// skipped; no overlap at all is an error.
inline double conditional_distance(const FeatureSet& source, const FeatureSet& target,
                                   const ConfidentSet& confident) {
  if (source.d() != target.d()) fail(ErrorKind::kDimensionMismatch, "conditional_distance: d differs");
  if (confident.target_indices.size() != confident.pseudo_labels.size())
    fail(ErrorKind::kInvalidArgument, "confident set indices and labels differ in length");
  const std::size_t classes = source.num_classes();
  const auto& ys = source.labels();
  const auto d = static_cast<Eigen::Index>(source.d());

  Matrix src_sum = Matrix::Zero(static_cast<Eigen::Index>(classes), d);
  Matrix tgt_sum = Matrix::Zero(static_cast<Eigen::Index>(classes), d);
  std::vector<std::size_t> src_count(classes, 0), tgt_count(classes, 0);
  for (std::size_t i = 0; i < source.n(); ++i) {
    const auto row = source.row(i);
    for (Eigen::Index j = 0; j < d; ++j) src_sum(ys[i], j) += row[static_cast<std::size_t>(j)];
    ++src_count[ys[i]];
  }
  for (std::size_t r = 0; r < confident.size(); ++r) {
    const std::size_t idx = confident.target_indices[r];
    const Label c = confident.pseudo_labels[r];
    if (idx >= target.n()) fail(ErrorKind::kIndexOutOfRange, "confident index out of range");
    if (c >= classes) fail(ErrorKind::kLabelOutOfRange, "pseudo label >= num_classes");
    const auto row = target.row(idx);
    for (Eigen::Index j = 0; j < d; ++j) tgt_sum(c, j) += row[static_cast<std::size_t>(j)];
    ++tgt_count[c];
  }

  double total = 0.0;
  std::size_t shared = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (src_count[c] == 0 || tgt_count[c] == 0) continue;
    const auto ci = static_cast<Eigen::Index>(c);
    total += (src_sum.row(ci) / static_cast<double>(src_count[c]) -
              tgt_sum.row(ci) / static_cast<double>(tgt_count[c]))
                 .norm();
    ++shared;
  }
  if (shared == 0) fail(ErrorKind::kNoSharedClasses, "no class has both source and confident target rows");
  return total / static_cast<double>(shared);
}

// Marginal and per-iteration conditional distances of one run.
struct DistanceRecord {
  double marginal = 0.0;
  std::vector<std::optional<double>> conditional;  // index t-1 for iteration t
  std::vector<double> mmd2;                        // per stage, stage 0 first
};

}  // namespace prpl
