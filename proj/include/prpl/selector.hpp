#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prpl/error.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/linalg.hpp"
#include "prpl/mmd.hpp"
#include "prpl/parallel.hpp"

namespace prpl {

enum class MetricKind { kMeanL2, kMmd, kMeanCosine };

inline std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::kMeanL2: return "mean_l2";
    case MetricKind::kMmd: return "mmd";
    case MetricKind::kMeanCosine: return "mean_cosine";
  }
  return "unknown";
}

inline MetricKind parse_metric_kind(const std::string& s) {
  if (s == "mean_l2") return MetricKind::kMeanL2;
  if (s == "mmd") return MetricKind::kMmd;
  if (s == "mean_cosine") return MetricKind::kMeanCosine;
  fail(ErrorKind::kInvalidConfig, "unknown metric '" + s + "' (expected mean_l2, mmd or mean_cosine)");
}

struct SelectionMetric {
  MetricKind kind = MetricKind::kMeanL2;
  // Median-heuristic multipliers, used by the mmd kind only.
  std::vector<double> multipliers{std::begin(kDefaultBandwidthMultipliers), std::end(kDefaultBandwidthMultipliers)};
};

struct SelectionReport {
  std::map<std::string, double> distances;
  std::string chosen;
  SelectionMetric metric;
};

namespace detail {

inline void check_comparable(const FeatureSet& a, const FeatureSet& b) {
  if (a.d() != b.d())
    fail(ErrorKind::kDimensionMismatch, "feature dimensions differ (" + std::to_string(a.d()) + " vs " +
                                            std::to_string(b.d()) + ")");
  if (a.extractor_id() != b.extractor_id())
    fail(ErrorKind::kExtractorMismatch,
         "extractor ids differ ('" + a.extractor_id() + "' vs '" + b.extractor_id() + "')");
}

}  // namespace detail

// L2 distance between the whole-domain feature means.
inline double pre_distance(const FeatureSet& source, const FeatureSet& target) {
  detail::check_comparable(source, target);
  return (source.mean() - target.mean()).norm();
}

// 1 - cos(mean(source), mean(target)), in [0, 2].
inline double mean_cosine_distance(const FeatureSet& source, const FeatureSet& target) {
  detail::check_comparable(source, target);
  const RowVector ms = source.mean();
  const RowVector mt = target.mean();
  const double ns = ms.norm(), nt = mt.norm();
  if (ns == 0.0 || nt == 0.0) fail(ErrorKind::kDegenerateMean, "mean feature vector is zero");
  const double cos = std::clamp(ms.dot(mt) / (ns * nt), -1.0, 1.0);
  return 1.0 - cos;
}

// mmd2 over raw features with a median-heuristic bank fitted on the pooled
// rows; float noise below zero is clamped.
inline double mmd_feature_distance(const FeatureSet& source, const FeatureSet& target,
                                   const std::vector<double>& multipliers) {
  detail::check_comparable(source, target);
  const Matrix a = source.to_matrix();
  const Matrix b = target.to_matrix();
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  const KernelBank bank = median_heuristic(pooled, multipliers);
  return std::max(0.0, mmd2(a, b, bank));
}

inline double feature_distance(const FeatureSet& source, const FeatureSet& target, const SelectionMetric& metric) {
  switch (metric.kind) {
    case MetricKind::kMeanL2: return pre_distance(source, target);
    case MetricKind::kMeanCosine: return mean_cosine_distance(source, target);
    case MetricKind::kMmd: return mmd_feature_distance(source, target, metric.multipliers);
  }
  fail(ErrorKind::kInvalidArgument, "unknown metric");
}

// Argmin over precomputed distances; ties go to the lexicographically
// smallest extractor id (std::map iteration order).
inline SelectionReport choose_best(std::map<std::string, double> distances, SelectionMetric metric = {}) {
  if (distances.empty()) fail(ErrorKind::kEmptyManifest, "no extractor distances to choose from");
  SelectionReport report{std::move(distances), {}, std::move(metric)};
  std::optional<double> best;
  for (const auto& [id, dist] : report.distances) {
    if (!(dist >= 0.0) || !std::isfinite(dist))
      fail(ErrorKind::kInvalidArgument, "distance for '" + id + "' is negative or non-finite");
    if (!best || dist < *best) {
      best = dist;
      report.chosen = id;
    }
  }
  return report;
}

using FeatureLoader = std::function<FeatureSet(const std::filesystem::path&)>;

// Evaluates the metric for every extractor that has both domains in the
// manifest and picks the closest one. Extractors run in parallel.
inline SelectionReport select_best(const DatasetManifest& manifest, const std::string& source_domain,
                                   const std::string& target_domain, const SelectionMetric& metric,
                                   const FeatureLoader& loader = [](const std::filesystem::path& p) {
                                     return load_feature_set(p);
                                   }) {
  manifest.validate();
  std::vector<std::pair<const ManifestEntry*, const ManifestEntry*>> pairs;
  std::vector<std::string> ids;
  for (const auto& id : manifest.extractors()) {
    const auto* s = manifest.find(id, source_domain);
    const auto* t = manifest.find(id, target_domain);
    if (s && t) {
      pairs.emplace_back(s, t);
      ids.push_back(id);
    }
  }
  if (pairs.empty())
    fail(ErrorKind::kEmptyManifest,
         "no extractor has both domains '" + source_domain + "' and '" + target_domain + "'");

  std::vector<double> dist(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    try {
      const FeatureSet s = loader(pairs[i].first->path);
      const FeatureSet t = loader(pairs[i].second->path);
      dist[i] = feature_distance(s, t, metric);
    } catch (const Error& e) {
      throw e.with_context("extractor '" + ids[i] + "'");
    }
  });
  std::map<std::string, double> distances;
  for (std::size_t i = 0; i < ids.size(); ++i) distances.emplace(ids[i], dist[i]);
  return choose_best(std::move(distances), metric);
}

}  // namespace prpl
