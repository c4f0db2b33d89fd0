#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "prpl/classifier.hpp"
#include "prpl/error.hpp"
#include "prpl/evaluation.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/parallel.hpp"
#include "prpl/pseudo.hpp"

namespace prpl {

// H-divergence estimate d_H ~ Dist^Ma + (1/T) sum_t Dist^Co_t. The
// adaptability term gamma needs target labels and is never estimated.
struct DivergenceReport {
  double dist_marginal = 0.0;
  double dist_conditional_mean = 0.0;
  double d_h = 0.0;
  std::size_t iterations = 0;
  std::vector<double> p_schedule;
  std::optional<double> source_risk;  // empirical 0-1 error
  std::optional<double> target_risk;
};

inline DivergenceReport estimate_divergence(const RunReport& report) {
  DivergenceReport out;
  std::size_t recurrent = 0;
  double sum = 0.0;
  for (const auto& s : report.stages) {
    if (s.t == 0) continue;
    if (!s.dist_conditional)
      fail(ErrorKind::kIncompleteReport, "iteration " + std::to_string(s.t) + " has no conditional distance");
    sum += *s.dist_conditional;
    ++recurrent;
  }
  if (recurrent == 0) fail(ErrorKind::kIncompleteReport, "report has no recurrent iteration");
  out.dist_marginal = report.stages.back().dist_marginal;
  out.dist_conditional_mean = sum / static_cast<double>(recurrent);
  out.d_h = out.dist_marginal + out.dist_conditional_mean;
  out.iterations = recurrent;
  out.p_schedule = report.config.p_schedule();
  return out;
}

// Fills the empirical risks that the available labels allow.
inline void attach_risks(DivergenceReport& div, const ClassifierHead& head, const FeatureSet& source,
                         const FeatureSet* target = nullptr) {
  if (source.has_labels()) div.source_risk = 1.0 - evaluate_accuracy(head, source);
  if (target && target->has_labels()) div.target_risk = 1.0 - evaluate_accuracy(head, *target);
}

// A target domain with its labels stripped at construction.
class UnlabeledTarget {
 public:
  explicit UnlabeledTarget(const FeatureSet& fs) : fs_(fs.without_labels()) {}
  const FeatureSet& features() const { return fs_; }

 private:
  FeatureSet fs_;
};

struct TuneCandidate {
  std::size_t iterations = 0;
  std::vector<double> p_schedule;

  friend auto operator<=>(const TuneCandidate&, const TuneCandidate&) = default;
};

struct TuneGrid {
  std::vector<TuneCandidate> cells;

  // Every (T, schedule) pair whose schedule length equals T. Each T value and
  // each schedule must pair with at least one partner.
  static TuneGrid cross(const std::vector<std::size_t>& iteration_values,
                        const std::vector<std::vector<double>>& schedules) {
    TuneGrid g;
    std::vector<bool> used(schedules.size(), false);
    for (std::size_t t : iteration_values) {
      bool matched = false;
      for (std::size_t k = 0; k < schedules.size(); ++k) {
        if (schedules[k].size() != t) continue;
        g.cells.push_back({t, schedules[k]});
        used[k] = matched = true;
      }
      if (!matched) fail(ErrorKind::kInvalidConfig, "no p_schedule of length T = " + std::to_string(t));
    }
    for (std::size_t k = 0; k < schedules.size(); ++k)
      if (!used[k]) fail(ErrorKind::kInvalidConfig, "p_schedule #" + std::to_string(k) + " matches no T value");
    return g;
  }
};

struct TuneCell {
  TuneCandidate candidate;
  std::optional<double> d_h;  // absent when some iteration had no confident overlap
  double dist_marginal = 0.0;
  std::optional<double> dist_conditional_mean;
};

struct TuneResult {
  std::vector<TuneCell> cells;  // grid order
  std::size_t chosen = 0;
  RecurrentConfig best;
};

// Runs recurrent_fit for every grid cell and keeps the one with the smallest
// d_H. Target labels are unreachable here by construction. Cells without a
// d_H estimate are reported but never chosen; ties go to the
// lexicographically smallest (T, schedule).
inline TuneResult tune(const FeatureSet& source, const UnlabeledTarget& target, const TuneGrid& grid,
                       const TrainConfig& tc) {
  if (grid.cells.empty()) fail(ErrorKind::kInvalidConfig, "tuning grid is empty");
  std::vector<RecurrentConfig> configs;
  configs.reserve(grid.cells.size());
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const auto& c = grid.cells[i];
    try {
      configs.emplace_back(c.iterations, c.p_schedule, tc);
    } catch (const Error& e) {
      throw e.with_context("grid cell " + std::to_string(i));
    }
  }

  std::vector<TuneCell> cells(grid.cells.size());
  parallel_for(grid.cells.size(), [&](std::size_t i) {
    try {
      const FitResult fit = recurrent_fit(source, target.features(), configs[i]);
      TuneCell cell{grid.cells[i], std::nullopt, fit.report.stages.back().dist_marginal, std::nullopt};
      try {
        const DivergenceReport div = estimate_divergence(fit.report);
        cell.d_h = div.d_h;
        cell.dist_conditional_mean = div.dist_conditional_mean;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kIncompleteReport) throw;
      }
      cells[i] = std::move(cell);
    } catch (const Error& e) {
      throw e.with_context("grid cell " + std::to_string(i));
    }
  });

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].d_h) continue;
    if (!best || *cells[i].d_h < *cells[*best].d_h ||
        (*cells[i].d_h == *cells[*best].d_h && cells[i].candidate < cells[*best].candidate))
      best = i;
  }
  if (!best) fail(ErrorKind::kIncompleteReport, "no grid cell produced a d_H estimate");
  return TuneResult{std::move(cells), *best, configs[*best]};
}

}  // namespace prpl
