#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prpl/classifier.hpp"
#include "prpl/confident_set.hpp"
#include "prpl/error.hpp"
#include "prpl/evaluation.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/mmd.hpp"

namespace prpl {

// Number of recurrent iterations and their confidence thresholds. The
// schedule must be non-decreasing and inside [0, 1].
class RecurrentConfig {
 public:
  RecurrentConfig() : RecurrentConfig(3, {0.5, 0.8, 0.9}, TrainConfig{}) {}

  RecurrentConfig(std::size_t iterations, std::vector<double> p_schedule, TrainConfig train)
      : iterations_(iterations), p_schedule_(std::move(p_schedule)), train_(train) {
    if (p_schedule_.size() != iterations_)
      fail(ErrorKind::kInvalidConfig, "p_schedule has " + std::to_string(p_schedule_.size()) +
                                          " entries but T = " + std::to_string(iterations_));
    for (std::size_t t = 0; t < p_schedule_.size(); ++t) {
      const double p = p_schedule_[t];
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kInvalidConfig, "p_schedule entries must lie in [0, 1]");
      if (t > 0 && p < p_schedule_[t - 1])
        fail(ErrorKind::kInvalidConfig, "p_schedule must be non-decreasing (p_" + std::to_string(t + 1) + " = " +
                                            std::to_string(p) + " < p_" + std::to_string(t) + " = " +
                                            std::to_string(p_schedule_[t - 1]) + ")");
    }
    train_.validate();
  }

  std::size_t iterations() const { return iterations_; }
  const std::vector<double>& p_schedule() const { return p_schedule_; }
  const TrainConfig& train() const { return train_; }

 private:
  std::size_t iterations_;
  std::vector<double> p_schedule_;
  TrainConfig train_;
};

// Rows whose max softmax probability is strictly above p, labeled by argmax
// (ties to the smallest class index).
inline ConfidentSet confident_from_probs(const Matrix& probs, double p, int iteration) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::kInvalidArgument, "threshold must lie in [0, 1]");
  ConfidentSet cs;
  cs.threshold = p;
  cs.iteration = iteration;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    if (probs(i, best) > p) {
      cs.target_indices.push_back(static_cast<std::size_t>(i));
      cs.pseudo_labels.push_back(static_cast<Label>(best));
    }
  }
  return cs;
}

inline ConfidentSet confident_pseudo_labels(const ClassifierHead& head, const FeatureSet& target, double p,
                                            int iteration) {
  if (head.input_dim() != target.d()) fail(ErrorKind::kDimensionMismatch, "head and target dimensions differ");
  return confident_from_probs(forward(head, target.to_matrix()), p, iteration);
}

enum class Provenance : std::uint8_t { kSource, kPseudo };

// Source rows followed by the confident target rows.
struct UpdatedDomain {
  Matrix features;
  std::vector<Label> labels;
  std::vector<Provenance> provenance;
  std::size_t num_source = 0;

  std::size_t size() const { return labels.size(); }
};

inline UpdatedDomain build_updated_domain(const FeatureSet& source, const FeatureSet& target,
                                          const ConfidentSet& cs) {
  if (source.d() != target.d()) fail(ErrorKind::kDimensionMismatch, "source and target dimensions differ");
  if (cs.target_indices.size() != cs.pseudo_labels.size())
    fail(ErrorKind::kInvalidArgument, "confident set indices and labels differ in length");
  const auto& ys = source.labels();
  const std::size_t ns = source.n();
  const std::size_t total = ns + cs.size();
  UpdatedDomain u;
  u.num_source = ns;
  u.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(source.d()));
  u.labels.reserve(total);
  u.provenance.reserve(total);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto row = source.row(i);
    for (std::size_t j = 0; j < source.d(); ++j)
      u.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    u.labels.push_back(ys[i]);
    u.provenance.push_back(Provenance::kSource);
  }
  for (std::size_t r = 0; r < cs.size(); ++r) {
    const std::size_t idx = cs.target_indices[r];
    if (idx >= target.n())
      fail(ErrorKind::kIndexOutOfRange, "confident index " + std::to_string(idx) + " >= N_T = " +
                                            std::to_string(target.n()));
    if (cs.pseudo_labels[r] >= source.num_classes())
      fail(ErrorKind::kLabelOutOfRange, "pseudo label " + std::to_string(cs.pseudo_labels[r]) + " >= C");
    const auto row = target.row(idx);
    for (std::size_t j = 0; j < target.d(); ++j)
      u.features(static_cast<Eigen::Index>(ns + r), static_cast<Eigen::Index>(j)) = row[j];
    u.labels.push_back(cs.pseudo_labels[r]);
    u.provenance.push_back(Provenance::kPseudo);
  }
  return u;
}

// One training stage: t = 0 is source-only alignment, t >= 1 the recurrent
// iterations. Distances are measured with the head at the end of the stage.
struct StageRecord {
  std::size_t t = 0;
  std::optional<double> threshold;  // p_t; absent for stage 0
  std::size_t n_confident = 0;
  std::size_t n_updated = 0;
  double loss_source = 0.0;
  double loss_mmd = 0.0;
  double dist_marginal = 0.0;
  std::optional<double> dist_conditional;
  std::optional<double> d_h;
  std::optional<double> accuracy;  // only when the target carries ground truth
};

struct RunReport {
  std::vector<StageRecord> stages;
  RecurrentConfig config;
  std::uint64_t seed = 0;

  DistanceRecord distances() const {
    DistanceRecord r;
    if (!stages.empty()) r.marginal = stages.back().dist_marginal;
    for (const auto& s : stages) {
      if (s.t > 0) r.conditional.push_back(s.dist_conditional);
      r.mmd2.push_back(s.loss_mmd);
    }
    return r;
  }
};

struct FitResult {
  ClassifierHead head;
  RunReport report;
};

namespace detail {

inline KernelBank output_bank(const ClassifierHead& head, const Matrix& labeled, const Matrix& target) {
  Matrix pooled(labeled.rows() + target.rows(), static_cast<Eigen::Index>(head.num_classes()));
  pooled << forward(head, labeled), forward(head, target);
  return median_heuristic(pooled);
}

inline std::optional<double> try_conditional(const FeatureSet& source, const FeatureSet& target,
                                             const ConfidentSet& cs) {
  if (cs.empty()) return std::nullopt;
  try {
    return conditional_distance(source, target, cs);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNoSharedClasses) return std::nullopt;
    throw;
  }
}

inline std::uint64_t head_seed(std::uint64_t seed) { return Rng::derive(seed, 0x4EAD); }

inline void check_fit_inputs(const FeatureSet& source, const FeatureSet& target) {
  if (!source.has_labels()) fail(ErrorKind::kInvalidArgument, "source domain must be labeled");
  if (source.d() != target.d())
    fail(ErrorKind::kDimensionMismatch, "source d = " + std::to_string(source.d()) + " but target d = " +
                                            std::to_string(target.d()));
  if (target.has_labels() && target.num_classes() != source.num_classes())
    fail(ErrorKind::kDimensionMismatch, "source and target declare different class counts");
}

}  // namespace detail

// Stage 0 trains on the source with cross-entropy + MMD against the target.
// Each iteration t then re-selects confident target rows at p_t with the
// current head, replaces the labeled domain by source + confident rows, and
// continues training (warm start) with cross-entropy on that domain + MMD
// between its outputs and the full target's outputs. Target labels, if
// present, are read only to fill StageRecord::accuracy.
inline FitResult recurrent_fit(const FeatureSet& source_in, const FeatureSet& target_in, const RecurrentConfig& rc) {
  detail::check_fit_inputs(source_in, target_in);
  const TrainConfig& tc = rc.train();
  const FeatureSet source = tc.l2_normalize_inputs ? source_in.l2_normalized() : source_in;
  const FeatureSet target = tc.l2_normalize_inputs ? target_in.l2_normalized() : target_in;
  const Matrix xs = source.to_matrix();
  const Matrix xt = target.to_matrix();
  const bool use_mmd = tc.mmd_weight > 0.0;

  FitResult out{init_head(source.d(), source.num_classes(), detail::head_seed(tc.seed), tc.hidden_width),
                RunReport{{}, rc, tc.seed}};
  ClassifierHead& head = out.head;
  std::vector<double> conditional_history;
  bool history_complete = true;

  auto finish_stage = [&](StageRecord rec) {
    const Matrix pt = forward(head, xt);
    rec.dist_marginal = marginal_distance(forward(head, xs), pt);
    // Stage 0 is probed at p_1 so it is comparable with iteration 1.
    std::optional<double> probe = rec.threshold;
    if (!probe && rc.iterations() > 0) probe = rc.p_schedule().front();
    if (probe) rec.dist_conditional = detail::try_conditional(source, target, confident_from_probs(pt, *probe, 0));
    if (rec.t == 0) {
      if (rec.dist_conditional) rec.d_h = rec.dist_marginal + *rec.dist_conditional;
    } else {
      if (rec.dist_conditional) conditional_history.push_back(*rec.dist_conditional);
      else history_complete = false;
      if (history_complete) {
        double sum = 0.0;
        for (double c : conditional_history) sum += c;
        rec.d_h = rec.dist_marginal + sum / static_cast<double>(conditional_history.size());
      }
    }
    if (target.has_labels()) rec.accuracy = evaluate_accuracy(head, target);
    out.report.stages.push_back(rec);
  };

  try {
    std::optional<KernelBank> bank;
    if (use_mmd) bank = detail::output_bank(head, xs, xt);
    const StageLosses losses =
        train_stage(head, xs, source.labels(), &xt, tc, bank ? &*bank : nullptr, /*stream=*/0);
    StageRecord rec;
    rec.n_updated = source.n();
    rec.loss_source = losses.source;
    rec.loss_mmd = losses.mmd;
    finish_stage(rec);
  } catch (const Error& e) {
    throw e.with_context("stage 0");
  }

  for (std::size_t t = 1; t <= rc.iterations(); ++t) {
    try {
      const double p = rc.p_schedule()[t - 1];
      const ConfidentSet cs = confident_from_probs(forward(head, xt), p, static_cast<int>(t));
      const UpdatedDomain domain = build_updated_domain(source, target, cs);
      std::optional<KernelBank> bank;
      if (use_mmd) bank = detail::output_bank(head, domain.features, xt);
      const StageLosses losses =
          train_stage(head, domain.features, domain.labels, &xt, tc, bank ? &*bank : nullptr, t);
      StageRecord rec;
      rec.t = t;
      rec.threshold = p;
      rec.n_confident = cs.size();
      rec.n_updated = domain.size();
      rec.loss_source = losses.source;
      rec.loss_mmd = losses.mmd;
      finish_stage(rec);
    } catch (const Error& e) {
      throw e.with_context("iteration " + std::to_string(t));
    }
  }
  return out;
}

struct BaselineResult {
  ClassifierHead head;
  std::optional<double> accuracy;
};

// Cross-entropy on the source only: no MMD, no pseudo labels. Uses the same
// head initialisation and shuffles as stage 0 of recurrent_fit.
inline BaselineResult source_only_baseline(const FeatureSet& source_in, const FeatureSet& target_in,
                                           TrainConfig tc) {
  detail::check_fit_inputs(source_in, target_in);
  tc.mmd_weight = 0.0;
  tc.validate();
  const FeatureSet source = tc.l2_normalize_inputs ? source_in.l2_normalized() : source_in;
  const FeatureSet target = tc.l2_normalize_inputs ? target_in.l2_normalized() : target_in;
  BaselineResult out{init_head(source.d(), source.num_classes(), detail::head_seed(tc.seed), tc.hidden_width),
                     std::nullopt};
  train_stage(out.head, source.to_matrix(), source.labels(), nullptr, tc, nullptr, /*stream=*/0);
  if (target.has_labels()) out.accuracy = evaluate_accuracy(out.head, target);
  return out;
}

}  // namespace prpl
