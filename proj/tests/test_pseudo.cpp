#include <gtest/gtest.h>

#include "synthetic_task.hpp"
#include "oracles.hpp"
#include "prpl/json_io.hpp"
#include "prpl/pseudo.hpp"

using namespace prpl;

namespace {

ClassifierHead zero_head(Eigen::Index d, Eigen::Index c) {
  return ClassifierHead{Matrix::Zero(d, c), RowVector::Zero(c), std::nullopt};
}

FeatureSet random_target(Rng& rng, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
  return FeatureSet::from_matrix("x", "t", oracle::random_matrix(rng, n, d, scale));
}

FeatureSet random_source(Rng& rng, Eigen::Index n, Eigen::Index d, std::uint32_t c) {
  std::vector<Label> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<Label>(rng.below(c));
  return FeatureSet::from_matrix("x", "s", oracle::random_matrix(rng, n, d), y, c);
}

}  // namespace

TEST(RecurrentConfig, DefaultsMatchPublishedSetting) {
  const RecurrentConfig rc;
  EXPECT_EQ(rc.iterations(), 3u);
  EXPECT_EQ(rc.p_schedule(), (std::vector<double>{0.5, 0.8, 0.9}));
  EXPECT_EQ(rc.train().learning_rate, 0.001);
  EXPECT_EQ(rc.train().batch_size, 64u);
  EXPECT_EQ(rc.train().epochs, 9u);
  EXPECT_EQ(rc.train().mmd_weight, 1.0);
}

TEST(RecurrentConfig, RejectsDecreasingSchedule) {
  try {
    RecurrentConfig(3, {0.8, 0.5, 0.9}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidConfig);
    EXPECT_NE(std::string(e.what()).find("non-decreasing"), std::string::npos);
  }
  EXPECT_THROW(RecurrentConfig(2, {0.5, 0.8, 0.9}, TrainConfig{}), Error);
  EXPECT_THROW(RecurrentConfig(1, {1.5}, TrainConfig{}), Error);
  EXPECT_NO_THROW(RecurrentConfig(3, {0.7, 0.7, 0.7}, TrainConfig{}));
  EXPECT_NO_THROW(RecurrentConfig(0, {}, TrainConfig{}));
}

TEST(ConfidentPseudoLabels, ThresholdExtremes) {
  Rng rng(1);
  const auto target = random_target(rng, 25, 4, 3.0);
  const auto head = init_head(4, 3, 2);
  EXPECT_TRUE(confident_pseudo_labels(head, target, 1.0, 1).empty());
  EXPECT_EQ(confident_pseudo_labels(head, target, 0.0, 1).size(), 25u);
}

TEST(ConfidentPseudoLabels, UniformHeadAtHalfIsEmpty) {
  Rng rng(2);
  EXPECT_TRUE(confident_pseudo_labels(zero_head(4, 2), random_target(rng, 10, 4), 0.5, 1).empty());
}

TEST(ConfidentPseudoLabels, LabelsAreArgmaxAndAboveThreshold) {
  Rng rng(3);
  const auto target = random_target(rng, 60, 5, 4.0);
  const auto head = init_head(5, 4, 9);
  const auto cs = confident_pseudo_labels(head, target, 0.6, 2);
  const Matrix p = forward(head, target.to_matrix());
  const auto argmax = predict(head, target.to_matrix());
  EXPECT_EQ(cs.iteration, 2);
  EXPECT_EQ(cs.threshold, 0.6);
  for (std::size_t r = 0; r < cs.size(); ++r) {
    EXPECT_EQ(cs.pseudo_labels[r], argmax[cs.target_indices[r]]);
    EXPECT_GT(p.row(static_cast<Eigen::Index>(cs.target_indices[r])).maxCoeff(), 0.6);
  }
}

TEST(ConfidentPseudoLabels, DimensionMismatch) {
  Rng rng(4);
  EXPECT_THROW(confident_pseudo_labels(init_head(3, 2, 1), random_target(rng, 4, 5), 0.5, 1), Error);
}

TEST(ConfidentPseudoLabels, NestedUnderThresholdIncreaseProperty) {
  Rng rng(5);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto d = 1 + static_cast<Eigen::Index>(rng.below(6));
    const auto c = 2 + static_cast<Eigen::Index>(rng.below(4));
    const auto head = init_head(d, c, rng.next());
    const auto target = random_target(rng, 1 + rng.below(30), d, rng.uniform(0.1, 8.0));
    const double p = rng.uniform();
    const double p_hi = p + (1.0 - p) * rng.uniform();
    const auto lo = confident_pseudo_labels(head, target, p, 1);
    const auto hi = confident_pseudo_labels(head, target, p_hi, 2);
    std::size_t k = 0;
    for (std::size_t idx : hi.target_indices) {
      while (k < lo.size() && lo.target_indices[k] < idx) ++k;
      if (k == lo.size() || lo.target_indices[k] != idx) ++violations;
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(UpdatedDomain, EmptyConfidentSetIsTheSource) {
  Rng rng(6);
  const auto source = random_source(rng, 8, 3, 2);
  const auto target = random_target(rng, 5, 3);
  const auto u = build_updated_domain(source, target, ConfidentSet{});
  EXPECT_EQ(u.size(), source.n());
  EXPECT_EQ(u.labels, source.labels());
  EXPECT_EQ(u.features, source.to_matrix());
}

TEST(UpdatedDomain, PartialAndFullSets) {
  Rng rng(7);
  const auto source = random_source(rng, 8, 3, 2);
  const auto target = random_target(rng, 10, 3);
  const auto u = build_updated_domain(source, target, ConfidentSet{{1, 4, 9}, {0, 1, 1}, 0.5, 1});
  ASSERT_EQ(u.size(), 11u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(u.provenance[i], Provenance::kSource);
  for (std::size_t i = 8; i < 11; ++i) EXPECT_EQ(u.provenance[i], Provenance::kPseudo);
  EXPECT_EQ(u.features.row(10), target.to_matrix().row(9));
  EXPECT_EQ(u.labels[9], 1u);

  ConfidentSet all;
  for (std::size_t i = 0; i < 10; ++i) {
    all.target_indices.push_back(i);
    all.pseudo_labels.push_back(0);
  }
  EXPECT_EQ(build_updated_domain(source, target, all).size(), 18u);
}

TEST(UpdatedDomain, RejectsBadIndicesAndLabels) {
  Rng rng(8);
  const auto source = random_source(rng, 4, 2, 2);
  const auto target = random_target(rng, 3, 2);
  try {
    build_updated_domain(source, target, ConfidentSet{{3}, {0}, 0.5, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIndexOutOfRange);
  }
  try {
    build_updated_domain(source, target, ConfidentSet{{0}, {2}, 0.5, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLabelOutOfRange);
  }
}

TEST(UpdatedDomain, SizeBoundsAtThresholdExtremesProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = 1 + static_cast<Eigen::Index>(rng.below(5));
    const auto source = random_source(rng, 1 + rng.below(20), d, 3);
    const auto target = random_target(rng, 1 + rng.below(20), d, 5.0);
    const auto head = init_head(d, 3, rng.next());
    const auto at0 = build_updated_domain(source, target, confident_pseudo_labels(head, target, 0.0, 1));
    const auto at1 = build_updated_domain(source, target, confident_pseudo_labels(head, target, 1.0, 1));
    const auto mid = build_updated_domain(source, target, confident_pseudo_labels(head, target, 0.7, 1));
    EXPECT_EQ(at0.size(), source.n() + target.n());
    EXPECT_EQ(at1.size(), source.n());
    EXPECT_LE(mid.size(), source.n() + target.n());
  }
}

namespace {

SynthDomains shifted_task(std::uint64_t seed, double shift_sigmas = 1.0) {
  return synth_gaussian_domains(testing_fixture::shifted_spec(shift_sigmas), seed);
}

}  // namespace

TEST(RecurrentFit, ZeroIterationsIsStageZeroOnly) {
  const auto dom = shifted_task(3);
  TrainConfig tc;
  tc.seed = 3;
  const auto t0 = recurrent_fit(dom.source, dom.target, RecurrentConfig(0, {}, tc));
  const auto t3 = recurrent_fit(dom.source, dom.target, RecurrentConfig(3, {0.5, 0.8, 0.9}, tc));
  ASSERT_EQ(t0.report.stages.size(), 1u);
  ASSERT_EQ(t3.report.stages.size(), 4u);
  EXPECT_EQ(t0.report.stages[0].loss_source, t3.report.stages[0].loss_source);
  EXPECT_EQ(t0.report.stages[0].dist_marginal, t3.report.stages[0].dist_marginal);
  EXPECT_EQ(t0.report.stages[0].accuracy, t3.report.stages[0].accuracy);
  EXPECT_FALSE(t0.report.stages[0].dist_conditional.has_value());
}

TEST(RecurrentFit, DeterministicPerSeed) {
  const auto dom = shifted_task(4);
  TrainConfig tc;
  tc.seed = 4;
  const RecurrentConfig rc(3, {0.5, 0.8, 0.9}, tc);
  const auto a = recurrent_fit(dom.source, dom.target, rc);
  const auto b = recurrent_fit(dom.source, dom.target, rc);
  EXPECT_EQ(a.head, b.head);
  EXPECT_EQ(to_json(a.report).dump(), to_json(b.report).dump());
}

TEST(RecurrentFit, NeverReadsTargetLabelsForTraining) {
  const auto dom = shifted_task(5);
  TrainConfig tc;
  tc.seed = 5;
  const RecurrentConfig rc(2, {0.5, 0.8}, tc);
  const auto with = recurrent_fit(dom.source, dom.target, rc);
  const auto without = recurrent_fit(dom.source, dom.target.without_labels(), rc);
  EXPECT_EQ(with.head, without.head);
  EXPECT_TRUE(with.report.stages.back().accuracy.has_value());
  EXPECT_FALSE(without.report.stages.back().accuracy.has_value());
}

TEST(RecurrentFit, StageBookkeeping) {
  const auto dom = shifted_task(6);
  TrainConfig tc;
  tc.seed = 6;
  const auto fit = recurrent_fit(dom.source, dom.target, RecurrentConfig(3, {0.5, 0.8, 0.9}, tc));
  const auto& st = fit.report.stages;
  EXPECT_FALSE(st[0].threshold.has_value());
  EXPECT_EQ(st[0].n_updated, dom.source.n());
  for (std::size_t t = 1; t < st.size(); ++t) {
    EXPECT_EQ(st[t].t, t);
    EXPECT_EQ(st[t].n_updated, dom.source.n() + st[t].n_confident);
    EXPECT_LE(st[t].n_updated, dom.source.n() + dom.target.n());
    ASSERT_TRUE(st[t].d_h && st[t].dist_conditional);
  }
  double sum = 0.0;
  for (std::size_t t = 1; t < st.size(); ++t) sum += *st[t].dist_conditional;
  EXPECT_DOUBLE_EQ(*st.back().d_h, st.back().dist_marginal + sum / 3.0);
  EXPECT_THROW(recurrent_fit(dom.target.without_labels(), dom.target, RecurrentConfig()), Error);
}

TEST(RecurrentFit, Seed7ShiftedTaskRegression) {
  // Reference run on the 3-class, d=16, 1-sigma shift task; values pinned
  // from the first verified run after the gradient and oracle suites passed.
  const auto dom = shifted_task(7);
  TrainConfig tc;
  tc.seed = 7;
  const auto fit = recurrent_fit(dom.source, dom.target, RecurrentConfig(3, {0.5, 0.8, 0.9}, tc));
  const auto& st = fit.report.stages;
  EXPECT_GE(*st[3].accuracy, *st[0].accuracy);
  EXPECT_NEAR(*st[0].accuracy, testing_fixture::kSeed7StageZeroAccuracy, 1e-12);
  EXPECT_NEAR(*st[3].accuracy, testing_fixture::kSeed7FinalAccuracy, 1e-12);
  EXPECT_EQ(st[1].n_confident, testing_fixture::kSeed7FirstConfident);
}

TEST(SourceOnlyBaseline, NoShiftMatchesPrplWithinNoise) {
  const auto dom = shifted_task(8, 0.0);
  TrainConfig tc;
  tc.seed = 8;
  const auto base = source_only_baseline(dom.source, dom.target, tc);
  const auto fit = recurrent_fit(dom.source, dom.target, RecurrentConfig(3, {0.5, 0.8, 0.9}, tc));
  EXPECT_NEAR(*base.accuracy, *fit.report.stages.back().accuracy, 0.1);
}

TEST(SourceOnlyBaseline, SeparableBlobsWithoutShift) {
  SynthSpec spec = testing_fixture::shifted_spec(0.0);
  spec.noise_sigma = 2.0;
  const auto dom = synth_gaussian_domains(spec, 9);
  TrainConfig tc;
  tc.seed = 9;
  EXPECT_GE(*source_only_baseline(dom.source, dom.target, tc).accuracy, 0.95);
}
