#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "prpl/diagnostics.hpp"
#include "prpl/json_io.hpp"
#include "synthetic_task.hpp"

namespace fs = std::filesystem;
using namespace prpl;

namespace {

StageRecord stage(std::size_t t, double ma, std::optional<double> co) {
  StageRecord s;
  s.t = t;
  if (t > 0) s.threshold = 0.5;
  s.dist_marginal = ma;
  s.dist_conditional = co;
  return s;
}

RunReport report(std::vector<StageRecord> stages, std::size_t T, std::vector<double> sched) {
  return RunReport{std::move(stages), RecurrentConfig(T, std::move(sched), TrainConfig{}), 0};
}

}  // namespace

TEST(EstimateDivergence, SingleIteration) {
  const auto div = estimate_divergence(report({stage(0, 9.0, 9.0), stage(1, 0.3, 0.5)}, 1, {0.5}));
  EXPECT_DOUBLE_EQ(div.d_h, 0.8);
  EXPECT_EQ(div.iterations, 1u);
  EXPECT_EQ(div.p_schedule, std::vector<double>{0.5});
}

TEST(EstimateDivergence, AveragesConditionalTerms) {
  const auto div =
      estimate_divergence(report({stage(0, 1.0, std::nullopt), stage(1, 0.7, 0.4), stage(2, 0.1, 0.2)}, 2, {0.5, 0.8}));
  EXPECT_NEAR(div.dist_conditional_mean, 0.3, 1e-15);
  EXPECT_NEAR(div.d_h, 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(div.dist_marginal, 0.1);
}

TEST(EstimateDivergence, IncompleteReports) {
  try {
    estimate_divergence(report({stage(0, 1.0, 1.0)}, 0, {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIncompleteReport);
  }
  try {
    estimate_divergence(report({stage(0, 1.0, 1.0), stage(1, 0.2, std::nullopt)}, 1, {0.5}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIncompleteReport);
  }
}

TEST(EstimateDivergence, JsonMarksGammaUnestimated) {
  const Json j = to_json(estimate_divergence(report({stage(0, 0, 0), stage(1, 0.3, 0.5)}, 1, {0.5})));
  EXPECT_TRUE(j.at("gamma").is_string());
  EXPECT_DOUBLE_EQ(j.at("d_H").get<double>(), 0.8);
}

TEST(UnlabeledTarget, StripsLabels) {
  const auto dom = synth_gaussian_domains(SynthSpec{}, 1);
  ASSERT_TRUE(dom.target.has_labels());
  const UnlabeledTarget u(dom.target);
  EXPECT_FALSE(u.features().has_labels());
  EXPECT_EQ(u.features().to_matrix(), dom.target.to_matrix());
}

TEST(TuneGrid, CrossPairsByLength) {
  const auto g = TuneGrid::cross({1, 2}, {{0.5}, {0.6}, {0.5, 0.9}});
  ASSERT_EQ(g.cells.size(), 3u);
  EXPECT_EQ(g.cells[2].iterations, 2u);
  EXPECT_THROW(TuneGrid::cross({3}, {{0.5}}), Error);
  EXPECT_THROW(TuneGrid::cross({1}, {{0.5}, {0.5, 0.6}}), Error);
}

namespace {

struct TuneFixture : ::testing::Test {
  SynthDomains dom = synth_gaussian_domains(testing_fixture::shifted_spec(), 11);
  TrainConfig tc = [] {
    TrainConfig c;
    c.seed = 11;
    c.epochs = 3;
    return c;
  }();
};

}  // namespace

TEST_F(TuneFixture, SingleCellIsChosen) {
  TuneGrid g{{{2, {0.5, 0.8}}}};
  const auto r = tune(dom.source, UnlabeledTarget(dom.target), g, tc);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(r.chosen, 0u);
  EXPECT_EQ(r.best.p_schedule(), (std::vector<double>{0.5, 0.8}));
}

TEST_F(TuneFixture, EveryCellReportedAndArgminChosen) {
  const auto g = TuneGrid::cross({1, 2}, {{0.5}, {0.7}, {0.5, 0.8}, {0.6, 0.9}});
  const auto r = tune(dom.source, UnlabeledTarget(dom.target), g, tc);
  ASSERT_EQ(r.cells.size(), 4u);
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    EXPECT_EQ(r.cells[i].candidate, g.cells[i]);
    if (r.cells[i].d_h) EXPECT_GE(*r.cells[i].d_h, *r.cells[r.chosen].d_h);
  }
  const auto again = tune(dom.source, UnlabeledTarget(dom.target), g, tc);
  EXPECT_EQ(again.chosen, r.chosen);
  EXPECT_EQ(to_json(again).dump(), to_json(r).dump());
}

TEST_F(TuneFixture, HighThresholdCellJudgedByIndependentRuns) {
  const TuneCandidate high{3, {0.99, 0.99, 0.99}}, moderate{3, {0.5, 0.8, 0.9}};
  const auto r = tune(dom.source, UnlabeledTarget(dom.target), TuneGrid{{high, moderate}}, tc);
  const auto unlabeled = dom.target.without_labels();
  std::vector<double> expected;
  for (const auto& c : {high, moderate})
    expected.push_back(
        estimate_divergence(recurrent_fit(dom.source, unlabeled, RecurrentConfig(c.iterations, c.p_schedule, tc)).report)
            .d_h);
  ASSERT_TRUE(r.cells[0].d_h && r.cells[1].d_h);
  EXPECT_EQ(*r.cells[0].d_h, expected[0]);
  EXPECT_EQ(*r.cells[1].d_h, expected[1]);
  EXPECT_EQ(r.chosen, expected[1] < expected[0] ? 1u : 0u);
}

TEST_F(TuneFixture, CellWithoutEstimateIsNeverChosen) {
  // Nothing clears p = 1, so the first cell has no conditional distance.
  const auto g = TuneGrid{{{1, {1.0}}, {1, {0.5}}}};
  const auto r = tune(dom.source, UnlabeledTarget(dom.target), g, tc);
  EXPECT_FALSE(r.cells[0].d_h.has_value());
  EXPECT_EQ(r.chosen, 1u);
}

TEST_F(TuneFixture, AllCellsDegenerate) {
  const auto g = TuneGrid{{{1, {1.0}}}};
  try {
    tune(dom.source, UnlabeledTarget(dom.target), g, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIncompleteReport);
  }
}

TEST(AttachRisks, UsesAvailableLabels) {
  ClassifierHead head{Matrix::Zero(2, 2), RowVector::Zero(2), std::nullopt};
  head.bias(0) = 1.0;
  const auto s = FeatureSet::from_matrix("x", "s", Matrix::Zero(4, 2), std::vector<Label>{0, 0, 0, 1}, 2);
  DivergenceReport div;
  attach_risks(div, head, s);
  EXPECT_DOUBLE_EQ(*div.source_risk, 0.25);
  EXPECT_FALSE(div.target_risk.has_value());
}

// --- configuration files -------------------------------------------------

TEST(RunConfig, DirectInputsAndDefaults) {
  const auto cfg = parse_run_config(Json::parse(R"({"manifest": {"source": "a.bin", "target": "b.bin"}})"), "/base");
  EXPECT_EQ(*cfg.inputs.source_file, fs::path("/base/a.bin"));
  EXPECT_EQ(cfg.iterations, 3u);
  EXPECT_EQ(cfg.p_schedule, (std::vector<double>{0.5, 0.8, 0.9}));
  EXPECT_EQ(cfg.train.batch_size, 64u);
}

TEST(RunConfig, FullConfig) {
  const auto cfg = parse_run_config(Json::parse(R"({
    "manifest": {"path": "m.json", "source_domain": "amazon", "target_domain": "webcam"},
    "selection": {"metric": "mmd"},
    "train": {"lr": 0.01, "batch": 32, "epochs": 2, "seed": 5, "mmd_weight": 0.5},
    "recurrent": {"T": 2, "p_schedule": [0.6, 0.7]},
    "grid": {"T": [1], "p_schedules": [[0.5]]},
    "output": {"report": "/abs/r.json"}
  })"),
                                    "/base");
  EXPECT_EQ(cfg.inputs.source_domain, "amazon");
  EXPECT_EQ(cfg.selection.kind, MetricKind::kMmd);
  EXPECT_EQ(cfg.train.learning_rate, 0.01);
  EXPECT_EQ(cfg.train.seed, 5u);
  EXPECT_EQ(cfg.iterations, 2u);
  ASSERT_TRUE(cfg.grid.has_value());
  EXPECT_EQ(*cfg.report_path, fs::path("/abs/r.json"));
}

TEST(RunConfig, Rejections) {
  const auto bad = [](const char* text) {
    try {
      parse_run_config(Json::parse(text), "/");
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;  // sentinel: nothing thrown
  };
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b"}, "extra": 1})"), ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b"}, "train": {"learning_rate": 1}})"),
            ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b"}, "recurrent": {"p_schedule": [0.8, 0.5, 0.9]}})"),
            ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a"}})"), ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b", "path": "m"}})"), ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b"}, "train": {"batch": -1}})"),
            ErrorKind::kInvalidConfig);
  EXPECT_EQ(bad(R"({"manifest": {"source": "a", "target": "b"}, "selection": {"metric": "kl"}})"),
            ErrorKind::kInvalidConfig);
}

TEST(ManifestFile, ResolvesRelativePaths) {
  const auto m = parse_manifest(Json::parse(R"({"num_classes": 31, "entries": [
      {"extractor": "e", "domain": "amazon", "path": "feats/e_a.bin"},
      {"extractor": "e", "domain": "webcam", "path": "/x/e_w.bin"}]})"),
                                "/data");
  ASSERT_NE(m.find("e", "amazon"), nullptr);
  EXPECT_EQ(m.find("e", "amazon")->path, fs::path("/data/feats/e_a.bin"));
  EXPECT_EQ(m.find("e", "webcam")->path, fs::path("/x/e_w.bin"));
  EXPECT_THROW(parse_manifest(Json::parse(R"({"entries": [{"extractor": "e", "domain": "a", "path": "p"},
      {"extractor": "e", "domain": "a", "path": "q"}]})"),
                              "/"),
               Error);
  EXPECT_THROW(parse_manifest(Json::parse(R"({"entries": [{"extractor": "e", "domain": "a"}]})"), "/"), Error);
}
