#pragma once

// JSON forms of reports, manifests and run configuration files.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "prpl/diagnostics.hpp"
#include "prpl/error.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/pseudo.hpp"
#include "prpl/selector.hpp"

namespace prpl {

using Json = nlohmann::ordered_json;

namespace detail {

template <typename T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

}  // namespace detail

inline Json to_json(const SelectionReport& r) {
  Json distances = Json::object();
  for (const auto& [id, d] : r.distances) distances[id] = d;
  return Json{{"metric", to_string(r.metric.kind)}, {"distances", distances}, {"chosen", r.chosen}};
}

inline Json to_json(const TrainConfig& tc) {
  return Json{{"lr", tc.learning_rate},         {"batch", tc.batch_size},
              {"epochs", tc.epochs},            {"seed", tc.seed},
              {"mmd_weight", tc.mmd_weight},    {"l2_normalize", tc.l2_normalize_inputs},
              {"hidden_width", tc.hidden_width}};
}

inline Json to_json(const RecurrentConfig& rc) {
  return Json{{"T", rc.iterations()}, {"p_schedule", rc.p_schedule()}, {"train", to_json(rc.train())}};
}

inline Json to_json(const StageRecord& s) {
  Json j{{"t", s.t},
         {"threshold", detail::optional_json(s.threshold)},
         {"n_confident", s.n_confident},
         {"n_updated", s.n_updated},
         {"loss_source", s.loss_source},
         {"loss_mmd", s.loss_mmd},
         {"dist_marginal", s.dist_marginal},
         {"dist_conditional", detail::optional_json(s.dist_conditional)},
         {"d_H", detail::optional_json(s.d_h)}};
  if (s.accuracy) j["accuracy"] = *s.accuracy;
  return j;
}

inline Json to_json(const RunReport& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) stages.push_back(to_json(s));
  return Json{{"stages", stages}, {"config", to_json(r.config)}, {"seed", r.seed}};
}

inline Json to_json(const DivergenceReport& d) {
  return Json{{"T", d.iterations},
              {"p_schedule", d.p_schedule},
              {"dist_marginal", d.dist_marginal},
              {"dist_conditional_mean", d.dist_conditional_mean},
              {"d_H", d.d_h},
              {"source_risk", detail::optional_json(d.source_risk)},
              {"target_risk", detail::optional_json(d.target_risk)},
              {"gamma", "not estimable without target labels"}};
}

inline Json to_json(const TuneResult& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells)
    cells.push_back(Json{{"T", c.candidate.iterations},
                         {"p_schedule", c.candidate.p_schedule},
                         {"d_H", detail::optional_json(c.d_h)},
                         {"dist_marginal", c.dist_marginal},
                         {"dist_conditional_mean", detail::optional_json(c.dist_conditional_mean)}});
  const auto& best = r.cells[r.chosen].candidate;
  return Json{{"cells", cells},
              {"chosen", Json{{"index", r.chosen}, {"T", best.iterations}, {"p_schedule", best.p_schedule}}}};
}

// ---------------------------------------------------------------------------
// Strict readers: every object is checked for unknown keys and value types.
// ---------------------------------------------------------------------------

namespace detail {

inline void only_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorKind::kInvalidConfig, where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!ok.count(key)) fail(ErrorKind::kInvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) fail(ErrorKind::kInvalidConfig, where + " is missing '" + key + "'");
  return obj.at(key);
}

inline std::string get_string(const Json& v, const std::string& where) {
  if (!v.is_string()) fail(ErrorKind::kInvalidConfig, where + " must be a string");
  return v.get<std::string>();
}

inline double get_number(const Json& v, const std::string& where) {
  if (!v.is_number()) fail(ErrorKind::kInvalidConfig, where + " must be a number");
  return v.get<double>();
}

inline std::uint64_t get_count(const Json& v, const std::string& where) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(ErrorKind::kInvalidConfig, where + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool get_bool(const Json& v, const std::string& where) {
  if (!v.is_boolean()) fail(ErrorKind::kInvalidConfig, where + " must be a boolean");
  return v.get<bool>();
}

inline std::vector<double> get_numbers(const Json& v, const std::string& where) {
  if (!v.is_array()) fail(ErrorKind::kInvalidConfig, where + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) out.push_back(get_number(x, where));
  return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline Json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kInvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace detail

// {"num_classes": C, "entries": [{"extractor", "domain", "path"}]}; relative
// paths resolve against the manifest's directory.
inline DatasetManifest parse_manifest(const Json& j, const std::filesystem::path& base_dir) {
  using namespace detail;
  only_keys(j, {"num_classes", "entries"}, "manifest");
  DatasetManifest m;
  if (j.contains("num_classes"))
    m.num_classes = static_cast<std::uint32_t>(get_count(j.at("num_classes"), "manifest.num_classes"));
  const Json& entries = require(j, "entries", "manifest");
  if (!entries.is_array()) fail(ErrorKind::kInvalidConfig, "manifest.entries must be an array");
  for (const auto& e : entries) {
    only_keys(e, {"extractor", "domain", "path"}, "manifest entry");
    m.entries.push_back({get_string(require(e, "extractor", "manifest entry"), "extractor"),
                         get_string(require(e, "domain", "manifest entry"), "domain"),
                         resolve(base_dir, get_string(require(e, "path", "manifest entry"), "path"))});
  }
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::parse_json_file(path), path.parent_path());
}

inline SelectionMetric parse_selection(const Json& j) {
  using namespace detail;
  only_keys(j, {"metric", "multipliers"}, "selection");
  SelectionMetric m;
  if (j.contains("metric")) m.kind = parse_metric_kind(get_string(j.at("metric"), "selection.metric"));
  if (j.contains("multipliers")) m.multipliers = get_numbers(j.at("multipliers"), "selection.multipliers");
  return m;
}

inline TrainConfig parse_train(const Json& j) {
  using namespace detail;
  only_keys(j, {"lr", "batch", "epochs", "seed", "mmd_weight", "l2_normalize", "hidden_width"}, "train");
  TrainConfig tc;
  if (j.contains("lr")) tc.learning_rate = get_number(j.at("lr"), "train.lr");
  if (j.contains("batch")) tc.batch_size = get_count(j.at("batch"), "train.batch");
  if (j.contains("epochs")) tc.epochs = get_count(j.at("epochs"), "train.epochs");
  if (j.contains("seed")) tc.seed = get_count(j.at("seed"), "train.seed");
  if (j.contains("mmd_weight")) tc.mmd_weight = get_number(j.at("mmd_weight"), "train.mmd_weight");
  if (j.contains("l2_normalize")) tc.l2_normalize_inputs = get_bool(j.at("l2_normalize"), "train.l2_normalize");
  if (j.contains("hidden_width")) tc.hidden_width = get_count(j.at("hidden_width"), "train.hidden_width");
  tc.validate();
  return tc;
}

inline TuneGrid parse_grid(const Json& j) {
  using namespace detail;
  only_keys(j, {"T", "p_schedules", "cells"}, "grid");
  if (j.contains("cells")) {
    if (j.contains("T") || j.contains("p_schedules"))
      fail(ErrorKind::kInvalidConfig, "grid takes either 'cells' or 'T' + 'p_schedules', not both");
    const Json& cells = j.at("cells");
    if (!cells.is_array()) fail(ErrorKind::kInvalidConfig, "grid.cells must be an array");
    TuneGrid g;
    for (const auto& c : cells) {
      only_keys(c, {"T", "p_schedule"}, "grid cell");
      g.cells.push_back({get_count(require(c, "T", "grid cell"), "grid cell T"),
                         get_numbers(require(c, "p_schedule", "grid cell"), "grid cell p_schedule")});
    }
    return g;
  }
  const Json& ts = require(j, "T", "grid");
  const Json& ps = require(j, "p_schedules", "grid");
  if (!ts.is_array() || !ps.is_array())
    fail(ErrorKind::kInvalidConfig, "grid.T and grid.p_schedules must be arrays");
  std::vector<std::size_t> t_values;
  for (const auto& t : ts) t_values.push_back(get_count(t, "grid.T"));
  std::vector<std::vector<double>> schedules;
  for (const auto& p : ps) schedules.push_back(get_numbers(p, "grid.p_schedules"));
  return TuneGrid::cross(t_values, schedules);
}

// Where the two domains come from: either explicit files, or a manifest plus
// domain names, in which case the extractor is picked by select_best first.
struct InputSpec {
  std::optional<std::filesystem::path> source_file;
  std::optional<std::filesystem::path> target_file;
  std::optional<std::filesystem::path> manifest_file;
  std::string source_domain;
  std::string target_domain;
};

struct RunConfigFile {
  InputSpec inputs;
  SelectionMetric selection;
  TrainConfig train;
  std::size_t iterations = 3;
  std::vector<double> p_schedule{0.5, 0.8, 0.9};
  std::optional<TuneGrid> grid;
  std::optional<std::filesystem::path> report_path;
  std::optional<std::filesystem::path> head_path;

  RecurrentConfig recurrent() const { return RecurrentConfig(iterations, p_schedule, train); }
};

inline RunConfigFile parse_run_config(const Json& j, const std::filesystem::path& base_dir) {
  using namespace detail;
  only_keys(j, {"manifest", "selection", "train", "recurrent", "grid", "output"}, "config");
  RunConfigFile cfg;

  const Json& m = require(j, "manifest", "config");
  only_keys(m, {"source", "target", "path", "source_domain", "target_domain"}, "manifest");
  const bool direct = m.contains("source") || m.contains("target");
  const bool indirect = m.contains("path") || m.contains("source_domain") || m.contains("target_domain");
  if (direct == indirect)
    fail(ErrorKind::kInvalidConfig,
         "manifest needs either 'source' + 'target' files or 'path' + 'source_domain' + 'target_domain'");
  if (direct) {
    cfg.inputs.source_file = resolve(base_dir, get_string(require(m, "source", "manifest"), "manifest.source"));
    cfg.inputs.target_file = resolve(base_dir, get_string(require(m, "target", "manifest"), "manifest.target"));
  } else {
    cfg.inputs.manifest_file = resolve(base_dir, get_string(require(m, "path", "manifest"), "manifest.path"));
    cfg.inputs.source_domain = get_string(require(m, "source_domain", "manifest"), "manifest.source_domain");
    cfg.inputs.target_domain = get_string(require(m, "target_domain", "manifest"), "manifest.target_domain");
  }

  if (j.contains("selection")) cfg.selection = parse_selection(j.at("selection"));
  if (j.contains("train")) cfg.train = parse_train(j.at("train"));
  if (j.contains("recurrent")) {
    const Json& r = j.at("recurrent");
    only_keys(r, {"T", "p_schedule"}, "recurrent");
    if (r.contains("p_schedule")) cfg.p_schedule = get_numbers(r.at("p_schedule"), "recurrent.p_schedule");
    cfg.iterations = r.contains("T") ? get_count(r.at("T"), "recurrent.T") : cfg.p_schedule.size();
  }
  (void)cfg.recurrent();  // schedule invariants are checked before any compute
  if (j.contains("grid")) cfg.grid = parse_grid(j.at("grid"));
  if (j.contains("output")) {
    const Json& o = j.at("output");
    only_keys(o, {"report", "head"}, "output");
    if (o.contains("report")) cfg.report_path = resolve(base_dir, get_string(o.at("report"), "output.report"));
    if (o.contains("head")) cfg.head_path = resolve(base_dir, get_string(o.at("head"), "output.head"));
  }
  return cfg;
}

inline RunConfigFile load_run_config(const std::filesystem::path& path) {
  return parse_run_config(detail::parse_json_file(path), path.parent_path());
}

}  // namespace prpl
