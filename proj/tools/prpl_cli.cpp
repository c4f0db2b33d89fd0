// prpl: command-line front end.
//
//   prpl select <manifest.json> --source A --target B [--metric mean_l2|mmd|mean_cosine]
//   prpl train  <config.json>
//   prpl tune   <config.json>
//   prpl eval   <head.bin> <features>
//   prpl synth  --out-prefix P [--classes C --dim D --n-source N --n-target M
//                               --separation S --shift H --noise SIGMA --seed K]
//
// Machine output is JSON (stdout or the configured report path); summaries go
// to stderr. Exit codes: 0 ok, 1 runtime/IO failure, 2 config/validation.

#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "prpl/json_io.hpp"
#include "prpl/prpl.hpp"

namespace {

using prpl::ErrorKind;
using prpl::Json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo:
    case ErrorKind::kDegenerateMean:
    case ErrorKind::kDegenerateData:
    case ErrorKind::kNoSharedClasses:
    case ErrorKind::kNonFiniteGradient:
    case ErrorKind::kIncompleteReport:
      return 1;
    default:
      return 2;
  }
}

void emit(const Json& j, const std::optional<std::filesystem::path>& path) {
  const std::string text = j.dump(2) + "\n";
  if (path) {
    prpl::detail::write_file(*path, text);
  } else {
    std::cout << text;
  }
}

struct Inputs {
  prpl::FeatureSet source;
  prpl::FeatureSet target;
};

Inputs load_inputs(const prpl::RunConfigFile& cfg) {
  if (cfg.inputs.source_file)
    return {prpl::load_feature_set(*cfg.inputs.source_file), prpl::load_feature_set(*cfg.inputs.target_file)};
  const auto manifest = prpl::load_manifest(*cfg.inputs.manifest_file);
  const auto sel = prpl::select_best(manifest, cfg.inputs.source_domain, cfg.inputs.target_domain, cfg.selection);
  std::cerr << "selected extractor '" << sel.chosen << "' (" << prpl::to_string(sel.metric.kind) << " = "
            << sel.distances.at(sel.chosen) << ")\n";
  const auto* s = manifest.find(sel.chosen, cfg.inputs.source_domain);
  const auto* t = manifest.find(sel.chosen, cfg.inputs.target_domain);
  return {prpl::load_feature_set(s->path), prpl::load_feature_set(t->path)};
}

int cmd_select(const std::string& manifest_path, const std::string& metric, const std::string& source,
               const std::string& target) {
  prpl::SelectionMetric m;
  m.kind = prpl::parse_metric_kind(metric);
  const auto report = prpl::select_best(prpl::load_manifest(manifest_path), source, target, m);
  std::cerr << "chosen: " << report.chosen << "\n";
  emit(prpl::to_json(report), std::nullopt);
  return 0;
}

int cmd_train(const std::string& config_path) {
  const auto cfg = prpl::load_run_config(config_path);
  const auto rc = cfg.recurrent();
  const Inputs in = load_inputs(cfg);
  // Only eval reads target labels.
  const auto fit = prpl::recurrent_fit(in.source, in.target.without_labels(), rc);

  Json j = prpl::to_json(fit.report);
  j["extractor"] = in.source.extractor_id();
  try {
    auto div = prpl::estimate_divergence(fit.report);
    prpl::attach_risks(div, fit.head, rc.train().l2_normalize_inputs ? in.source.l2_normalized() : in.source);
    j["divergence"] = prpl::to_json(div);
  } catch (const prpl::Error& e) {
    if (e.kind() != ErrorKind::kIncompleteReport) throw;
    j["divergence"] = nullptr;
  }
  emit(j, cfg.report_path);
  if (cfg.head_path) prpl::save_head(fit.head, *cfg.head_path);
  for (const auto& s : fit.report.stages) {
    std::cerr << "stage " << s.t << ": n_updated=" << s.n_updated << " loss_source=" << s.loss_source
              << " loss_mmd=" << s.loss_mmd << " dist_marginal=" << s.dist_marginal;
    if (s.dist_conditional) std::cerr << " dist_conditional=" << *s.dist_conditional;
    std::cerr << "\n";
  }
  return 0;
}

int cmd_tune(const std::string& config_path) {
  const auto cfg = prpl::load_run_config(config_path);
  if (!cfg.grid) prpl::fail(ErrorKind::kInvalidConfig, "tune needs a 'grid' section");
  const Inputs in = load_inputs(cfg);
  const auto result = prpl::tune(in.source, prpl::UnlabeledTarget(in.target), *cfg.grid, cfg.train);
  const auto& best = result.cells[result.chosen];
  std::cerr << "chosen: T=" << best.candidate.iterations << " d_H=" << *best.d_h << "\n";
  emit(prpl::to_json(result), cfg.report_path);
  return 0;
}

int cmd_eval(const std::string& head_path, const std::string& features_path, bool l2_normalize) {
  const auto head = prpl::load_head(head_path);
  auto fs = prpl::load_feature_set(features_path);
  if (l2_normalize) fs = fs.l2_normalized();
  const double acc = prpl::evaluate_accuracy(head, fs);
  std::cerr << "accuracy: " << acc << "\n";
  emit(Json{{"accuracy", acc}}, std::nullopt);
  return 0;
}

int cmd_synth(const prpl::SynthSpec& spec, std::uint64_t seed, const std::string& prefix) {
  const auto domains = prpl::synth_gaussian_domains(spec, seed);
  const std::string source_path = prefix + "_source.bin";
  const std::string target_path = prefix + "_target.bin";
  prpl::save_feature_set(domains.source, source_path);
  prpl::save_feature_set(domains.target, target_path);
  emit(Json{{"source", source_path}, {"target", target_path}, {"shift_norm", domains.shift.norm()}}, std::nullopt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pre-trained feature selection and recurrent pseudo-label domain adaptation"};
  app.require_subcommand(1);

  std::string manifest_path, metric = "mean_l2", source_domain, target_domain;
  auto* select = app.add_subcommand("select", "Rank extractors by source/target feature distance");
  select->add_option("manifest", manifest_path, "Manifest JSON")->required();
  select->add_option("--metric", metric, "mean_l2, mmd or mean_cosine");
  select->add_option("--source", source_domain, "Source domain id")->required();
  select->add_option("--target", target_domain, "Target domain id")->required();

  std::string config_path;
  auto* train = app.add_subcommand("train", "Run recurrent pseudo-label training from a config file");
  train->add_option("config", config_path, "Run config JSON")->required();
  auto* tune = app.add_subcommand("tune", "Grid-search T and p_schedule by the d_H estimate");
  tune->add_option("config", config_path, "Run config JSON with a grid section")->required();

  std::string head_path, features_path;
  bool l2_normalize = false;
  auto* eval = app.add_subcommand("eval", "Accuracy of a saved head on a labeled feature file");
  eval->add_option("head", head_path, "Head file (PRPLHD01)")->required();
  eval->add_option("features", features_path, "Labeled feature file")->required();
  eval->add_flag("--l2-normalize", l2_normalize, "L2-normalize rows before scoring");

  prpl::SynthSpec spec;
  std::uint64_t seed = 0;
  std::string prefix;
  auto* synth = app.add_subcommand("synth", "Write a synthetic shifted-Gaussian source/target pair");
  synth->add_option("--classes", spec.num_classes, "Number of classes");
  synth->add_option("--dim", spec.d, "Feature dimension");
  synth->add_option("--n-source", spec.n_per_class_source, "Source rows per class");
  synth->add_option("--n-target", spec.n_per_class_target, "Target rows per class");
  synth->add_option("--separation", spec.class_mean_separation, "Norm of each class mean");
  synth->add_option("--shift", spec.domain_shift, "Norm of the target shift vector");
  synth->add_option("--noise", spec.noise_sigma, "Per-coordinate noise std");
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out-prefix", prefix, "Output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*select) return cmd_select(manifest_path, metric, source_domain, target_domain);
    if (*train) return cmd_train(config_path);
    if (*tune) return cmd_tune(config_path);
    if (*eval) return cmd_eval(head_path, features_path, l2_normalize);
    if (*synth) return cmd_synth(spec, seed, prefix);
  } catch (const prpl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
