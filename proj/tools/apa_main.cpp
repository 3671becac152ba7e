#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "apa/pipeline.hpp"
#include "apa/synth.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string data_dir, output_dir, atlas, reference;
  std::string metric;
  int bins = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool emit_plots = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required = true) {
  auto* opt = cmd->add_option("--config", o.config_path, "run config JSON");
  if (config_required) opt->required();
  cmd->add_option("--data-dir", o.data_dir, "override data_dir");
  cmd->add_option("--output-dir", o.output_dir, "override output_dir");
  cmd->add_option("--atlas", o.atlas, "override atlas path");
  cmd->add_option("--reference", o.reference, "override reference path");
  cmd->add_option("--metric", o.metric, "override registration metric");
  cmd->add_option("--bins", o.bins, "override histogram bin count");
  cmd->add_option("--seed", o.seed, "override classifier seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_flag("--emit-plots", o.emit_plots, "write correlation/ROC CSV data");
}

apa::RunConfig make_config(const Overrides& o) {
  apa::RunConfig cfg;
  if (!o.config_path.empty()) cfg = apa::load_run_config(o.config_path);
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (!o.atlas.empty()) cfg.atlas_path = o.atlas;
  if (!o.reference.empty()) cfg.reference_path = o.reference;
  if (!o.metric.empty()) cfg.registration.metric.kind = apa::metric_from_name(o.metric);
  if (o.bins > 0) cfg.registration.metric.n_bins = o.bins;
  if (o.seed_set) cfg.classifier.seed = o.seed;
  if (o.emit_plots) cfg.emit_plots = true;
  return cfg;
}

int fail(const std::string& stage, const std::string& code, const std::string& message) {
  nlohmann::json j{{"error", {{"stage", stage}, {"code", code}, {"message", message}}}};
  std::cerr << j.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"apa: anatomical-region feature decoding for 4D activity volumes"};
  app.require_subcommand(1);

  // synth
  std::string spec_path, synth_out;
  int subjects = 1;
  auto* synth = app.add_subcommand("synth", "generate phantom sessions");
  synth->add_option("--spec", spec_path, "phantom spec JSON (omit for the default)");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--subjects", subjects, "number of subjects to generate");

  struct StageCmd {
    const char* name;
    const char* help;
    Overrides overrides;
    CLI::App* cmd = nullptr;
  };
  std::vector<StageCmd> stage_cmds{
      {"glm", "estimate coefficient maps", {}, nullptr},
      {"extract", "condition sums masked by positive coefficients", {}, nullptr},
      {"register", "register masked conditions to the reference", {}, nullptr},
      {"features", "pool atlas-region features", {}, nullptr},
      {"train", "train the multi-class model on features.csv", {}, nullptr},
      {"predict", "predict categories for features.csv rows", {}, nullptr},
      {"evaluate", "leave-one-subject-out cross validation", {}, nullptr},
      {"run", "run all configured stages in order", {}, nullptr},
  };
  for (auto& sc : stage_cmds) {
    sc.cmd = app.add_subcommand(sc.name, sc.help);
    add_common(sc.cmd, sc.overrides);
  }

  CLI11_PARSE(app, argc, argv);

  std::string current = "cli";
  try {
    if (synth->parsed()) {
      current = "synth";
      apa::PhantomSpec spec =
          spec_path.empty() ? apa::default_phantom_spec() : apa::load_phantom_spec(spec_path);
      apa::synth_sessions(spec, subjects, synth_out);
      return 0;
    }
    for (auto& sc : stage_cmds) {
      if (!sc.cmd->parsed()) continue;
      current = sc.name;
      apa::RunConfig cfg = make_config(sc.overrides);
      if (std::string(sc.name) == "run") return apa::run_pipeline(cfg);
      cfg.stages = {sc.name};
      return apa::run_pipeline(cfg);
    }
  } catch (const apa::StageError& e) {
    return fail(e.stage(), apa::errc_name(e.code()), e.what());
  } catch (const apa::Error& e) {
    return fail(current, apa::errc_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail(current, "unexpected", e.what());
  }
  return 0;
}
