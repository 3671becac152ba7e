#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/classify.hpp"
#include "apa/eval.hpp"
#include "apa/extract.hpp"
#include "apa/glm.hpp"
#include "apa/registration.hpp"
#include "apa/volume.hpp"

namespace apa {

/// Declarative run configuration; one JSON file drives every stage.
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;
  std::filesystem::path atlas_path;
  std::filesystem::path reference_path;

  HrfParams hrf;
  NoiseModel noise;

  struct Registration {
    bool enabled = true;
    SimilarityMetric metric;
    SearchConfig search;
  } registration;

  struct Classifier {
    std::uint64_t seed = 1;
    TreeConfig tree;
  } classifier;

  std::vector<std::string> stages;  // subset of the canonical stage order
  int lag_scans = 0;
  bool emit_plots = false;
};

RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks referenced inputs exist and the output directory is creatable;
/// error messages name the offending config field.
void validate_config(const RunConfig& cfg, const std::vector<std::string>& stages);

/// One discovered input session: a directory holding meta.json, data.apav
/// and onsets.csv.
struct SessionInputs {
  std::filesystem::path dir;
  SessionMeta meta;
  std::string key;  // "<subject>_<session>", used for artifact folders
};

std::vector<SessionInputs> discover_sessions(const std::filesystem::path& data_dir);

// Stage entry points. Each reads upstream artifacts from disk and writes its
// own outputs under cfg.output_dir; they compose in the canonical order
// glm -> extract -> register -> features -> train/predict/evaluate.
void stage_glm(const RunConfig& cfg);
void stage_extract(const RunConfig& cfg);
void stage_register(const RunConfig& cfg);
void stage_features(const RunConfig& cfg);
void stage_train(const RunConfig& cfg);
void stage_predict(const RunConfig& cfg);
MetricsReport stage_evaluate(const RunConfig& cfg);

/// Stage failures carry the stage name so callers can report it.
class StageError : public Error {
public:
  StageError(std::string stage, const Error& inner)
      : Error(inner.code(), inner.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

/// Runs the configured stages in canonical order. Returns the process exit
/// status (0 on success).
int run_pipeline(const RunConfig& cfg);

/// Writes `subjects` phantom sessions (seed offset per subject) plus the
/// shared atlas and reference volumes into out_dir.
void synth_sessions(const struct PhantomSpec& spec, int subjects,
                    const std::filesystem::path& out_dir);

const std::vector<std::string>& canonical_stages();

}  // namespace apa
