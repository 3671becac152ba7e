#include "apa/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "apa/parallel.hpp"
#include "apa/synth.hpp"

namespace apa {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string cond_tag(int p, int q) {
  return "p" + std::to_string(p) + "_q" + std::to_string(q);
}

fs::path session_out_dir(const RunConfig& cfg, const SessionInputs& s) {
  return cfg.output_dir / "sessions" / s.key;
}

void require_file(const fs::path& p, const std::string& field) {
  if (!fs::exists(p))
    raise(errc::config_invalid, field + ": file not found: " + p.string());
}

}  // namespace

const std::vector<std::string>& canonical_stages() {
  static const std::vector<std::string> stages{
      "glm", "extract", "register", "features", "train", "predict", "evaluate"};
  return stages;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig cfg;
  auto path_field = [&](const char* key) -> fs::path {
    if (!j.contains(key)) return {};
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  try {
    cfg.data_dir = path_field("data_dir");
    cfg.output_dir = path_field("output_dir");
    cfg.atlas_path = path_field("atlas");
    cfg.reference_path = path_field("reference");

    if (j.contains("hrf")) {
      const auto& h = j.at("hrf");
      if (h.contains("peak_delay")) cfg.hrf.peak_delay = h.at("peak_delay").get<double>();
      if (h.contains("undershoot_delay"))
        cfg.hrf.undershoot_delay = h.at("undershoot_delay").get<double>();
      if (h.contains("peak_dispersion"))
        cfg.hrf.peak_dispersion = h.at("peak_dispersion").get<double>();
      if (h.contains("undershoot_dispersion"))
        cfg.hrf.undershoot_dispersion = h.at("undershoot_dispersion").get<double>();
      if (h.contains("undershoot_ratio"))
        cfg.hrf.undershoot_ratio = h.at("undershoot_ratio").get<double>();
      if (h.contains("length")) cfg.hrf.length = h.at("length").get<double>();
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      std::string kind = n.value("kind", "identity");
      if (kind == "identity") {
        cfg.noise = NoiseModel::identity(n.value("sigma2", 1.0));
      } else if (kind == "ar1") {
        cfg.noise = NoiseModel::ar1(n.value("rho", 0.0), n.value("sigma2", 1.0));
      } else {
        raise(errc::config_invalid, "noise.kind: unknown value '" + kind + "'");
      }
    }
    if (j.contains("registration")) {
      const auto& r = j.at("registration");
      cfg.registration.enabled = r.value("enabled", true);
      if (r.contains("metric"))
        cfg.registration.metric.kind = metric_from_name(r.at("metric").get<std::string>());
      if (r.contains("bins")) cfg.registration.metric.n_bins = r.at("bins").get<int>();
      if (r.contains("levels")) cfg.registration.search.levels = r.at("levels").get<int>();
      if (r.contains("max_sweeps"))
        cfg.registration.search.max_sweeps = r.at("max_sweeps").get<int>();
    }
    if (j.contains("classifier")) {
      const auto& c = j.at("classifier");
      cfg.classifier.seed = c.value("seed", std::uint64_t{1});
      if (c.contains("max_depth"))
        cfg.classifier.tree.max_depth = c.at("max_depth").get<int>();
      if (c.contains("min_leaf_weight"))
        cfg.classifier.tree.min_leaf_weight = c.at("min_leaf_weight").get<double>();
    }
    if (j.contains("stages"))
      cfg.stages = j.at("stages").get<std::vector<std::string>>();
    if (j.contains("lag_scans")) cfg.lag_scans = j.at("lag_scans").get<int>();
    if (j.contains("emit_plots")) cfg.emit_plots = j.at("emit_plots").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    raise(errc::config_invalid, std::string("bad run config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::config_invalid, "config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::config_invalid, "config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

void validate_config(const RunConfig& cfg, const std::vector<std::string>& stages) {
  for (const auto& s : stages)
    if (std::find(canonical_stages().begin(), canonical_stages().end(), s) ==
        canonical_stages().end())
      raise(errc::config_invalid, "stages: unknown stage '" + s + "'");

  auto wants = [&](const char* s) {
    return std::find(stages.begin(), stages.end(), s) != stages.end();
  };
  if (wants("glm") || wants("extract")) {
    if (cfg.data_dir.empty())
      raise(errc::config_invalid, "data_dir: required but not set");
    if (!fs::is_directory(cfg.data_dir))
      raise(errc::config_invalid, "data_dir: not a directory: " + cfg.data_dir.string());
  }
  if (wants("register") && cfg.registration.enabled)
    require_file(cfg.reference_path, "reference");
  if (wants("register") || wants("features"))
    require_file(cfg.atlas_path, "atlas");
  if (cfg.output_dir.empty())
    raise(errc::config_invalid, "output_dir: required but not set");
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec)
    raise(errc::config_invalid,
          "output_dir: cannot create " + cfg.output_dir.string() + ": " + ec.message());
}

std::vector<SessionInputs> discover_sessions(const fs::path& data_dir) {
  if (!fs::is_directory(data_dir))
    raise(errc::config_invalid, "data_dir: not a directory: " + data_dir.string());
  std::vector<SessionInputs> sessions;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_directory()) continue;
    fs::path meta_path = entry.path() / "meta.json";
    if (!fs::exists(meta_path)) continue;
    SessionInputs s;
    s.dir = entry.path();
    s.meta = load_session_meta(meta_path);
    s.key = s.meta.subject_id + "_" + s.meta.session_id;
    sessions.push_back(std::move(s));
  }
  std::sort(sessions.begin(), sessions.end(),
            [](const SessionInputs& a, const SessionInputs& b) { return a.key < b.key; });
  if (sessions.empty())
    raise(errc::config_invalid,
          "data_dir: no session directories (with meta.json) under " +
              data_dir.string());
  return sessions;
}

void stage_glm(const RunConfig& cfg) {
  for (const auto& s : discover_sessions(cfg.data_dir)) {
    Volume4D data = load_volume4d(s.dir / "data.apav");
    OnsetTable onsets = load_onsets_csv(s.dir / "onsets.csv");
    if (onsets.n_categories != static_cast<int>(s.meta.categories.size()))
      raise(errc::config_invalid,
            "session " + s.key + ": onsets categories (" +
                std::to_string(onsets.n_categories) + ") do not match meta (" +
                std::to_string(s.meta.categories.size()) + ")");

    DesignMatrix design =
        build_design_matrix(onsets, cfg.hrf, data.n_scans(), s.meta.tr_seconds);
    BetaMaps betas = estimate_gls(data, design, cfg.noise);
    PositiveBetaMaps pos = positive_mask(betas);

    fs::path out = session_out_dir(cfg, s);
    fs::create_directories(out);
    for (std::size_t p = 0; p < betas.maps.size(); ++p) {
      save_volume(betas.maps[p], out / ("beta_cat" + std::to_string(p) + ".apav"));
      save_volume(pos.maps[p], out / ("positive_cat" + std::to_string(p) + ".apav"));
    }
    save_volume(betas.residual_variance, out / "residual_variance.apav");
  }
}

void stage_extract(const RunConfig& cfg) {
  for (const auto& s : discover_sessions(cfg.data_dir)) {
    Volume4D data = load_volume4d(s.dir / "data.apav");
    OnsetTable onsets = load_onsets_csv(s.dir / "onsets.csv");
    fs::path out = session_out_dir(cfg, s);
    if (!fs::exists(out / "positive_cat0.apav"))
      raise(errc::config_invalid,
            "session " + s.key + ": run the glm stage first (missing " +
                (out / "positive_cat0.apav").string() + ")");

    PositiveBetaMaps pos;
    for (int p = 0; p < onsets.n_categories; ++p)
      pos.maps.push_back(
          load_volume3d(out / ("positive_cat" + std::to_string(p) + ".apav")));

    auto conditions = partition_conditions(data, onsets, s.meta.tr_seconds, cfg.lag_scans);
    for (const auto& cond : conditions) {
      MaskedCondition masked = apply_beta_mask(sum_condition(cond), pos);
      save_volume(masked.image,
                  out / ("masked_" +
                         cond_tag(masked.category_index, masked.condition_index) +
                         ".apav"));
    }
  }
}

void stage_register(const RunConfig& cfg) {
  if (!cfg.registration.enabled) return;
  Volume3D ref = load_volume3d(cfg.reference_path);
  AtlasVolume atlas = load_atlas(cfg.atlas_path);

  for (const auto& s : discover_sessions(cfg.data_dir)) {
    OnsetTable onsets = load_onsets_csv(s.dir / "onsets.csv");
    fs::path out = session_out_dir(cfg, s);

    struct Job {
      int p, q;
    };
    std::vector<Job> jobs;
    for (const auto& e : onsets.events) jobs.push_back({e.category_index, e.condition_index});
    std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
      return std::pair(a.p, a.q) < std::pair(b.p, b.q);
    });

    std::vector<RegisteredCondition> results(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
      fs::path src = out / ("masked_" + cond_tag(jobs[i].p, jobs[i].q) + ".apav");
      if (!fs::exists(src))
        raise(errc::config_invalid,
              "session " + s.key + ": run the extract stage first (missing " +
                  src.string() + ")");
      Volume3D moving = load_volume3d(src);
      RegisteredCondition rc;
      rc.category_index = jobs[i].p;
      rc.condition_index = jobs[i].q;
      rc.transform = optimize_transform(moving, ref, cfg.registration.metric,
                                        cfg.registration.search);
      rc.image = resample_trilinear(moving, rc.transform, ref.geom());
      rc.score = compute_similarity(rc.image, ref, cfg.registration.metric);
      results[i] = std::move(rc);
    });

    std::ofstream report(out / "registration_report.csv", std::ios::trunc);
    report << "condition,metric,score,error\n";
    for (const auto& rc : results) {
      std::string tag = cond_tag(rc.category_index, rc.condition_index);
      save_volume(rc.image, out / ("registered_" + tag + ".apav"));
      save_transform(rc.transform, out / ("transform_" + tag + ".json"));
      report << tag << ',' << metric_name(cfg.registration.metric.kind) << ','
             << fmt_double(rc.score) << ','
             << fmt_double(registration_error(rc.image, atlas)) << '\n';
    }
  }
}

void stage_features(const RunConfig& cfg) {
  AtlasVolume atlas = load_atlas(cfg.atlas_path);
  std::string atlas_id = cfg.atlas_path.filename().string();

  std::vector<SessionFeatures> sessions;
  for (const auto& s : discover_sessions(cfg.data_dir)) {
    OnsetTable onsets = load_onsets_csv(s.dir / "onsets.csv");
    fs::path out = session_out_dir(cfg, s);

    SessionFeatures sf;
    sf.meta = s.meta;
    sf.atlas_id = atlas_id;
    const char* prefix = cfg.registration.enabled ? "registered_" : "masked_";

    struct Key {
      int p, q;
    };
    std::vector<Key> keys;
    for (const auto& e : onsets.events) keys.push_back({e.category_index, e.condition_index});
    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
      return std::pair(a.p, a.q) < std::pair(b.p, b.q);
    });

    for (const auto& k : keys) {
      fs::path src = out / (prefix + cond_tag(k.p, k.q) + ".apav");
      if (!fs::exists(src))
        raise(errc::config_invalid, "session " + s.key +
                                        ": missing upstream artifact " + src.string());
      FeatureVector fv = pool_atlas_features(load_volume3d(src), atlas);
      fv.category_index = k.p;
      fv.condition_index = k.q;
      sf.rows.push_back(std::move(fv));
    }
    sessions.push_back(std::move(sf));
  }

  FeatureTable table = build_feature_table(sessions);
  save_feature_table_csv(table, cfg.output_dir / "features.csv");
}

namespace {

LabeledDataset dataset_from_table(const FeatureTable& table) {
  LabeledDataset d;
  for (const auto& r : table.rows) {
    d.features.push_back(r.values);
    d.labels.push_back(r.category_index);
  }
  return d;
}

}  // namespace

void stage_train(const RunConfig& cfg) {
  FeatureTable table = load_feature_table_csv(cfg.output_dir / "features.csv");
  EcocConfig ecfg{cfg.classifier.tree, cfg.classifier.seed};
  EcocModel model =
      train_ecoc_ova(dataset_from_table(table), ecfg, table.category_names());
  save_ecoc_model(model, cfg.output_dir / "model.json");
}

void stage_predict(const RunConfig& cfg) {
  FeatureTable table = load_feature_table_csv(cfg.output_dir / "features.csv");
  EcocModel model = load_ecoc_model(cfg.output_dir / "model.json");

  std::ofstream out(cfg.output_dir / "predictions.csv", std::ios::trunc);
  out << "subject,session,category,condition,predicted,correct\n";
  for (const auto& r : table.rows) {
    int pred = predict_ecoc(model, r.values);
    const std::string& pred_name =
        model.categories[static_cast<std::size_t>(pred)];
    out << r.subject_id << ',' << r.session_id << ',' << r.category_name << ','
        << r.condition_index << ',' << pred_name << ','
        << (pred_name == r.category_name ? 1 : 0) << '\n';
  }
}

MetricsReport stage_evaluate(const RunConfig& cfg) {
  FeatureTable table = load_feature_table_csv(cfg.output_dir / "features.csv");
  EcocConfig ecfg{cfg.classifier.tree, cfg.classifier.seed};
  MetricsReport report = evaluate_loo(table, ecfg);

  save_report_json(report, cfg.output_dir / "report.json");
  {
    std::ofstream out(cfg.output_dir / "confusion.csv", std::ios::trunc);
    out << "truth";
    for (const auto& c : report.categories) out << ',' << c;
    out << '\n';
    for (std::size_t a = 0; a < report.confusion.size(); ++a) {
      out << report.categories[a];
      for (long long v : report.confusion[a]) out << ',' << v;
      out << '\n';
    }
  }
  if (cfg.emit_plots) {
    save_matrix_csv(correlation_matrix(table), cfg.output_dir / "correlation.csv");
    for (std::size_t p = 0; p < report.categories.size(); ++p) {
      std::ofstream out(cfg.output_dir / ("roc_" + report.categories[p] + ".csv"),
                        std::ios::trunc);
      out << "score,positive\n";
      for (const auto& fold : report.folds)
        for (std::size_t i = 0; i < fold.truth.size(); ++i)
          out << fmt_double(fold.class_scores[i][p]) << ','
              << (fold.truth[i] == static_cast<int>(p) ? 1 : 0) << '\n';
    }
  }
  std::cout << report_to_text(report);
  return report;
}

int run_pipeline(const RunConfig& cfg) {
  std::vector<std::string> stages = cfg.stages;
  if (stages.empty())
    stages = {"glm", "extract", "register", "features", "evaluate"};
  validate_config(cfg, stages);

  auto guarded = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(name, e);
    }
  };

  for (const auto& stage : canonical_stages()) {
    if (std::find(stages.begin(), stages.end(), stage) == stages.end()) continue;
    if (stage == "glm") guarded("glm", [&] { stage_glm(cfg); });
    else if (stage == "extract") guarded("extract", [&] { stage_extract(cfg); });
    else if (stage == "register") guarded("register", [&] { stage_register(cfg); });
    else if (stage == "features") guarded("features", [&] { stage_features(cfg); });
    else if (stage == "train") guarded("train", [&] { stage_train(cfg); });
    else if (stage == "predict") guarded("predict", [&] { stage_predict(cfg); });
    else if (stage == "evaluate") guarded("evaluate", [&] { stage_evaluate(cfg); });
  }
  return 0;
}

void synth_sessions(const PhantomSpec& spec, int subjects, const fs::path& out_dir) {
  if (subjects < 1) raise(errc::invalid_argument, "need at least 1 subject");
  fs::create_directories(out_dir);

  for (int i = 0; i < subjects; ++i) {
    PhantomSpec s = spec;
    char sub[16];
    std::snprintf(sub, sizeof(sub), "sub-%02d", i + 1);
    s.subject_id = sub;
    s.rng_seed = spec.rng_seed + static_cast<std::uint64_t>(i);
    Phantom phantom = generate_phantom(s);

    fs::path dir = out_dir / (phantom.meta.subject_id + "_" + phantom.meta.session_id);
    fs::create_directories(dir);
    save_volume(phantom.data, dir / "data.apav");
    save_onsets_csv(phantom.onsets, dir / "onsets.csv");
    save_session_meta(phantom.meta, dir / "meta.json");
    for (std::size_t p = 0; p < phantom.beta_truth.maps.size(); ++p)
      save_volume(phantom.beta_truth.maps[p],
                  dir / ("beta_truth_cat" + std::to_string(p) + ".apav"));

    if (i == 0) {
      save_volume(phantom.atlas, out_dir / "atlas.apav");
      save_volume(phantom.reference, out_dir / "reference.apav");
    }
  }
}

}  // namespace apa
