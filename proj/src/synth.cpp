#include "apa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace apa {

namespace {

/// Box-Muller on top of mt19937_64; bit-stable across standard libraries,
/// unlike std::normal_distribution.
class NormalSampler {
public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = unit();
    double u2 = unit();
    double r = std::sqrt(-2.0 * std::log1p(-u1));  // u1 in [0,1) keeps log finite
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

private:
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

void validate_spec(const PhantomSpec& spec) {
  if (spec.n_categories < 2)
    raise(errc::invalid_argument, "phantom needs at least 2 categories");
  if (!(spec.snr > 0.0)) raise(errc::invalid_argument, "snr must be positive");
  if (!(spec.tr_seconds > 0.0)) raise(errc::invalid_argument, "tr must be positive");
  if (spec.event_duration_scans < 1 || spec.event_gap_scans < 0 || spec.rest_scans < 0)
    raise(errc::invalid_argument, "bad event schedule in phantom spec");
  if (!(spec.noise_ar1_rho > -1.0 && spec.noise_ar1_rho < 1.0))
    raise(errc::invalid_argument, "noise AR(1) rho must lie inside (-1, 1)");
  if (spec.atlas_cubes.empty())
    raise(errc::invalid_argument, "phantom spec has no atlas cubes");
  for (const auto& c : spec.atlas_cubes) {
    if (c.label == 0) raise(errc::invalid_argument, "atlas cube label must be >= 1");
    for (int d = 0; d < 3; ++d) {
      if (c.size[d] == 0)
        raise(errc::invalid_argument, "atlas cube has zero extent");
      if (c.origin[d] + c.size[d] > spec.geom.dims[d])
        raise(errc::invalid_argument, "atlas cube exceeds phantom dims");
    }
  }
  if (spec.beta_pattern.size() != static_cast<std::size_t>(spec.n_categories))
    raise(errc::invalid_argument,
          "beta_pattern must list one region->amplitude map per category");
}

}  // namespace

PhantomSpec default_phantom_spec() {
  PhantomSpec spec;
  spec.atlas_cubes = {
      {{2, 2, 1}, {4, 4, 3}, 1},
      {{9, 2, 1}, {4, 4, 3}, 2},
      {{2, 9, 4}, {4, 4, 3}, 3},
      {{9, 9, 4}, {4, 4, 3}, 4},
  };
  const std::size_t n_cubes = spec.atlas_cubes.size();
  spec.beta_pattern.resize(static_cast<std::size_t>(spec.n_categories));
  for (std::size_t p = 0; p < spec.beta_pattern.size(); ++p) {
    std::uint32_t active = static_cast<std::uint32_t>(p % n_cubes) + 1;
    std::uint32_t suppressed = static_cast<std::uint32_t>((p + 1) % n_cubes) + 1;
    // graded amplitudes keep the summed reference image asymmetric
    spec.beta_pattern[p][active] = 3.0 + 0.5 * static_cast<double>(p);
    spec.beta_pattern[p][suppressed] = -1.0;
  }
  return spec;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  validate_spec(spec);
  const int P = spec.n_categories;
  const Geometry& g = spec.geom;
  const std::size_t n_vox = g.n_voxels();

  std::vector<int> q(spec.events_per_category);
  if (q.empty()) q.assign(static_cast<std::size_t>(P), 6);
  if (q.size() != static_cast<std::size_t>(P))
    raise(errc::invalid_argument, "events_per_category must have one entry per category");
  for (int v : q)
    if (v < 1) raise(errc::invalid_argument, "each category needs >= 1 event");

  // atlas from non-overlapping cubes
  std::vector<std::uint32_t> labels(n_vox, 0);
  for (const auto& c : spec.atlas_cubes)
    for (std::size_t z = c.origin[2]; z < c.origin[2] + c.size[2]; ++z)
      for (std::size_t y = c.origin[1]; y < c.origin[1] + c.size[1]; ++y)
        for (std::size_t x = c.origin[0]; x < c.origin[0] + c.size[0]; ++x) {
          std::size_t i = voxel_offset(g, x, y, z);
          if (labels[i] != 0)
            raise(errc::invalid_argument, "atlas cubes overlap at voxel " +
                                              std::to_string(i));
          labels[i] = c.label;
        }
  AtlasVolume atlas(g, std::move(labels));

  // planted coefficient maps
  std::vector<Volume3D> beta(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p) {
    std::vector<double> map(n_vox, 0.0);
    const auto& pattern = spec.beta_pattern[static_cast<std::size_t>(p)];
    for (std::size_t v = 0; v < n_vox; ++v) {
      std::uint32_t l = atlas.labels()[v];
      if (l == 0) continue;
      auto it = pattern.find(l);
      if (it != pattern.end()) map[v] = it->second;
    }
    beta[static_cast<std::size_t>(p)] = Volume3D(g, std::move(map));
  }

  // interleaved event schedule, one condition per event
  std::vector<OnsetEvent> events;
  std::vector<int> condition_counter(static_cast<std::size_t>(P), 0);
  int cursor = spec.rest_scans;
  int max_q = *std::max_element(q.begin(), q.end());
  for (int e = 0; e < max_q; ++e) {
    for (int p = 0; p < P; ++p) {
      if (e >= q[static_cast<std::size_t>(p)]) continue;
      OnsetEvent ev;
      ev.onset_seconds = cursor * spec.tr_seconds;
      ev.duration_seconds = spec.event_duration_scans * spec.tr_seconds;
      ev.category_index = p;
      ev.condition_index = condition_counter[static_cast<std::size_t>(p)]++;
      events.push_back(ev);
      cursor += spec.event_duration_scans + spec.event_gap_scans;
    }
  }
  const std::size_t n_scans = static_cast<std::size_t>(cursor + spec.rest_scans);
  OnsetTable onsets = OnsetTable::from_events(std::move(events), P);

  DesignMatrix design =
      build_design_matrix(onsets, spec.hrf, n_scans, spec.tr_seconds);

  // noiseless signal and its spread
  std::vector<double> data(n_scans * n_vox, 0.0);
  for (std::size_t n = 0; n < n_scans; ++n)
    for (int p = 0; p < P; ++p) {
      double coef = design.at(n, static_cast<std::size_t>(p));
      if (coef == 0.0) continue;
      const auto& map = beta[static_cast<std::size_t>(p)].data();
      double* scan = data.data() + n * n_vox;
      for (std::size_t v = 0; v < n_vox; ++v) scan[v] += coef * map[v];
    }
  double mean = 0.0;
  for (double v : data) mean += v;
  mean /= static_cast<double>(data.size());
  double var = 0.0;
  for (double v : data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(data.size());
  double signal_std = std::sqrt(var);
  if (!(signal_std > 0.0))
    raise(errc::invalid_argument, "phantom signal is constant; check beta_pattern");

  double sigma = std::isinf(spec.snr) ? 0.0 : signal_std / spec.snr;
  if (sigma > 0.0) {
    NormalSampler normal(spec.rng_seed);
    const double rho = spec.noise_ar1_rho;
    const double innov = std::sqrt(1.0 - rho * rho);
    for (std::size_t v = 0; v < n_vox; ++v) {
      double prev = sigma * normal.next();
      data[v] += prev;
      for (std::size_t n = 1; n < n_scans; ++n) {
        prev = rho * prev + sigma * innov * normal.next();
        data[n * n_vox + v] += prev;
      }
    }
  }

  Phantom out;
  out.data = Volume4D(g, n_scans, std::move(data));
  out.onsets = std::move(onsets);
  out.atlas = std::move(atlas);
  out.noise_sigma = sigma;
  out.beta_truth.maps = std::move(beta);
  out.beta_truth.residual_variance =
      Volume3D(g, std::vector<double>(n_vox, sigma * sigma));

  std::vector<double> ref(n_vox, 0.0);
  for (const auto& map : out.beta_truth.maps)
    for (std::size_t v = 0; v < n_vox; ++v) ref[v] += std::max(0.0, map[v]);
  out.reference = Volume3D(g, std::move(ref));

  out.meta.subject_id = spec.subject_id;
  out.meta.session_id = spec.session_id;
  out.meta.tr_seconds = spec.tr_seconds;
  if (spec.category_names.empty()) {
    for (int p = 0; p < P; ++p) out.meta.categories.push_back("cat" + std::to_string(p));
  } else {
    if (spec.category_names.size() != static_cast<std::size_t>(P))
      raise(errc::invalid_argument, "category_names length must equal n_categories");
    out.meta.categories = spec.category_names;
  }
  return out;
}

Volume3D corrupt_phantom(const Volume3D& vol, const AffineTransform& transform,
                         double bias_strength) {
  if (bias_strength < 0.0)
    raise(errc::invalid_argument, "bias strength must be >= 0");
  Volume3D moved = resample_trilinear(vol, transform, vol.geom());
  if (bias_strength == 0.0) return moved;

  const Geometry& g = vol.geom();
  std::vector<double> out(moved.data());
  auto axis = [](std::size_t i, std::size_t n) {
    return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
  };
  const double pi = std::numbers::pi;
  std::size_t idx = 0;
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x, ++idx) {
        // one to two lobes per axis, offset phases: smooth but not monotone
        double field = 1.0 + bias_strength *
                                 std::sin(2.0 * pi * axis(x, g.dims[0]) + 0.5) *
                                 std::sin(1.5 * pi * axis(y, g.dims[1]) + 0.9) *
                                 std::sin(pi * axis(z, g.dims[2]) + 0.3);
        out[idx] *= field;
      }
  return Volume3D(g, std::move(out));
}

nlohmann::json phantom_spec_to_json(const PhantomSpec& spec) {
  nlohmann::json cubes = nlohmann::json::array();
  for (const auto& c : spec.atlas_cubes)
    cubes.push_back({{"origin", c.origin}, {"size", c.size}, {"label", c.label}});
  nlohmann::json pattern = nlohmann::json::array();
  for (const auto& m : spec.beta_pattern) {
    nlohmann::json jm = nlohmann::json::object();
    for (const auto& [label, amp] : m) jm[std::to_string(label)] = amp;
    pattern.push_back(jm);
  }
  nlohmann::json j{
      {"dims", spec.geom.dims},
      {"spacing", spec.geom.spacing},
      {"n_categories", spec.n_categories},
      {"events_per_category", spec.events_per_category},
      {"tr_seconds", spec.tr_seconds},
      {"snr", std::isinf(spec.snr) ? nlohmann::json("inf") : nlohmann::json(spec.snr)},
      {"event_duration_scans", spec.event_duration_scans},
      {"event_gap_scans", spec.event_gap_scans},
      {"rest_scans", spec.rest_scans},
      {"atlas_cubes", cubes},
      {"beta_pattern", pattern},
      {"noise_ar1_rho", spec.noise_ar1_rho},
      {"rng_seed", spec.rng_seed},
      {"subject_id", spec.subject_id},
      {"session_id", spec.session_id},
      {"category_names", spec.category_names},
  };
  if (spec.corruption) {
    j["corruption"] = {
        {"bias_field_strength", spec.corruption->bias_field_strength},
        {"applied_transform", transform_to_json(spec.corruption->applied_transform)}};
  }
  return j;
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec spec;
  try {
    if (j.contains("dims")) spec.geom.dims = j.at("dims").get<std::array<std::size_t, 3>>();
    if (j.contains("spacing"))
      spec.geom.spacing = j.at("spacing").get<std::array<double, 3>>();
    if (j.contains("n_categories")) spec.n_categories = j.at("n_categories").get<int>();
    if (j.contains("events_per_category"))
      spec.events_per_category = j.at("events_per_category").get<std::vector<int>>();
    if (j.contains("tr_seconds")) spec.tr_seconds = j.at("tr_seconds").get<double>();
    if (j.contains("snr")) {
      const auto& s = j.at("snr");
      spec.snr = s.is_string() ? std::numeric_limits<double>::infinity()
                               : s.get<double>();
    }
    if (j.contains("event_duration_scans"))
      spec.event_duration_scans = j.at("event_duration_scans").get<int>();
    if (j.contains("event_gap_scans"))
      spec.event_gap_scans = j.at("event_gap_scans").get<int>();
    if (j.contains("rest_scans")) spec.rest_scans = j.at("rest_scans").get<int>();
    if (j.contains("atlas_cubes")) {
      spec.atlas_cubes.clear();
      for (const auto& c : j.at("atlas_cubes")) {
        AtlasCube cube;
        cube.origin = c.at("origin").get<std::array<std::size_t, 3>>();
        cube.size = c.at("size").get<std::array<std::size_t, 3>>();
        cube.label = c.at("label").get<std::uint32_t>();
        spec.atlas_cubes.push_back(cube);
      }
    }
    if (j.contains("beta_pattern")) {
      spec.beta_pattern.clear();
      for (const auto& m : j.at("beta_pattern")) {
        std::map<std::uint32_t, double> pattern;
        for (auto it = m.begin(); it != m.end(); ++it)
          pattern[static_cast<std::uint32_t>(std::stoul(it.key()))] =
              it.value().get<double>();
        spec.beta_pattern.push_back(std::move(pattern));
      }
    }
    if (j.contains("noise_ar1_rho")) spec.noise_ar1_rho = j.at("noise_ar1_rho").get<double>();
    if (j.contains("rng_seed")) spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    if (j.contains("subject_id")) spec.subject_id = j.at("subject_id").get<std::string>();
    if (j.contains("session_id")) spec.session_id = j.at("session_id").get<std::string>();
    if (j.contains("category_names"))
      spec.category_names = j.at("category_names").get<std::vector<std::string>>();
    if (j.contains("corruption") && !j.at("corruption").is_null()) {
      PhantomCorruption c;
      c.bias_field_strength = j.at("corruption").at("bias_field_strength").get<double>();
      c.applied_transform =
          transform_from_json(j.at("corruption").at("applied_transform"));
      spec.corruption = c;
    }
  } catch (const nlohmann::json::exception& e) {
    raise(errc::config_invalid, std::string("bad phantom spec: ") + e.what());
  }
  return spec;
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::config_invalid, "bad phantom spec " + path.string() + ": " + e.what());
  }
  return phantom_spec_from_json(j);
}

void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << phantom_spec_to_json(spec).dump(2) << '\n';
}

}  // namespace apa
