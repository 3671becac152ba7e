#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/glm.hpp"
#include "apa/registration.hpp"
#include "apa/volume.hpp"

namespace apa {

struct AtlasCube {
  std::array<std::size_t, 3> origin{0, 0, 0};
  std::array<std::size_t, 3> size{1, 1, 1};
  std::uint32_t label = 1;
};

struct PhantomCorruption {
  double bias_field_strength = 0.0;
  AffineTransform applied_transform;
};

/// Everything needed to synthesize one session with known ground truth:
/// cubic atlas regions, per-category planted amplitudes, an event schedule,
/// and Gaussian noise scaled to the requested snr (signal std / noise std).
struct PhantomSpec {
  Geometry geom{{16, 16, 8}, {2.0, 2.0, 2.0}};
  int n_categories = 2;
  std::vector<int> events_per_category;  // Q_p; filled with 6 per category if empty
  double tr_seconds = 2.0;
  double snr = 2.0;  // may be infinite (noise-free)
  int event_duration_scans = 2;
  int event_gap_scans = 1;
  int rest_scans = 2;  // leading and trailing rest
  std::vector<AtlasCube> atlas_cubes;
  /// Per category: region label -> planted coefficient amplitude.
  std::vector<std::map<std::uint32_t, double>> beta_pattern;
  double noise_ar1_rho = 0.0;  // temporal noise correlation
  std::uint64_t rng_seed = 0;
  std::optional<PhantomCorruption> corruption;
  HrfParams hrf;
  std::string subject_id = "sub-01";
  std::string session_id = "ses-01";
  std::vector<std::string> category_names;  // defaults to cat0..catP-1
};

struct Phantom {
  Volume4D data;
  OnsetTable onsets;
  AtlasVolume atlas;
  BetaMaps beta_truth;      // planted maps; residual_variance = noise variance
  Volume3D reference;       // positive planted signal, for registration
  SessionMeta meta;
  double noise_sigma = 0.0;
};

/// Deterministic per seed: data = design * planted betas + AR(1)/iid noise.
Phantom generate_phantom(const PhantomSpec& spec);

/// Resamples through the transform, then multiplies by a smooth low-frequency
/// bias field of the given strength (field values span [1, 1 + strength]).
Volume3D corrupt_phantom(const Volume3D& vol, const AffineTransform& transform,
                         double bias_strength);

/// A ready-to-run four-cube, two-category spec; callers override fields.
PhantomSpec default_phantom_spec();

nlohmann::json phantom_spec_to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);
PhantomSpec load_phantom_spec(const std::filesystem::path& path);
void save_phantom_spec(const PhantomSpec& spec, const std::filesystem::path& path);

}  // namespace apa
