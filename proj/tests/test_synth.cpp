#include <doctest.h>

#include <cmath>

#include "apa/extract.hpp"
#include "apa/synth.hpp"
#include "helpers.hpp"

#include <json.hpp>

using namespace apa;

namespace {

PhantomSpec big_two_cube_spec() {
  PhantomSpec spec;
  spec.geom = {{32, 32, 16}, {1.0, 1.0, 1.0}};
  spec.n_categories = 2;
  spec.events_per_category = {4, 4};
  spec.atlas_cubes = {
      {{4, 6, 3}, {9, 8, 7}, 1},
      {{18, 16, 6}, {8, 9, 6}, 2},
  };
  spec.beta_pattern = {{{1, 3.0}, {2, -1.0}}, {{2, 2.0}, {1, -0.5}}};
  return spec;
}

}  // namespace

TEST_CASE("phantom generation is deterministic per seed") {
  PhantomSpec spec = default_phantom_spec();
  spec.snr = 1.5;
  spec.rng_seed = 12345;
  Phantom a = generate_phantom(spec);
  Phantom b = generate_phantom(spec);
  CHECK(a.data.data() == b.data.data());  // bitwise
  CHECK(a.onsets.events.size() == b.onsets.events.size());

  spec.rng_seed = 12346;
  Phantom c = generate_phantom(spec);
  CHECK(a.data.data() != c.data.data());
}

TEST_CASE("noise-free phantom lets GLS recover the planted betas") {
  PhantomSpec spec = default_phantom_spec();
  spec.snr = std::numeric_limits<double>::infinity();
  Phantom p = generate_phantom(spec);
  CHECK(p.noise_sigma == 0.0);

  DesignMatrix d = build_design_matrix(p.onsets, spec.hrf, p.data.n_scans(),
                                       spec.tr_seconds);
  BetaMaps est = estimate_gls(p.data, d, NoiseModel::identity());
  for (std::size_t c = 0; c < est.maps.size(); ++c)
    for (std::size_t v = 0; v < est.maps[c].data().size(); ++v) {
      double truth = p.beta_truth.maps[c][v];
      CHECK(std::abs(est.maps[c][v] - truth) / std::max(1.0, std::abs(truth)) < 1e-8);
    }

  SUBCASE("positive mask zeroes exactly the non-positive planted voxels") {
    PositiveBetaMaps pos = positive_mask(est);
    for (std::size_t c = 0; c < pos.maps.size(); ++c)
      for (std::size_t v = 0; v < pos.maps[c].data().size(); ++v) {
        if (p.beta_truth.maps[c][v] > 0.0)
          CHECK(pos.maps[c][v] > 0.0);
        else
          CHECK(pos.maps[c][v] == 0.0);
      }
  }
}

TEST_CASE("phantom onsets partition into the configured condition count") {
  PhantomSpec spec = default_phantom_spec();
  spec.n_categories = 3;
  spec.events_per_category = {5, 3, 4};
  spec.beta_pattern.resize(3);
  Phantom p = generate_phantom(spec);
  auto conditions = partition_conditions(p.data, p.onsets, spec.tr_seconds);
  CHECK(conditions.size() == 12);
  for (const auto& c : conditions)
    CHECK(c.n_scans() == static_cast<std::size_t>(spec.event_duration_scans));
}

TEST_CASE("phantom sessions round-trip through the volume format") {
  auto dir = testutil::temp_dir("synth_io");
  PhantomSpec spec = default_phantom_spec();
  spec.snr = 2.0;
  Phantom p = generate_phantom(spec);
  save_volume(p.data, dir / "data.apav");
  Volume4D back = load_volume4d(dir / "data.apav");
  CHECK(back.n_scans() == p.data.n_scans());

  save_volume(p.atlas, dir / "atlas.apav");
  AtlasVolume atlas = load_atlas(dir / "atlas.apav");
  CHECK(atlas.n_regions() == p.atlas.n_regions());

  SUBCASE("cubic regions index to their exact volumes") {
    for (const auto& cube : spec.atlas_cubes) {
      auto idx = region_index(atlas, cube.label);
      CHECK(idx.size() == cube.size[0] * cube.size[1] * cube.size[2]);
    }
  }
}

TEST_CASE("corrupt_phantom") {
  PhantomSpec spec = big_two_cube_spec();
  spec.snr = std::numeric_limits<double>::infinity();
  Phantom p = generate_phantom(spec);

  SUBCASE("identity transform and zero bias change nothing") {
    Volume3D out = corrupt_phantom(p.reference, AffineTransform::identity(), 0.0);
    CHECK(out.data() == p.reference.data());
  }
  SUBCASE("bias field is bounded by the requested strength") {
    Volume3D out = corrupt_phantom(p.reference, AffineTransform::identity(), 0.5);
    for (std::size_t v = 0; v < out.data().size(); ++v) {
      CHECK(out[v] >= 0.5 * p.reference[v] - 1e-12);
      CHECK(out[v] <= 1.5 * p.reference[v] + 1e-12);
    }
  }
  SUBCASE("planted translation is recovered from the corrupted image") {
    AffineTransform planted;
    planted.translation = {2.0, -1.0, 1.0};
    Volume3D moving = corrupt_phantom(p.reference, planted, 0.0);
    AffineTransform rec = optimize_transform(
        moving, p.reference, {MetricKind::normalized_mutual_information, 64});
    AffineTransform composite = rec.compose(planted);
    auto q = composite.apply({15.5, 15.5, 7.5});
    double disp = std::hypot(q[0] - 15.5, q[1] - 15.5, q[2] - 7.5);
    CHECK(disp <= 0.5);
  }
}

TEST_CASE("planted-beta recovery error shrinks as snr grows") {
  PhantomSpec spec = default_phantom_spec();
  auto mean_error_at = [&](double snr) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      PhantomSpec s = spec;
      s.snr = snr;
      s.rng_seed = seed;
      Phantom p = generate_phantom(s);
      DesignMatrix d =
          build_design_matrix(p.onsets, s.hrf, p.data.n_scans(), s.tr_seconds);
      BetaMaps est = estimate_gls(p.data, d, NoiseModel::identity());
      double err = 0.0;
      std::size_t n = 0;
      for (std::size_t c = 0; c < est.maps.size(); ++c)
        for (std::size_t v = 0; v < est.maps[c].data().size(); ++v) {
          err += std::abs(est.maps[c][v] - p.beta_truth.maps[c][v]);
          ++n;
        }
      total += err / static_cast<double>(n);
    }
    return total / 5.0;
  };
  double low = mean_error_at(0.5), mid = mean_error_at(2.0), high = mean_error_at(8.0);
  CHECK(low > mid);
  CHECK(mid > high);
}

TEST_CASE("AR(1) phantom noise cooperates with the matching GLS model") {
  PhantomSpec spec = default_phantom_spec();
  spec.snr = 1.0;
  spec.noise_ar1_rho = 0.5;
  spec.rng_seed = 9;
  Phantom p = generate_phantom(spec);
  DesignMatrix d =
      build_design_matrix(p.onsets, spec.hrf, p.data.n_scans(), spec.tr_seconds);
  BetaMaps plain = estimate_gls(p.data, d, NoiseModel::identity());
  BetaMaps matched = estimate_gls(p.data, d, NoiseModel::ar1(0.5));
  // both must stay near truth; the matched model is sanity-checked to not blow up
  for (std::size_t c = 0; c < matched.maps.size(); ++c)
    for (std::size_t v = 0; v < matched.maps[c].data().size(); ++v) {
      CHECK(std::isfinite(matched.maps[c][v]));
      CHECK(std::abs(matched.maps[c][v] - plain.maps[c][v]) < 5.0);
    }
}

TEST_CASE("phantom spec survives a JSON round-trip including infinite snr") {
  PhantomSpec spec = big_two_cube_spec();
  spec.snr = std::numeric_limits<double>::infinity();
  spec.rng_seed = 321;
  spec.corruption = PhantomCorruption{0.4, AffineTransform::identity()};
  auto dir = testutil::temp_dir("spec_json");
  save_phantom_spec(spec, dir / "spec.json");
  PhantomSpec back = load_phantom_spec(dir / "spec.json");
  CHECK(std::isinf(back.snr));
  CHECK(back.geom == spec.geom);
  CHECK(back.rng_seed == 321);
  CHECK(back.atlas_cubes.size() == 2);
  CHECK(back.beta_pattern == spec.beta_pattern);
  REQUIRE(back.corruption.has_value());
  CHECK(back.corruption->bias_field_strength == doctest::Approx(0.4));
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec = default_phantom_spec();
  SUBCASE("overlapping cubes are rejected") {
    spec.atlas_cubes = {{{2, 2, 2}, {4, 4, 4}, 1}, {{3, 3, 3}, {4, 4, 4}, 2}};
    CHECK_THROWS_AS(generate_phantom(spec), Error);
  }
  SUBCASE("out-of-bounds cubes are rejected") {
    spec.atlas_cubes = {{{14, 14, 6}, {4, 4, 4}, 1}};
    CHECK_THROWS_AS(generate_phantom(spec), Error);
  }
  SUBCASE("non-positive snr is rejected") {
    spec.snr = 0.0;
    CHECK_THROWS_AS(generate_phantom(spec), Error);
  }
  SUBCASE("beta pattern must cover every category") {
    spec.beta_pattern.pop_back();
    CHECK_THROWS_AS(generate_phantom(spec), Error);
  }
}
