#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "apa/extract.hpp"
#include "helpers.hpp"

using namespace apa;

namespace {

Volume4D random_session(const Geometry& g, std::size_t n_scans, std::uint64_t seed) {
  return Volume4D(g, n_scans, testutil::random_values(n_scans * g.n_voxels(), seed, -2.0, 2.0));
}

OnsetTable cats_and_houses() {
  // 6 events of category 0 and 5 of category 1, one condition per event
  std::vector<OnsetEvent> events;
  int cond0 = 0, cond1 = 0;
  double t = 0.0;
  for (int i = 0; i < 11; ++i) {
    OnsetEvent e;
    e.onset_seconds = t;
    e.duration_seconds = 2.0;
    if (i % 2 == 0 && cond0 < 6) {
      e.category_index = 0;
      e.condition_index = cond0++;
    } else {
      e.category_index = 1;
      e.condition_index = cond1++;
    }
    events.push_back(e);
    t += 3.0;
  }
  return OnsetTable::from_events(std::move(events), 2);
}

}  // namespace

TEST_CASE("partition: 6 + 5 events make 11 conditions over 2 categories") {
  Geometry g{{2, 2, 1}, {1, 1, 1}};
  OnsetTable onsets = cats_and_houses();
  Volume4D data = random_session(g, 40, 1);
  auto conditions = partition_conditions(data, onsets, 1.0);
  CHECK(conditions.size() == 11);
  int cats = 0;
  for (const auto& c : conditions) cats = std::max(cats, c.category_index() + 1);
  CHECK(cats == 2);
  CHECK(std::is_sorted(conditions.begin(), conditions.end(),
                       [](const ConditionImage& a, const ConditionImage& b) {
                         return std::pair(a.category_index(), a.condition_index()) <
                                std::pair(b.category_index(), b.condition_index());
                       }));
}

TEST_CASE("partition: one event covering every scan") {
  Geometry g{{2, 1, 1}, {1, 1, 1}};
  auto onsets = OnsetTable::from_events({{0.0, 8.0, 0, 0}}, 1);
  Volume4D data = random_session(g, 8, 2);
  auto conditions = partition_conditions(data, onsets, 1.0);
  REQUIRE(conditions.size() == 1);
  CHECK(conditions[0].n_scans() == 8);
  CHECK(conditions[0].data() == data.data());
}

TEST_CASE("partition: scan counts follow ceil(duration/tr) for aligned events") {
  Geometry g{{2, 1, 1}, {1, 1, 1}};
  const double tr = 2.0;
  std::vector<OnsetEvent> events{
      {0.0, 3.0, 0, 0},   // scans at 0,2 -> ceil(3/2)=2
      {8.0, 4.0, 0, 1},   // scans at 8,10 -> 2
      {16.0, 5.0, 1, 0},  // scans at 16,18,20 -> 3
  };
  auto onsets = OnsetTable::from_events(events, 2);
  Volume4D data = random_session(g, 16, 3);
  auto conditions = partition_conditions(data, onsets, tr);
  REQUIRE(conditions.size() == 3);
  for (const auto& c : conditions) {
    double dur = 0.0;
    for (const auto& e : onsets.events)
      if (e.category_index == c.category_index() &&
          e.condition_index == c.condition_index())
        dur = e.duration_seconds;
    CHECK(c.n_scans() == static_cast<std::size_t>(std::ceil(dur / tr)));
  }
}

TEST_CASE("partition errors: empty events and overlaps") {
  Geometry g{{2, 1, 1}, {1, 1, 1}};
  Volume4D data = random_session(g, 10, 4);
  SUBCASE("event between scan times covers nothing") {
    auto onsets = OnsetTable::from_events({{0.0, 1.0, 0, 0}, {2.5, 0.2, 0, 1}}, 1);
    CHECK_THROWS_AS(partition_conditions(data, onsets, 1.0), Error);
  }
  SUBCASE("overlapping events fight over a scan") {
    auto onsets = OnsetTable::from_events({{0.0, 3.0, 0, 0}, {2.0, 2.0, 0, 1}}, 1);
    CHECK_THROWS_AS(partition_conditions(data, onsets, 1.0), Error);
  }
  SUBCASE("duplicate (category, condition) keys") {
    auto onsets = OnsetTable::from_events({{0.0, 1.0, 0, 0}, {4.0, 1.0, 0, 0}}, 1);
    CHECK_THROWS_AS(partition_conditions(data, onsets, 1.0), Error);
  }
}

TEST_CASE("partition honors the whole-scan lag shift") {
  Geometry g{{2, 1, 1}, {1, 1, 1}};
  Volume4D data = random_session(g, 12, 5);
  auto onsets = OnsetTable::from_events({{2.0, 2.0, 0, 0}}, 1);
  auto plain = partition_conditions(data, onsets, 1.0, 0);
  auto lagged = partition_conditions(data, onsets, 1.0, 2);
  REQUIRE(plain.size() == 1);
  REQUIRE(lagged.size() == 1);
  // lag 2 shifts the assigned scans from {2,3} to {4,5}
  CHECK(lagged[0].data() ==
        std::vector<double>(data.data().begin() + 4 * 2, data.data().begin() + 6 * 2));
  CHECK(plain[0].data() ==
        std::vector<double>(data.data().begin() + 2 * 2, data.data().begin() + 4 * 2));
}

TEST_CASE("sum_condition") {
  Geometry g{{2, 2, 1}, {1, 1, 1}};
  SUBCASE("single scan is the identity") {
    ConditionImage c(g, 0, 0, 1, {1.0, 2.0, 3.0, 4.0});
    CHECK(sum_condition(c).image.data() == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  }
  SUBCASE("three constant scans of 2 sum to 6") {
    ConditionImage c(g, 0, 0, 3, std::vector<double>(12, 2.0));
    ConditionSum s = sum_condition(c);
    for (double v : s.image.data()) CHECK(v == doctest::Approx(6.0));
  }
  SUBCASE("random block matches the naive two-pass oracle") {
    auto vals = testutil::random_values(4 * g.n_voxels(), 6, -5.0, 5.0);
    ConditionImage c(g, 1, 2, 4, vals);
    ConditionSum s = sum_condition(c);
    CHECK(s.category_index == 1);
    CHECK(s.condition_index == 2);
    for (std::size_t v = 0; v < g.n_voxels(); ++v) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 4; ++k) expect += vals[k * g.n_voxels() + v];
      CHECK(std::abs(s.image[v] - expect) < 1e-12);
    }
  }
  SUBCASE("permuting scans leaves the sum unchanged") {
    auto vals = testutil::random_values(3 * g.n_voxels(), 7);
    ConditionImage c(g, 0, 0, 3, vals);
    std::vector<double> rotated(vals.begin() + g.n_voxels(), vals.end());
    rotated.insert(rotated.end(), vals.begin(), vals.begin() + g.n_voxels());
    ConditionImage c2(g, 0, 0, 3, rotated);
    ConditionSum a = sum_condition(c), b = sum_condition(c2);
    for (std::size_t v = 0; v < g.n_voxels(); ++v)
      CHECK(a.image[v] == doctest::Approx(b.image[v]).epsilon(1e-12));
  }
}

TEST_CASE("apply_beta_mask") {
  Geometry g{{2, 2, 1}, {1, 1, 1}};
  ConditionSum sum{0, 0, Volume3D(g, {1.0, -2.0, 3.0, -4.0})};

  SUBCASE("all-ones mask is the identity") {
    PositiveBetaMaps pos{{Volume3D(g, std::vector<double>(4, 1.0))}};
    CHECK(apply_beta_mask(sum, pos).image.data() == sum.image.data());
  }
  SUBCASE("all-zeros mask zeroes the image") {
    PositiveBetaMaps pos{{Volume3D::zeros(g)}};
    MaskedCondition masked = apply_beta_mask(sum, pos);
    for (double v : masked.image.data()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("random pair matches the elementwise product exactly") {
    auto mvals = testutil::random_values(4, 9, 0.0, 2.0);
    PositiveBetaMaps pos{{Volume3D(g, mvals)}};
    MaskedCondition masked = apply_beta_mask(sum, pos);
    for (std::size_t v = 0; v < 4; ++v)
      CHECK(masked.image[v] == mvals[v] * sum.image[v]);
  }
  SUBCASE("geometry mismatch raises") {
    PositiveBetaMaps pos{{Volume3D::zeros({{3, 1, 1}, {1, 1, 1}})}};
    CHECK_THROWS_AS(apply_beta_mask(sum, pos), Error);
  }
  SUBCASE("category without a map raises") {
    PositiveBetaMaps pos{{Volume3D::zeros(g)}};
    ConditionSum other{3, 0, Volume3D::zeros(g)};
    CHECK_THROWS_AS(apply_beta_mask(other, pos), Error);
  }
}

TEST_CASE("pool_atlas_features") {
  SUBCASE("constant image gives the constant in every nonempty region") {
    Geometry g{{4, 2, 1}, {1, 1, 1}};
    AtlasVolume atlas(g, {1, 1, 2, 2, 0, 0, 3, 3});
    Volume3D img(g, std::vector<double>(8, 2.5));
    FeatureVector fv = pool_atlas_features(img, atlas);
    REQUIRE(fv.values.size() == 3);
    for (double v : fv.values) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("vector length follows the atlas region count (L = 1105)") {
    Geometry g{{16, 16, 8}, {1, 1, 1}};
    std::vector<std::uint32_t> labels(g.n_voxels());
    for (std::size_t i = 0; i < labels.size(); ++i)
      labels[i] = static_cast<std::uint32_t>(i % 1105) + 1;
    AtlasVolume atlas(g, std::move(labels));
    REQUIRE(atlas.n_regions() == 1105);
    FeatureVector fv = pool_atlas_features(Volume3D::zeros(g), atlas);
    CHECK(fv.values.size() == 1105);
  }
  SUBCASE("two cubes with planted means") {
    Geometry g{{6, 2, 2}, {1, 1, 1}};
    std::vector<std::uint32_t> labels(g.n_voxels(), 0);
    std::vector<double> img(g.n_voxels(), 99.0);
    for (std::size_t z = 0; z < 2; ++z)
      for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x = 0; x < 2; ++x) {
          labels[voxel_offset(g, x, y, z)] = 1;
          img[voxel_offset(g, x, y, z)] = 3.0;
        }
        for (std::size_t x = 3; x < 5; ++x) {
          labels[voxel_offset(g, x, y, z)] = 2;
          img[voxel_offset(g, x, y, z)] = -1.0;
        }
      }
    FeatureVector fv = pool_atlas_features(Volume3D(g, img), AtlasVolume(g, labels));
    REQUIRE(fv.values.size() == 2);
    CHECK(std::abs(fv.values[0] - 3.0) < 1e-12);
    CHECK(std::abs(fv.values[1] + 1.0) < 1e-12);
  }
  SUBCASE("empty region pools to 0 with a warning") {
    Geometry g{{2, 1, 1}, {1, 1, 1}};
    AtlasVolume atlas(g, {0, 2}, 2);  // region 1 empty
    std::vector<std::string> warnings;
    FeatureVector fv = pool_atlas_features(Volume3D(g, {5.0, 7.0}), atlas, &warnings);
    CHECK(fv.values[0] == 0.0);
    CHECK(fv.values[1] == doctest::Approx(7.0));
    CHECK(warnings.size() == 1);
  }
  SUBCASE("geometry mismatch raises") {
    AtlasVolume atlas({{2, 1, 1}, {1, 1, 1}}, {1, 1});
    CHECK_THROWS_AS(
        pool_atlas_features(Volume3D::zeros({{3, 1, 1}, {1, 1, 1}}), atlas), Error);
  }
}

namespace {

SessionFeatures session_with_rows(const std::string& subject, int conditions_per_cat) {
  SessionFeatures sf;
  sf.meta = {subject, "ses-01", 2.0, {"cats", "houses"}};
  sf.atlas_id = "atlas.apav";
  for (int p = 0; p < 2; ++p)
    for (int q = 0; q < conditions_per_cat; ++q) {
      FeatureVector fv;
      fv.category_index = p;
      fv.condition_index = q;
      fv.values = {1.0 * p, 2.0 * q, 3.0};
      sf.rows.push_back(fv);
    }
  return sf;
}

}  // namespace

TEST_CASE("build_feature_table") {
  SUBCASE("one session with 11 rows") {
    SessionFeatures sf;
    sf.meta = {"sub-01", "ses-01", 2.0, {"cats", "houses"}};
    sf.atlas_id = "atlas.apav";
    for (int i = 0; i < 11; ++i) {
      FeatureVector fv;
      fv.category_index = i < 6 ? 0 : 1;
      fv.condition_index = i < 6 ? i : i - 6;
      fv.values = {0.0, 1.0};
      sf.rows.push_back(fv);
    }
    FeatureTable t = build_feature_table({sf});
    CHECK(t.rows.size() == 11);
    CHECK(t.rows.front().category_name == "cats");
    CHECK(t.rows.back().category_name == "houses");
  }
  SUBCASE("empty session list is an error, not an empty table") {
    CHECK_THROWS_AS(build_feature_table({}), Error);
  }
  SUBCASE("two homogeneous sessions concatenate") {
    FeatureTable t = build_feature_table(
        {session_with_rows("sub-01", 3), session_with_rows("sub-02", 4)});
    CHECK(t.rows.size() == 2 * 3 + 2 * 4);
  }
  SUBCASE("mixed atlas ids are rejected") {
    auto a = session_with_rows("sub-01", 2);
    auto b = session_with_rows("sub-02", 2);
    b.atlas_id = "other.apav";
    CHECK_THROWS_AS(build_feature_table({a, b}), Error);
  }
}

TEST_CASE("feature table CSV round-trip keeps exact floats") {
  auto dir = testutil::temp_dir("ftab");
  auto sf = session_with_rows("sub-01", 2);
  // awkward values that need shortest round-trip formatting
  sf.rows[0].values = {0.1, 1.0 / 3.0, -2.5e-17};
  FeatureTable t = build_feature_table({sf});
  save_feature_table_csv(t, dir / "features.csv");
  FeatureTable back = load_feature_table_csv(dir / "features.csv");
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(back.rows[i].values == t.rows[i].values);
    CHECK(back.rows[i].category_name == t.rows[i].category_name);
    CHECK(back.rows[i].category_index == t.rows[i].category_index);
    CHECK(back.rows[i].subject_id == t.rows[i].subject_id);
  }
}

TEST_CASE("linearity: scaling the session scales every feature") {
  Geometry g{{4, 2, 2}, {1, 1, 1}};
  std::vector<std::uint32_t> labels(g.n_voxels(), 0);
  for (std::size_t i = 0; i < 8; ++i) labels[i] = 1 + static_cast<std::uint32_t>(i % 2);
  AtlasVolume atlas(g, labels);

  auto onsets = OnsetTable::from_events({{0.0, 2.0, 0, 0}, {4.0, 2.0, 1, 0}}, 2);
  auto raw = testutil::random_values(8 * g.n_voxels(), 11, -1.0, 3.0);
  Volume4D data(g, 8, raw);
  std::vector<double> scaled_vals(raw);
  const double s = -2.5;
  for (double& v : scaled_vals) v *= s;
  Volume4D scaled(g, 8, scaled_vals);

  PositiveBetaMaps pos{{Volume3D(g, testutil::random_values(g.n_voxels(), 12, 0.0, 1.0)),
                        Volume3D(g, testutil::random_values(g.n_voxels(), 13, 0.0, 1.0))}};

  auto features_of = [&](const Volume4D& d) {
    std::vector<double> all;
    for (const auto& cond : partition_conditions(d, onsets, 1.0)) {
      auto fv = pool_atlas_features(apply_beta_mask(sum_condition(cond), pos).image, atlas);
      all.insert(all.end(), fv.values.begin(), fv.values.end());
    }
    return all;
  };
  auto base = features_of(data);
  auto scaled_features = features_of(scaled);
  REQUIRE(base.size() == scaled_features.size());
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(scaled_features[i] == doctest::Approx(s * base[i]).epsilon(1e-12));
}

TEST_CASE("mask support: zero positive map over a region zeroes its feature") {
  Geometry g{{4, 1, 1}, {1, 1, 1}};
  AtlasVolume atlas(g, {1, 1, 2, 2});
  PositiveBetaMaps pos{{Volume3D(g, {0.0, 0.0, 1.0, 2.0})}};  // region 1 masked out
  ConditionSum sum{0, 0, Volume3D(g, {5.0, 6.0, 7.0, 8.0})};
  FeatureVector fv = pool_atlas_features(apply_beta_mask(sum, pos).image, atlas);
  CHECK(fv.values[0] == 0.0);
  CHECK(fv.values[1] != 0.0);
}
