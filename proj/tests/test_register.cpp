#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "apa/registration.hpp"
#include "apa/synth.hpp"
#include "helpers.hpp"

using namespace apa;

namespace {

// blobby asymmetric anatomy; smooth enough for descent, structured enough
// to pin rotations
Volume3D make_anatomy(const Geometry& g) {
  struct Blob {
    double cx, cy, cz, radius, amp;
  };
  std::vector<Blob> blobs{
      {0.30, 0.35, 0.40, 0.22, 4.0},
      {0.65, 0.55, 0.50, 0.16, 2.5},
      {0.50, 0.75, 0.60, 0.12, 1.5},
  };
  std::vector<double> data(g.n_voxels(), 0.0);
  std::size_t idx = 0;
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x, ++idx) {
        double fx = static_cast<double>(x) / g.dims[0];
        double fy = static_cast<double>(y) / g.dims[1];
        double fz = static_cast<double>(z) / g.dims[2];
        double v = 0.2 + 0.3 * fx;  // mild gradient keeps the image non-constant
        for (const auto& b : blobs) {
          double d2 = (fx - b.cx) * (fx - b.cx) + (fy - b.cy) * (fy - b.cy) +
                      (fz - b.cz) * (fz - b.cz);
          v += b.amp * std::exp(-d2 / (b.radius * b.radius));
        }
        data[idx] = v;
      }
  return Volume3D(g, std::move(data));
}

// translation error at the volume center (voxels) and residual rotation
// angle (degrees) of the composite recovered-after-planted map; scale is
// factored out of the rotation part by column normalization + Gram-Schmidt
std::pair<double, double> recovery_error(const AffineTransform& recovered,
                                         const AffineTransform& planted,
                                         const Geometry& g) {
  AffineTransform c = recovered.compose(planted);
  std::array<double, 3> center{(g.dims[0] - 1) * g.spacing[0] / 2.0,
                               (g.dims[1] - 1) * g.spacing[1] / 2.0,
                               (g.dims[2] - 1) * g.spacing[2] / 2.0};
  auto q = c.apply(center);
  double disp = 0.0;
  for (int i = 0; i < 3; ++i) {
    double d = (q[i] - center[i]) / g.spacing[i];
    disp += d * d;
  }
  disp = std::sqrt(disp);

  double col[3][3];
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) col[j][i] = c.matrix[i * 3 + j];
  auto normalize = [](double* v) {
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (int i = 0; i < 3; ++i) v[i] /= n;
  };
  auto dot = [](const double* a, const double* b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  };
  normalize(col[0]);
  for (int i = 0; i < 3; ++i) col[1][i] -= dot(col[1], col[0]) * col[0][i];
  normalize(col[1]);
  for (int i = 0; i < 3; ++i)
    col[2][i] -= dot(col[2], col[0]) * col[0][i] + dot(col[2], col[1]) * col[1][i];
  normalize(col[2]);
  double trace = col[0][0] + col[1][1] + col[2][2];
  double cos_angle = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  double angle_deg = std::acos(cos_angle) * 180.0 / std::numbers::pi;
  return {disp, angle_deg};
}

}  // namespace

TEST_CASE("affine transform algebra") {
  std::array<double, 3> center{8.0, 8.0, 4.0};
  AffineTransform t =
      AffineTransform::from_params({1.0, -2.0, 0.5, 10.0, -5.0, 3.0, 1.1, 0.9, 1.0}, center);
  AffineTransform inv = t.inverse();
  for (const auto& p : {std::array<double, 3>{0, 0, 0}, {3.5, 7.25, 1.0}, {-2.0, 5.0, 9.0}}) {
    auto q = inv.apply(t.apply(p));
    for (int i = 0; i < 3; ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-9));
  }
  AffineTransform ident = t.compose(inv);
  CHECK(ident.matrix[0] == doctest::Approx(1.0));
  CHECK(ident.translation[0] == doctest::Approx(0.0).epsilon(1e-9));

  AffineTransform singular;
  singular.matrix = {1, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK_THROWS_AS(singular.inverse(), Error);
}

TEST_CASE("transform JSON round-trip") {
  auto dir = testutil::temp_dir("tf");
  AffineTransform t =
      AffineTransform::from_params({0.25, -1.0, 2.0, 3.0, 0.0, -7.0, 1.0, 1.05, 0.95},
                                   {4.0, 4.0, 4.0});
  save_transform(t, dir / "t.json");
  AffineTransform back = load_transform(dir / "t.json");
  for (int i = 0; i < 9; ++i) CHECK(back.matrix[i] == t.matrix[i]);
  for (int i = 0; i < 3; ++i) CHECK(back.translation[i] == t.translation[i]);
}

TEST_CASE("resample with the identity reproduces grid values exactly") {
  Geometry g{{7, 6, 5}, {1.5, 1.0, 2.0}};
  Volume3D v(g, testutil::random_values(g.n_voxels(), 20));
  Volume3D out = resample_trilinear(v, AffineTransform::identity(), g);
  CHECK(out.data() == v.data());
}

TEST_CASE("resample with an integer-voxel translation shifts the lattice") {
  Geometry g{{6, 5, 4}, {2.0, 2.0, 2.0}};
  Volume3D v(g, testutil::random_values(g.n_voxels(), 21));
  AffineTransform shift;
  shift.translation = {2.0 * g.spacing[0], -1.0 * g.spacing[1], 1.0 * g.spacing[2]};
  Volume3D out = resample_trilinear(v, shift, g);
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x) {
        bool inside = x >= 2 && y + 1 < g.dims[1] && z >= 1;
        double expect = inside ? v.at(x - 2, y + 1, z - 1) : 0.0;
        CHECK(out.at(x, y, z) == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("half-voxel shift of a linear ramp matches the analytic values") {
  Geometry g{{8, 3, 3}, {1.0, 1.0, 1.0}};
  std::vector<double> ramp(g.n_voxels());
  for (std::size_t z = 0; z < 3; ++z)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        ramp[voxel_offset(g, x, y, z)] = static_cast<double>(x);
  Volume3D v(g, ramp);
  AffineTransform shift;
  shift.translation = {0.5, 0.0, 0.0};
  Volume3D out = resample_trilinear(v, shift, g);
  for (std::size_t x = 1; x < 8; ++x)
    CHECK(std::abs(out.at(x, 1, 1) - (static_cast<double>(x) - 0.5)) < 1e-10);
}

TEST_CASE("joint histogram counts and marginals are consistent") {
  Geometry g{{8, 8, 4}, {1, 1, 1}};
  Volume3D a(g, testutil::random_values(g.n_voxels(), 30));
  Volume3D b(g, testutil::random_values(g.n_voxels(), 31));
  JointHistogram h(a, b, 16);
  CHECK(h.total() == doctest::Approx(static_cast<double>(g.n_voxels())));
  for (int i = 0; i < 16; ++i) {
    double row = 0.0, col = 0.0;
    for (int j = 0; j < 16; ++j) {
      row += h.joint(i, j);
      col += h.joint(j, i);
    }
    CHECK(row == doctest::Approx(h.marginal_a(i)));
    CHECK(col == doctest::Approx(h.marginal_b(i)));
  }
}

TEST_CASE("masked joint histogram counts only the overlap") {
  Geometry g{{6, 4, 2}, {1, 1, 1}};
  Volume3D a(g, testutil::random_values(g.n_voxels(), 40));
  Volume3D b(g, testutil::random_values(g.n_voxels(), 41));
  std::vector<std::uint8_t> valid(g.n_voxels(), 0);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < valid.size(); i += 3) {
    valid[i] = 1;
    ++kept;
  }
  JointHistogram h(a, b, 8, valid);
  CHECK(h.total() == doctest::Approx(static_cast<double>(kept)));
  double joint_sum = 0.0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) joint_sum += h.joint(i, j);
  CHECK(joint_sum == doctest::Approx(static_cast<double>(kept)));

  auto [res, mask] = resample_trilinear_masked(a, AffineTransform::identity(), g);
  CHECK(res.data() == a.data());
  for (std::uint8_t f : mask) CHECK(f == 1);
}

TEST_CASE("metric identities") {
  Geometry g{{8, 8, 4}, {1, 1, 1}};
  Volume3D a(g, testutil::random_values(g.n_voxels(), 32));

  SUBCASE("NMI of an image with itself is 2") {
    double nmi = compute_similarity(a, a, {MetricKind::normalized_mutual_information, 64});
    CHECK(std::abs(nmi - 2.0) < 1e-10);
  }
  SUBCASE("MI of an image with itself equals its entropy") {
    JointHistogram h(a, a, 32);
    double mi = compute_similarity(a, a, {MetricKind::mutual_information, 32});
    CHECK(std::abs(mi - h.entropy_a()) < 1e-10);
  }
  SUBCASE("MI against a constant image is 0") {
    Volume3D c(g, std::vector<double>(g.n_voxels(), 1.0));
    double mi = compute_similarity(a, c, {MetricKind::mutual_information, 32});
    CHECK(std::abs(mi) < 1e-12);
  }
  SUBCASE("constant pair: joint entropy 0, NMI pinned at 2") {
    Volume3D c(g, std::vector<double>(g.n_voxels(), 1.0));
    CHECK(compute_similarity(c, c, {MetricKind::joint_entropy, 32}) ==
          doctest::Approx(0.0));
    CHECK(compute_similarity(c, c, {MetricKind::normalized_mutual_information, 32}) ==
          doctest::Approx(2.0));
  }
}

TEST_CASE("MI matches a brute-force histogram/entropy oracle") {
  Geometry g{{8, 8, 8}, {1, 1, 1}};
  Volume3D a(g, testutil::random_values(g.n_voxels(), 33, 0.0, 5.0));
  Volume3D b(g, testutil::random_values(g.n_voxels(), 34, -3.0, 3.0));
  const int bins = 16;

  // independent re-derivation with explicit maps and log sums
  auto bin_of = [&](const Volume3D& img, double v) {
    double mn = *std::min_element(img.data().begin(), img.data().end());
    double mx = *std::max_element(img.data().begin(), img.data().end());
    int k = static_cast<int>((v - mn) / (mx - mn) * bins);
    return std::min(k, bins - 1);
  };
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ma, mb;
  for (std::size_t i = 0; i < g.n_voxels(); ++i) {
    int ia = bin_of(a, a[i]), ib = bin_of(b, b[i]);
    joint[{ia, ib}] += 1.0;
    ma[ia] += 1.0;
    mb[ib] += 1.0;
  }
  double n = static_cast<double>(g.n_voxels());
  auto ent = [&](auto& counts) {
    double h = 0.0;
    for (auto& [k, c] : counts) h -= (c / n) * std::log(c / n);
    return h;
  };
  double expect = ent(ma) + ent(mb) - ent(joint);

  double got = compute_similarity(a, b, {MetricKind::mutual_information, bins});
  CHECK(std::abs(got - expect) < 1e-10);
}

TEST_CASE("MI and JE are symmetric; MI survives bijective relabeling") {
  Geometry g{{8, 8, 4}, {1, 1, 1}};
  Volume3D a(g, testutil::random_values(g.n_voxels(), 35));
  Volume3D b(g, testutil::random_values(g.n_voxels(), 36));
  for (int bins : {8, 64}) {
    double mi_ab = compute_similarity(a, b, {MetricKind::mutual_information, bins});
    double mi_ba = compute_similarity(b, a, {MetricKind::mutual_information, bins});
    CHECK(std::abs(mi_ab - mi_ba) < 1e-12);
    double je_ab = compute_similarity(a, b, {MetricKind::joint_entropy, bins});
    double je_ba = compute_similarity(b, a, {MetricKind::joint_entropy, bins});
    CHECK(std::abs(je_ab - je_ba) < 1e-12);

    // negation reverses the bin order of one image: a bijection on bins
    std::vector<double> neg(a.data());
    for (double& v : neg) v = -v;
    double mi_neg = compute_similarity(Volume3D(g, neg), b,
                                       {MetricKind::mutual_information, bins});
    CHECK(std::abs(mi_ab - mi_neg) < 1e-12);
  }
}

TEST_CASE("woods and correlation ratio behave on aligned vs scrambled pairs") {
  Geometry g{{8, 8, 4}, {1, 1, 1}};
  Volume3D a = make_anatomy(g);
  // b = monotone function of a: perfectly predictable from a's bins
  std::vector<double> bv(a.data());
  for (double& v : bv) v = 2.0 * v + 1.0;
  Volume3D b(g, bv);
  SimilarityMetric cr{MetricKind::correlation_ratio, 32};
  SimilarityMetric w{MetricKind::woods, 32};

  double cr_good = compute_similarity(a, b, cr);
  double w_good = compute_similarity(a, b, w);

  std::vector<double> scrambled(a.data());
  std::mt19937_64 rng(9);
  for (std::size_t i = scrambled.size(); i > 1; --i)
    std::swap(scrambled[i - 1], scrambled[rng() % i]);
  Volume3D s(g, scrambled);
  double cr_bad = compute_similarity(s, b, cr);
  double w_bad = compute_similarity(s, b, w);

  CHECK(cr_good > cr_bad);   // higher ratio when aligned
  CHECK(w_good < w_bad);     // lower dispersion when aligned
  CHECK(cr_good == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("self-registration stays at the identity") {
  Geometry g{{20, 20, 10}, {1, 1, 1}};
  Volume3D anatomy = make_anatomy(g);
  AffineTransform t = optimize_transform(anatomy, anatomy,
                                         {MetricKind::normalized_mutual_information, 64});
  auto [disp, angle] = recovery_error(t, AffineTransform::identity(), g);
  CHECK(disp <= 0.1);
  CHECK(angle <= 0.5);
}

TEST_CASE("optimizer recovers a planted translation within half a voxel") {
  Geometry g{{48, 48, 24}, {1, 1, 1}};
  Volume3D anatomy = make_anatomy(g);
  AffineTransform planted;
  planted.translation = {3.0, -2.0, 1.0};
  Volume3D moving = resample_trilinear(anatomy, planted, g);

  AffineTransform recovered = optimize_transform(
      moving, anatomy, {MetricKind::normalized_mutual_information, 64});
  auto [disp, angle] = recovery_error(recovered, planted, g);
  CHECK(disp <= 0.5);
}

TEST_CASE("optimizer recovers a 5-degree z-rotation within 1 degree") {
  Geometry g{{48, 48, 24}, {1, 1, 1}};
  Volume3D anatomy = make_anatomy(g);
  std::array<double, 3> center{(g.dims[0] - 1) / 2.0, (g.dims[1] - 1) / 2.0,
                               (g.dims[2] - 1) / 2.0};
  AffineTransform planted =
      AffineTransform::from_params({0, 0, 0, 0, 0, 5.0, 1, 1, 1}, center);
  Volume3D moving = resample_trilinear(anatomy, planted, g);

  AffineTransform recovered = optimize_transform(
      moving, anatomy, {MetricKind::normalized_mutual_information, 64});
  auto [disp, angle] = recovery_error(recovered, planted, g);
  CHECK(angle <= 1.0);
}

TEST_CASE("optimizer rejects constant inputs") {
  Geometry g{{8, 8, 4}, {1, 1, 1}};
  Volume3D flat(g, std::vector<double>(g.n_voxels(), 2.0));
  Volume3D anatomy = make_anatomy(g);
  CHECK_THROWS_AS(optimize_transform(flat, anatomy, {}), Error);
  CHECK_THROWS_AS(optimize_transform(anatomy, flat, {}), Error);
}

TEST_CASE("optimized score never falls below the identity score") {
  Geometry g{{16, 16, 8}, {1, 1, 1}};
  Volume3D anatomy = make_anatomy(g);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> trans(-3.0, 3.0);
  for (int trial = 0; trial < 3; ++trial) {
    AffineTransform planted;
    planted.translation = {trans(rng), trans(rng), trans(rng)};
    Volume3D moving = corrupt_phantom(anatomy, planted, 0.3);
    for (MetricKind kind :
         {MetricKind::woods, MetricKind::correlation_ratio, MetricKind::joint_entropy,
          MetricKind::mutual_information, MetricKind::normalized_mutual_information}) {
      SimilarityMetric metric{kind, 32};
      SearchConfig fast;
      fast.max_sweeps = 12;
      AffineTransform t = optimize_transform(moving, anatomy, metric, fast);
      double at_t = oriented_score(
          kind, compute_similarity(resample_trilinear(moving, t, g), anatomy, metric));
      double at_id = oriented_score(kind, compute_similarity(moving, anatomy, metric));
      CHECK(at_t >= at_id - 1e-12);
    }
  }
}

TEST_CASE("registration_error counts nonzero voxels on atlas background") {
  Geometry g{{4, 2, 1}, {1, 1, 1}};
  AtlasVolume atlas(g, {1, 1, 0, 0, 2, 2, 0, 0});
  SUBCASE("support entirely inside labeled regions") {
    Volume3D img(g, {1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0});
    CHECK(registration_error(img, atlas) == doctest::Approx(0.0));
  }
  SUBCASE("support entirely on background") {
    Volume3D img(g, {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
    CHECK(registration_error(img, atlas) == doctest::Approx(1.0));
  }
  SUBCASE("half in, half out") {
    Volume3D img(g, {1.0, 0.0, 1.0, 0.0, 5.0, 0.0, 5.0, 0.0});
    CHECK(registration_error(img, atlas) == doctest::Approx(0.5));
  }
  SUBCASE("empty image scores 0") {
    CHECK(registration_error(Volume3D::zeros(g), atlas) == doctest::Approx(0.0));
  }
  SUBCASE("geometry mismatch raises") {
    CHECK_THROWS_AS(
        registration_error(Volume3D::zeros({{2, 2, 1}, {1, 1, 1}}), atlas), Error);
  }
}

TEST_CASE("bias-corrupted recovery: NMI beats the field in most trials") {
  // brain-like support: textured anatomy masked to an ellipsoid, zero outside
  Geometry g{{32, 32, 16}, {1, 1, 1}};
  Volume3D texture = make_anatomy(g);
  std::array<double, 3> center{(g.dims[0] - 1) / 2.0, (g.dims[1] - 1) / 2.0,
                               (g.dims[2] - 1) / 2.0};
  std::vector<double> masked(g.n_voxels(), 0.0);
  {
    std::size_t idx = 0;
    for (std::size_t z = 0; z < g.dims[2]; ++z)
      for (std::size_t y = 0; y < g.dims[1]; ++y)
        for (std::size_t x = 0; x < g.dims[0]; ++x, ++idx) {
          double ex = (x - center[0]) / (0.42 * g.dims[0]);
          double ey = (y - center[1]) / (0.42 * g.dims[1]);
          double ez = (z - center[2]) / (0.42 * g.dims[2]);
          if (ex * ex + ey * ey + ez * ez > 1.0) continue;
          masked[idx] = texture[idx] + 0.5;
        }
  }
  Volume3D anatomy(g, std::move(masked));

  const std::vector<MetricKind> rivals{MetricKind::woods, MetricKind::correlation_ratio,
                                       MetricKind::joint_entropy,
                                       MetricKind::mutual_information};
  std::map<MetricKind, int> nmi_wins;

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> trans(-5.0, 5.0), rot(-5.0, 5.0);
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    AffineTransform planted = AffineTransform::from_params(
        {trans(rng), trans(rng), trans(rng), rot(rng), rot(rng), rot(rng), 1, 1, 1},
        center);
    Volume3D moving = corrupt_phantom(anatomy, planted, 0.5);

    auto err_with = [&](MetricKind kind) {
      AffineTransform t = optimize_transform(moving, anatomy, {kind, 64});
      return recovery_error(t, planted, g).first;
    };
    double nmi_err = err_with(MetricKind::normalized_mutual_information);
    for (MetricKind rival : rivals)
      if (nmi_err <= err_with(rival) + 1e-9) nmi_wins[rival]++;
  }
  for (MetricKind rival : rivals) {
    INFO("rival ", metric_name(rival), ": NMI wins ", nmi_wins[rival], "/", trials);
    CHECK(nmi_wins[rival] * 2 > trials);  // majority
  }
}
