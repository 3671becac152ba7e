#include "apa/registration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

namespace apa {

namespace {

std::array<double, 9> mat_mul3(const std::array<double, 9>& a,
                               const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

std::array<double, 3> mat_apply3(const std::array<double, 9>& m,
                                 const std::array<double, 3>& p) {
  return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2],
          m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
          m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
}

}  // namespace

double AffineTransform::det() const {
  const auto& m = matrix;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

std::array<double, 3> AffineTransform::apply(const std::array<double, 3>& p) const {
  auto q = mat_apply3(matrix, p);
  return {q[0] + translation[0], q[1] + translation[1], q[2] + translation[2]};
}

AffineTransform AffineTransform::inverse() const {
  double d = det();
  if (std::abs(d) <= 1e-9)
    raise(errc::singular_transform, "affine matrix is singular (|det| <= 1e-9)");
  const auto& m = matrix;
  std::array<double, 9> inv{
      (m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
      (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
      (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
      (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
      (m[0] * m[4] - m[1] * m[3]) / d};
  AffineTransform out;
  out.matrix = inv;
  auto t = mat_apply3(inv, translation);
  out.translation = {-t[0], -t[1], -t[2]};
  return out;
}

AffineTransform AffineTransform::compose(const AffineTransform& inner) const {
  AffineTransform out;
  out.matrix = mat_mul3(matrix, inner.matrix);
  auto t = mat_apply3(matrix, inner.translation);
  out.translation = {t[0] + translation[0], t[1] + translation[1],
                     t[2] + translation[2]};
  return out;
}

AffineTransform AffineTransform::from_params(const std::array<double, 9>& params,
                                             const std::array<double, 3>& center) {
  const double deg = std::numbers::pi / 180.0;
  double cx = std::cos(params[3] * deg), sx = std::sin(params[3] * deg);
  double cy = std::cos(params[4] * deg), sy = std::sin(params[4] * deg);
  double cz = std::cos(params[5] * deg), sz = std::sin(params[5] * deg);
  std::array<double, 9> rx{1, 0, 0, 0, cx, -sx, 0, sx, cx};
  std::array<double, 9> ry{cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  std::array<double, 9> rz{cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  std::array<double, 9> scale{params[6], 0, 0, 0, params[7], 0, 0, 0, params[8]};
  auto m = mat_mul3(mat_mul3(rz, mat_mul3(ry, rx)), scale);

  AffineTransform out;
  out.matrix = m;
  auto mc = mat_apply3(m, center);
  out.translation = {center[0] - mc[0] + params[0], center[1] - mc[1] + params[1],
                     center[2] - mc[2] + params[2]};
  return out;
}

nlohmann::json transform_to_json(const AffineTransform& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    rows.push_back({t.matrix[i * 3], t.matrix[i * 3 + 1], t.matrix[i * 3 + 2]});
  return nlohmann::json{{"matrix", rows}, {"translation", t.translation}};
}

AffineTransform transform_from_json(const nlohmann::json& j) {
  AffineTransform t;
  try {
    const auto& rows = j.at("matrix");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) t.matrix[i * 3 + k] = rows.at(i).at(k).get<double>();
    for (int i = 0; i < 3; ++i) t.translation[i] = j.at("translation").at(i).get<double>();
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, std::string("bad transform JSON: ") + e.what());
  }
  return t;
}

void save_transform(const AffineTransform& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << transform_to_json(t).dump(2) << '\n';
}

AffineTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, "bad transform file " + path.string() + ": " + e.what());
  }
  return transform_from_json(j);
}

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::woods: return "woods";
    case MetricKind::correlation_ratio: return "correlation_ratio";
    case MetricKind::joint_entropy: return "joint_entropy";
    case MetricKind::mutual_information: return "mutual_information";
    case MetricKind::normalized_mutual_information: return "normalized_mutual_information";
  }
  return "unknown";
}

MetricKind metric_from_name(const std::string& name) {
  if (name == "woods" || name == "w") return MetricKind::woods;
  if (name == "correlation_ratio" || name == "cr") return MetricKind::correlation_ratio;
  if (name == "joint_entropy" || name == "je") return MetricKind::joint_entropy;
  if (name == "mutual_information" || name == "mi") return MetricKind::mutual_information;
  if (name == "normalized_mutual_information" || name == "nmi")
    return MetricKind::normalized_mutual_information;
  raise(errc::config_invalid, "unknown similarity metric '" + name + "'");
}

namespace {

// bins a min/max-scaled image; with a mask, scaling and counting use only
// the valid voxels
std::vector<int> bin_image(const Volume3D& img, int n_bins,
                           const std::vector<std::uint8_t>* valid) {
  const auto& d = img.data();
  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    mn = std::min(mn, d[i]);
    mx = std::max(mx, d[i]);
  }
  std::vector<int> bins(d.size(), 0);
  if (mx > mn) {
    double scale = n_bins / (mx - mn);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (valid && !(*valid)[i]) continue;
      int b = static_cast<int>((d[i] - mn) * scale);
      bins[i] = std::min(b, n_bins - 1);
    }
  }
  return bins;
}

double entropy_of(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) {
      double p = c / total;
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

void JointHistogram::init(const Volume3D& a, const Volume3D& b, int n_bins,
                          const std::vector<std::uint8_t>* valid) {
  if (!(a.geom() == b.geom()))
    raise(errc::geometry_mismatch, "joint histogram needs matching geometries");
  if (n_bins < 2) raise(errc::invalid_argument, "need at least 2 histogram bins");
  n_bins_ = n_bins;
  counts_.assign(static_cast<std::size_t>(n_bins) * n_bins, 0.0);
  marg_a_.assign(n_bins, 0.0);
  marg_b_.assign(n_bins, 0.0);

  auto ba = bin_image(a, n_bins, valid);
  auto bb = bin_image(b, n_bins, valid);
  total_ = 0.0;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    counts_[static_cast<std::size_t>(ba[i]) * n_bins + bb[i]] += 1.0;
    total_ += 1.0;
  }
  for (int i = 0; i < n_bins; ++i)
    for (int j = 0; j < n_bins; ++j) {
      double c = joint(i, j);
      marg_a_[i] += c;
      marg_b_[j] += c;
    }
}

JointHistogram::JointHistogram(const Volume3D& a, const Volume3D& b, int n_bins) {
  init(a, b, n_bins, nullptr);
}

JointHistogram::JointHistogram(const Volume3D& a, const Volume3D& b, int n_bins,
                               const std::vector<std::uint8_t>& valid) {
  if (valid.size() != a.geom().n_voxels())
    raise(errc::invalid_argument, "validity mask length mismatch");
  init(a, b, n_bins, &valid);
}

double JointHistogram::entropy_a() const { return entropy_of(marg_a_, total_); }
double JointHistogram::entropy_b() const { return entropy_of(marg_b_, total_); }
double JointHistogram::entropy_joint() const { return entropy_of(counts_, total_); }

namespace {

// Conditional stats of b's bin centers (j + 0.5, always > 0) given a's bin.
struct ConditionalStats {
  std::vector<double> n, mean, var;
  double total_var = 0.0;
  double total = 0.0;
};

ConditionalStats conditional_b_given_a(const JointHistogram& h) {
  ConditionalStats st;
  int nb = h.n_bins();
  st.n.assign(nb, 0.0);
  st.mean.assign(nb, 0.0);
  st.var.assign(nb, 0.0);
  st.total = h.total();
  double t1 = 0.0, t2 = 0.0;
  for (int i = 0; i < nb; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < nb; ++j) {
      double c = h.joint(i, j);
      if (c == 0.0) continue;
      double v = j + 0.5;
      st.n[i] += c;
      s1 += c * v;
      s2 += c * v * v;
    }
    if (st.n[i] > 0.0) {
      st.mean[i] = s1 / st.n[i];
      st.var[i] = std::max(0.0, s2 / st.n[i] - st.mean[i] * st.mean[i]);
    }
    t1 += s1;
    t2 += s2;
  }
  double mu = t1 / st.total;
  st.total_var = std::max(0.0, t2 / st.total - mu * mu);
  return st;
}

// Woods criterion: sum_i (n_i/N) * sigma_i / mu_i, lower is better.
double woods_value(const JointHistogram& h) {
  auto st = conditional_b_given_a(h);
  double w = 0.0;
  for (int i = 0; i < h.n_bins(); ++i) {
    if (st.n[i] == 0.0) continue;
    w += (st.n[i] / st.total) * (std::sqrt(st.var[i]) / st.mean[i]);
  }
  return w;
}

// Correlation ratio eta^2 = 1 - E[var(b | bin(a))] / var(b), in [0, 1].
double correlation_ratio_value(const JointHistogram& h) {
  auto st = conditional_b_given_a(h);
  if (st.total_var <= 0.0) return 1.0;
  double cond = 0.0;
  for (int i = 0; i < h.n_bins(); ++i) cond += st.n[i] * st.var[i];
  return 1.0 - cond / (st.total * st.total_var);
}

}  // namespace

double metric_value(const JointHistogram& h, MetricKind kind) {
  switch (kind) {
    case MetricKind::woods:
      return woods_value(h);
    case MetricKind::correlation_ratio:
      return correlation_ratio_value(h);
    case MetricKind::joint_entropy:
      return h.entropy_joint();
    case MetricKind::mutual_information:
      return h.entropy_a() + h.entropy_b() - h.entropy_joint();
    case MetricKind::normalized_mutual_information: {
      double hj = h.entropy_joint();
      if (hj <= 0.0) return 2.0;  // both images constant
      return (h.entropy_a() + h.entropy_b()) / hj;
    }
  }
  raise(errc::invalid_argument, "unknown metric kind");
}

double compute_similarity(const Volume3D& a, const Volume3D& b,
                          const SimilarityMetric& metric) {
  return metric_value(JointHistogram(a, b, metric.n_bins), metric.kind);
}

double oriented_score(MetricKind kind, double value) {
  switch (kind) {
    case MetricKind::woods:
    case MetricKind::joint_entropy:
      return -value;
    default:
      return value;
  }
}

namespace {

void resample_impl(const Volume3D& src, const AffineTransform& t,
                   const Geometry& ref_geom, std::vector<double>& out,
                   std::vector<std::uint8_t>* valid) {
  AffineTransform inv = t.inverse();
  const Geometry& sg = src.geom();
  const auto nx = static_cast<std::ptrdiff_t>(sg.dims[0]);
  const auto ny = static_cast<std::ptrdiff_t>(sg.dims[1]);
  const auto nz = static_cast<std::ptrdiff_t>(sg.dims[2]);

  out.assign(ref_geom.n_voxels(), 0.0);
  if (valid) valid->assign(ref_geom.n_voxels(), 0);
  std::size_t idx = 0;
  for (std::size_t z = 0; z < ref_geom.dims[2]; ++z)
    for (std::size_t y = 0; y < ref_geom.dims[1]; ++y)
      for (std::size_t x = 0; x < ref_geom.dims[0]; ++x, ++idx) {
        std::array<double, 3> p{x * ref_geom.spacing[0], y * ref_geom.spacing[1],
                                z * ref_geom.spacing[2]};
        auto q = inv.apply(p);
        double cx = q[0] / sg.spacing[0];
        double cy = q[1] / sg.spacing[1];
        double cz = q[2] / sg.spacing[2];
        if (cx < 0 || cy < 0 || cz < 0 || cx > nx - 1 || cy > ny - 1 || cz > nz - 1)
          continue;
        auto x0 = std::min(static_cast<std::ptrdiff_t>(cx), nx - 2);
        auto y0 = std::min(static_cast<std::ptrdiff_t>(cy), ny - 2);
        auto z0 = std::min(static_cast<std::ptrdiff_t>(cz), nz - 2);
        x0 = std::max<std::ptrdiff_t>(x0, 0);
        y0 = std::max<std::ptrdiff_t>(y0, 0);
        z0 = std::max<std::ptrdiff_t>(z0, 0);
        double fx = cx - x0, fy = cy - y0, fz = cz - z0;
        auto sample = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) {
          i = std::min(i, nx - 1);
          j = std::min(j, ny - 1);
          k = std::min(k, nz - 1);
          return src.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                        static_cast<std::size_t>(k));
        };
        double c00 = sample(x0, y0, z0) * (1 - fx) + sample(x0 + 1, y0, z0) * fx;
        double c10 = sample(x0, y0 + 1, z0) * (1 - fx) + sample(x0 + 1, y0 + 1, z0) * fx;
        double c01 = sample(x0, y0, z0 + 1) * (1 - fx) + sample(x0 + 1, y0, z0 + 1) * fx;
        double c11 =
            sample(x0, y0 + 1, z0 + 1) * (1 - fx) + sample(x0 + 1, y0 + 1, z0 + 1) * fx;
        double c0 = c00 * (1 - fy) + c10 * fy;
        double c1 = c01 * (1 - fy) + c11 * fy;
        out[idx] = c0 * (1 - fz) + c1 * fz;
        if (valid) (*valid)[idx] = 1;
      }
}

}  // namespace

Volume3D resample_trilinear(const Volume3D& src, const AffineTransform& t,
                            const Geometry& ref_geom) {
  std::vector<double> out;
  resample_impl(src, t, ref_geom, out, nullptr);
  return Volume3D(ref_geom, std::move(out));
}

std::pair<Volume3D, std::vector<std::uint8_t>> resample_trilinear_masked(
    const Volume3D& src, const AffineTransform& t, const Geometry& ref_geom) {
  std::vector<double> out;
  std::vector<std::uint8_t> valid;
  resample_impl(src, t, ref_geom, out, &valid);
  return {Volume3D(ref_geom, std::move(out)), std::move(valid)};
}

Volume3D downsample(const Volume3D& vol, int factor) {
  if (factor < 1) raise(errc::invalid_argument, "downsample factor must be >= 1");
  if (factor == 1) return vol;
  const Geometry& g = vol.geom();
  Geometry out_geom;
  for (int d = 0; d < 3; ++d) {
    out_geom.dims[d] = (g.dims[d] + factor - 1) / factor;
    out_geom.spacing[d] = g.spacing[d] * factor;
  }
  std::vector<double> out(out_geom.n_voxels(), 0.0);
  for (std::size_t z = 0; z < out_geom.dims[2]; ++z)
    for (std::size_t y = 0; y < out_geom.dims[1]; ++y)
      for (std::size_t x = 0; x < out_geom.dims[0]; ++x) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t dz = 0; dz < static_cast<std::size_t>(factor); ++dz)
          for (std::size_t dy = 0; dy < static_cast<std::size_t>(factor); ++dy)
            for (std::size_t dx = 0; dx < static_cast<std::size_t>(factor); ++dx) {
              std::size_t sx = x * factor + dx, sy = y * factor + dy,
                          sz = z * factor + dz;
              if (sx >= g.dims[0] || sy >= g.dims[1] || sz >= g.dims[2]) continue;
              sum += vol.at(sx, sy, sz);
              ++count;
            }
        out[voxel_offset(out_geom, x, y, z)] = count ? sum / count : 0.0;
      }
  return Volume3D(out_geom, std::move(out));
}

namespace {

bool is_constant(const Volume3D& v) {
  const auto& d = v.data();
  for (double x : d)
    if (x != d.front()) return false;
  return true;
}

// 3x3x3 box blur; regularizes the full-resolution histogram the way block
// averaging already does for the coarser pyramid levels
Volume3D box_blur(const Volume3D& v) {
  const Geometry& g = v.geom();
  std::vector<double> out(g.n_voxels(), 0.0);
  const auto nx = static_cast<std::ptrdiff_t>(g.dims[0]);
  const auto ny = static_cast<std::ptrdiff_t>(g.dims[1]);
  const auto nz = static_cast<std::ptrdiff_t>(g.dims[2]);
  std::size_t idx = 0;
  for (std::ptrdiff_t z = 0; z < nz; ++z)
    for (std::ptrdiff_t y = 0; y < ny; ++y)
      for (std::ptrdiff_t x = 0; x < nx; ++x, ++idx) {
        double sum = 0.0;
        int count = 0;
        for (std::ptrdiff_t dz = -1; dz <= 1; ++dz)
          for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
              std::ptrdiff_t xx = x + dx, yy = y + dy, zz = z + dz;
              if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz)
                continue;
              sum += v.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                          static_cast<std::size_t>(zz));
              ++count;
            }
        out[idx] = sum / count;
      }
  return Volume3D(g, std::move(out));
}

}  // namespace

AffineTransform optimize_transform(const Volume3D& moving, const Volume3D& ref,
                                   const SimilarityMetric& metric,
                                   const SearchConfig& search) {
  if (is_constant(moving) || is_constant(ref))
    raise(errc::degenerate_input, "cannot register constant images");

  const Geometry& rg = ref.geom();
  const std::array<double, 3> center{(rg.dims[0] - 1) * rg.spacing[0] / 2.0,
                                     (rg.dims[1] - 1) * rg.spacing[1] / 2.0,
                                     (rg.dims[2] - 1) * rg.spacing[2] / 2.0};

  std::array<double, 9> params{0, 0, 0, 0, 0, 0, 1, 1, 1};

  for (int level = search.levels - 1; level >= 0; --level) {
    int factor = 1 << level;
    Volume3D ref_l = factor == 1 ? box_blur(ref) : downsample(ref, factor);
    Volume3D mov_l = factor == 1 ? box_blur(moving) : downsample(moving, factor);
    if (is_constant(ref_l) || is_constant(mov_l)) continue;
    // coarse levels with almost no voxels produce junk histograms
    if (level > 0 && ref_l.geom().n_voxels() < 512) continue;
    // scale joins the search only at full resolution; releasing it early
    // lets it absorb genuine translation/rotation mismatch
    const int n_params = (level == 0) ? 9 : 6;

    double mean_spacing =
        (ref_l.geom().spacing[0] + ref_l.geom().spacing[1] + ref_l.geom().spacing[2]) / 3.0;
    std::array<double, 9> init_step{}, floor_step{};
    for (int i = 0; i < 3; ++i) {
      init_step[i] = search.translation_step_voxels * mean_spacing;
      floor_step[i] = search.min_translation_voxels * mean_spacing;
    }
    for (int i = 3; i < 6; ++i) {
      init_step[i] = search.rotation_step_deg;
      floor_step[i] = search.min_rotation_deg;
    }
    for (int i = 6; i < 9; ++i) {
      init_step[i] = search.scale_step;
      floor_step[i] = search.min_scale_step;
    }

    // full-grid scoring: the zero-padded border voxels act as a natural
    // misalignment penalty (overlap-masked histograms let entropy metrics
    // trade alignment for smaller, more structured overlaps). Candidates
    // that throw most of the grid out of bounds are rejected outright; joint
    // entropy otherwise hits its global minimum at zero overlap.
    const double min_overlap = 0.5 * static_cast<double>(ref_l.geom().n_voxels());
    auto score_at = [&](const std::array<double, 9>& p) {
      AffineTransform t = AffineTransform::from_params(p, center);
      if (std::abs(t.det()) <= 1e-9) return -std::numeric_limits<double>::infinity();
      auto [resampled, valid] = resample_trilinear_masked(mov_l, t, ref_l.geom());
      double overlap = 0.0;
      for (std::uint8_t f : valid) overlap += f;
      if (overlap < min_overlap) return -std::numeric_limits<double>::infinity();
      return oriented_score(metric.kind,
                            metric_value(JointHistogram(resampled, ref_l, metric.n_bins),
                                         metric.kind));
    };

    // pattern search: greedy line steps per parameter, per-parameter step
    // adaptation (diagonal valleys stall plain one-step coordinate descent)
    auto descend = [&](std::array<double, 9>& p, int sweeps, int dof) {
      std::array<double, 9> step = init_step;
      double best = score_at(p);
      for (int sweep = 0; sweep < sweeps; ++sweep) {
        bool any_live = false;
        for (int i = 0; i < dof; ++i) {
          if (step[i] < floor_step[i]) continue;
          bool improved_i = false;
          for (double dir : {+1.0, -1.0}) {
            for (int repeat = 0; repeat < 8; ++repeat) {
              std::array<double, 9> cand = p;
              cand[i] += dir * step[i];
              if (i >= 6 && cand[i] < 0.05) break;  // keep scales positive
              double s = score_at(cand);
              if (!(s > best + 1e-12)) break;
              best = s;
              p = cand;
              improved_i = true;
            }
            if (improved_i) break;  // keep the successful direction's gains
          }
          step[i] = improved_i ? std::min(step[i] * 2.0, init_step[i]) : step[i] * 0.5;
          if (step[i] >= floor_step[i]) any_live = true;
        }
        if (!any_live) break;
      }
      return best;
    };

    descend(params, search.max_sweeps, n_params);

    if (level == 0 && search.polish) {
      // the blur biases fractional shifts slightly; polish on the raw images
      // with small steps from the blurred optimum
      ref_l = ref;
      mov_l = moving;
      for (int i = 0; i < 3; ++i) init_step[i] = 0.5 * mean_spacing;
      for (int i = 3; i < 6; ++i) init_step[i] = 0.5;
      for (int i = 6; i < 9; ++i) init_step[i] = 0.01;
      descend(params, search.max_sweeps, n_params);
    }
  }

  AffineTransform result = AffineTransform::from_params(params, center);
  // monotone-acceptance guard at full resolution
  auto full_score = [&](const AffineTransform& t) {
    Volume3D resampled = resample_trilinear(moving, t, rg);
    return oriented_score(metric.kind, compute_similarity(resampled, ref, metric));
  };
  if (full_score(result) < full_score(AffineTransform::identity()))
    return AffineTransform::identity();
  return result;
}

double registration_error(const Volume3D& img, const AtlasVolume& atlas) {
  if (!(img.geom() == atlas.geom()))
    raise(errc::geometry_mismatch, "image and atlas geometry differ");
  std::size_t nonzero = 0, misplaced = 0;
  for (std::size_t v = 0; v < img.data().size(); ++v) {
    if (img[v] == 0.0) continue;
    ++nonzero;
    if (atlas.labels()[v] == 0) ++misplaced;
  }
  if (nonzero == 0) return 0.0;
  return static_cast<double>(misplaced) / static_cast<double>(nonzero);
}

}  // namespace apa
