#include "apa/glm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "apa/linalg.hpp"
#include "apa/parallel.hpp"

namespace apa {

namespace {

void check_hrf(const HrfParams& p) {
  if (!(p.peak_delay > 0 && p.undershoot_delay > 0 && p.peak_dispersion > 0 &&
        p.undershoot_dispersion > 0 && p.undershoot_ratio >= 0 && p.length > 0))
    raise(errc::invalid_argument, "HRF parameters must be positive");
  if (p.length < p.undershoot_delay)
    raise(errc::invalid_argument, "HRF length must cover the undershoot delay");
}

// gamma density with mode at `delay`: shape = delay/dispersion + 1, scale = dispersion
double gamma_mode_pdf(double t, double delay, double dispersion) {
  if (t <= 0.0) return 0.0;
  double shape = delay / dispersion + 1.0;
  return std::exp((shape - 1.0) * std::log(t) - t / dispersion -
                  std::lgamma(shape) - shape * std::log(dispersion));
}

}  // namespace

std::vector<double> canonical_hrf(const HrfParams& params, double dt) {
  check_hrf(params);
  if (!(dt > 0.0)) raise(errc::invalid_argument, "HRF sampling step must be positive");

  std::size_t n = static_cast<std::size_t>(std::ceil(params.length / dt));
  std::vector<double> kernel(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) * dt;
    kernel[i] = gamma_mode_pdf(t, params.peak_delay, params.peak_dispersion) -
                params.undershoot_ratio *
                    gamma_mode_pdf(t, params.undershoot_delay,
                                   params.undershoot_dispersion);
    peak = std::max(peak, kernel[i]);
  }
  if (!(peak > 0.0))
    raise(errc::invalid_argument, "HRF kernel has no positive peak at this sampling");
  for (double& v : kernel) v /= peak;
  return kernel;
}

OnsetTable OnsetTable::from_events(std::vector<OnsetEvent> events, int n_categories) {
  if (n_categories < 1) raise(errc::invalid_argument, "need at least one category");
  std::stable_sort(events.begin(), events.end(),
                   [](const OnsetEvent& a, const OnsetEvent& b) {
                     return a.onset_seconds < b.onset_seconds;
                   });
  std::vector<int> seen(static_cast<std::size_t>(n_categories), 0);
  for (const auto& e : events) {
    if (e.onset_seconds < 0 || !(e.duration_seconds > 0))
      raise(errc::invalid_argument, "event needs onset >= 0 and duration > 0");
    if (e.category_index < 0 || e.category_index >= n_categories)
      raise(errc::invalid_argument,
            "event category " + std::to_string(e.category_index) + " outside 0.." +
                std::to_string(n_categories - 1));
    if (e.condition_index < 0)
      raise(errc::invalid_argument, "event condition index must be >= 0");
    seen[static_cast<std::size_t>(e.category_index)]++;
  }
  for (int p = 0; p < n_categories; ++p)
    if (seen[static_cast<std::size_t>(p)] == 0)
      raise(errc::invalid_argument,
            "category " + std::to_string(p) + " has no events");
  OnsetTable t;
  t.events = std::move(events);
  t.n_categories = n_categories;
  return t;
}

OnsetTable load_onsets_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("onset,duration,category,condition", 0) != 0)
    raise(errc::bad_header, "expected onset,duration,category,condition header in " +
                                path.string());
  std::vector<OnsetEvent> events;
  int max_cat = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    OnsetEvent e;
    char c1, c2, c3;
    if (!(row >> e.onset_seconds >> c1 >> e.duration_seconds >> c2 >>
          e.category_index >> c3 >> e.condition_index) ||
        c1 != ',' || c2 != ',' || c3 != ',')
      raise(errc::bad_header, path.string() + ":" + std::to_string(line_no) +
                                  ": malformed onset row");
    max_cat = std::max(max_cat, e.category_index);
    events.push_back(e);
  }
  if (events.empty()) raise(errc::bad_header, "no events in " + path.string());
  return OnsetTable::from_events(std::move(events), max_cat + 1);
}

void save_onsets_csv(const OnsetTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << "onset,duration,category,condition\n";
  for (const auto& e : table.events)
    out << e.onset_seconds << ',' << e.duration_seconds << ',' << e.category_index
        << ',' << e.condition_index << '\n';
}

namespace {

// design matrix (or any tall matrix) full-column-rank check via its Gram matrix
bool gram_full_rank(const std::vector<double>& values, std::size_t n,
                    std::size_t p, std::size_t* bad_col = nullptr) {
  Mat gram(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += values[k * p + i] * values[k * p + j];
      gram(i, j) = gram(j, i) = s;
    }
  std::size_t pivot = cholesky_factor(gram);
  if (bad_col) *bad_col = pivot;
  return pivot == p;
}

}  // namespace

DesignMatrix build_design_matrix(const OnsetTable& onsets,
                                 const std::vector<double>& kernel,
                                 std::size_t n_scans, double tr) {
  if (!(tr > 0.0)) raise(errc::invalid_argument, "tr must be positive");
  if (n_scans == 0) raise(errc::invalid_argument, "n_scans must be >= 1");
  if (kernel.empty()) raise(errc::invalid_argument, "empty HRF kernel");
  const double window_end = static_cast<double>(n_scans) * tr;
  for (const auto& e : onsets.events)
    if (e.onset_seconds + e.duration_seconds > window_end + 1e-9)
      raise(errc::invalid_argument,
            "event at t=" + std::to_string(e.onset_seconds) +
                "s extends past the scan window");

  const std::size_t P = static_cast<std::size_t>(onsets.n_categories);
  std::vector<double> boxcar(n_scans * P, 0.0);
  for (const auto& e : onsets.events) {
    for (std::size_t n = 0; n < n_scans; ++n) {
      double t = static_cast<double>(n) * tr;
      if (t >= e.onset_seconds && t < e.onset_seconds + e.duration_seconds)
        boxcar[n * P + static_cast<std::size_t>(e.category_index)] = 1.0;
    }
  }

  DesignMatrix d;
  d.n_scans = n_scans;
  d.n_regressors = P;
  d.values.assign(n_scans * P, 0.0);
  for (std::size_t n = 0; n < n_scans; ++n) {
    std::size_t m_max = std::min(n + 1, kernel.size());
    for (std::size_t m = 0; m < m_max; ++m) {
      double k = kernel[m];
      if (k == 0.0) continue;
      for (std::size_t p = 0; p < P; ++p)
        d.values[n * P + p] += k * boxcar[(n - m) * P + p];
    }
  }
  d.full_rank = gram_full_rank(d.values, n_scans, P);
  return d;
}

DesignMatrix build_design_matrix(const OnsetTable& onsets, const HrfParams& hrf,
                                 std::size_t n_scans, double tr) {
  return build_design_matrix(onsets, canonical_hrf(hrf, tr), n_scans, tr);
}

namespace {

void check_noise(const NoiseModel& noise) {
  if (!(noise.sigma2 > 0.0)) raise(errc::invalid_argument, "sigma2 must be positive");
  if (noise.kind == NoiseModel::Kind::ar1 &&
      !(noise.rho > -1.0 && noise.rho < 1.0))
    raise(errc::invalid_argument, "AR(1) rho must lie strictly inside (-1, 1)");
}

// w[0] = sqrt(1-rho^2) x[0], w[n] = x[n] - rho x[n-1]; W^T W = (1-rho^2) V^-1
void whiten_ar1(const double* x, double* w, std::size_t n, double rho) {
  w[0] = std::sqrt(1.0 - rho * rho) * x[0];
  for (std::size_t i = 1; i < n; ++i) w[i] = x[i] - rho * x[i - 1];
}

}  // namespace

BetaMaps estimate_gls(const Volume4D& data, const DesignMatrix& design,
                      const NoiseModel& noise) {
  check_noise(noise);
  const std::size_t N = design.n_scans;
  const std::size_t P = design.n_regressors;
  if (data.n_scans() != N)
    raise(errc::invalid_argument,
          "design has " + std::to_string(N) + " scans, data has " +
              std::to_string(data.n_scans()));
  if (N <= P)
    raise(errc::invalid_argument,
          "need more scans than regressors (N=" + std::to_string(N) +
              ", P=" + std::to_string(P) + ")");

  const bool ar1 = noise.kind == NoiseModel::Kind::ar1 && noise.rho != 0.0;
  const double rho = ar1 ? noise.rho : 0.0;

  // whitened design, column-major for the per-voxel inner loops
  std::vector<double> dw(N * P);
  {
    std::vector<double> col(N), wcol(N);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t n = 0; n < N; ++n) col[n] = design.at(n, p);
      if (ar1)
        whiten_ar1(col.data(), wcol.data(), N, rho);
      else
        wcol = col;
      for (std::size_t n = 0; n < N; ++n) dw[p * N + n] = wcol[n];
    }
  }

  Mat gram(P, P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += dw[i * N + n] * dw[j * N + n];
      gram(i, j) = gram(j, i) = s;
    }
  std::size_t pivot = cholesky_factor(gram);
  if (pivot != P)
    raise(errc::rank_deficient,
          "design matrix is rank deficient: column " + std::to_string(pivot) +
              " is linearly dependent on earlier columns");

  const Geometry& g = data.frame();
  const std::size_t n_vox = g.n_voxels();
  std::vector<std::vector<double>> beta(P, std::vector<double>(n_vox, 0.0));
  std::vector<double> resid_var(n_vox, 0.0);

  // residual variance in the V^-1 metric: ||W r||^2 / (1 - rho^2) reduces to
  // the plain RSS for the identity model
  const double whiten_scale = ar1 ? 1.0 / (1.0 - rho * rho) : 1.0;

  parallel_for(n_vox, [&](std::size_t v) {
    std::vector<double> y(N), wy(N), rhs(P);
    for (std::size_t n = 0; n < N; ++n) y[n] = data.data()[n * n_vox + v];
    if (ar1)
      whiten_ar1(y.data(), wy.data(), N, rho);
    else
      wy = y;
    for (std::size_t p = 0; p < P; ++p) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += dw[p * N + n] * wy[n];
      rhs[p] = s;
    }
    std::vector<double> b = cholesky_solve(gram, rhs);
    double rss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      double fit = 0.0;
      for (std::size_t p = 0; p < P; ++p) fit += dw[p * N + n] * b[p];
      double r = wy[n] - fit;
      rss += r * r;
    }
    for (std::size_t p = 0; p < P; ++p) beta[p][v] = b[p];
    resid_var[v] = whiten_scale * rss / static_cast<double>(N - P);
  });

  BetaMaps out;
  out.maps.reserve(P);
  for (std::size_t p = 0; p < P; ++p)
    out.maps.emplace_back(g, std::move(beta[p]));
  out.residual_variance = Volume3D(g, std::move(resid_var));
  return out;
}

PositiveBetaMaps positive_mask(const BetaMaps& betas) {
  PositiveBetaMaps out;
  out.maps.reserve(betas.maps.size());
  for (const auto& m : betas.maps) {
    std::vector<double> pos(m.data().size());
    for (std::size_t i = 0; i < pos.size(); ++i)
      pos[i] = m[i] > 0.0 ? m[i] : 0.0;
    out.maps.emplace_back(m.geom(), std::move(pos));
  }
  return out;
}

}  // namespace apa
