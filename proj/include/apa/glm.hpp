#pragma once

#include <filesystem>
#include <vector>

#include "apa/volume.hpp"

namespace apa {

/// Double-gamma hemodynamic response kernel parameters (seconds).
/// Each gamma density is parameterized so its mode sits at the given delay.
struct HrfParams {
  double peak_delay = 6.0;
  double undershoot_delay = 16.0;
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
  double length = 32.0;
};

/// Samples the difference-of-gammas kernel at step dt; ceil(length / dt)
/// samples, normalized to peak amplitude 1.
std::vector<double> canonical_hrf(const HrfParams& params, double dt);

struct OnsetEvent {
  double onset_seconds = 0.0;
  double duration_seconds = 0.0;
  int category_index = 0;
  int condition_index = 0;
};

/// Stimulus schedule for one session. Events are kept sorted by onset;
/// every category in 0..n_categories-1 must appear at least once.
struct OnsetTable {
  std::vector<OnsetEvent> events;
  int n_categories = 0;

  static OnsetTable from_events(std::vector<OnsetEvent> events, int n_categories);
};

OnsetTable load_onsets_csv(const std::filesystem::path& path);
void save_onsets_csv(const OnsetTable& table, const std::filesystem::path& path);

/// Scans x categories regressor matrix, row-major.
struct DesignMatrix {
  std::size_t n_scans = 0;
  std::size_t n_regressors = 0;
  std::vector<double> values;
  bool full_rank = true;

  double at(std::size_t scan, std::size_t reg) const {
    return values[scan * n_regressors + reg];
  }
};

/// Builds the design matrix by convolving each category's scan-resolution
/// boxcar (scan n is on when onset <= n*tr < onset+duration) with a kernel.
DesignMatrix build_design_matrix(const OnsetTable& onsets,
                                 const std::vector<double>& kernel,
                                 std::size_t n_scans, double tr);

/// Same, sampling the kernel from HrfParams at dt = tr.
DesignMatrix build_design_matrix(const OnsetTable& onsets, const HrfParams& hrf,
                                 std::size_t n_scans, double tr);

/// Noise covariance model for the GLS estimator. V is the identity or the
/// unit-diagonal AR(1) correlation matrix V_ij = rho^|i-j|; sigma2 is an
/// overall scale and does not affect the estimate.
struct NoiseModel {
  enum class Kind { identity, ar1 };
  Kind kind = Kind::identity;
  double rho = 0.0;
  double sigma2 = 1.0;

  static NoiseModel identity(double sigma2 = 1.0) { return {Kind::identity, 0.0, sigma2}; }
  static NoiseModel ar1(double rho, double sigma2 = 1.0) { return {Kind::ar1, rho, sigma2}; }
};

/// Per-category coefficient volumes plus the per-voxel residual variance
/// estimate r^T V^-1 r / (N - P).
struct BetaMaps {
  std::vector<Volume3D> maps;
  Volume3D residual_variance;

  std::size_t n_categories() const { return maps.size(); }
};

/// Voxel-wise generalized least squares: beta = (D^T V^-1 D)^-1 D^T V^-1 f.
/// AR(1) is solved by analytic prewhitening (the tridiagonal structure of
/// V^-1), never by materializing V.
BetaMaps estimate_gls(const Volume4D& data, const DesignMatrix& design,
                      const NoiseModel& noise);

/// Active-region maps: value where the estimate is strictly positive, else 0.
struct PositiveBetaMaps {
  std::vector<Volume3D> maps;
};

PositiveBetaMaps positive_mask(const BetaMaps& betas);

}  // namespace apa
