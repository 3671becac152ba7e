#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "apa/volume.hpp"

namespace apa {

/// Affine map on physical (mm) coordinates: p' = M p + t.
struct AffineTransform {
  std::array<double, 9> matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  std::array<double, 3> translation{0, 0, 0};

  static AffineTransform identity() { return {}; }

  /// 9-parameter build: translation mm (3), rotation degrees about x/y/z (3),
  /// scale (3). Rotation and scale are applied about `center`:
  /// p' = R S (p - center) + center + t.
  static AffineTransform from_params(const std::array<double, 9>& params,
                                     const std::array<double, 3>& center);

  std::array<double, 3> apply(const std::array<double, 3>& p) const;
  AffineTransform inverse() const;
  /// Composition: (*this)(inner(p)).
  AffineTransform compose(const AffineTransform& inner) const;
  double det() const;
};

nlohmann::json transform_to_json(const AffineTransform& t);
AffineTransform transform_from_json(const nlohmann::json& j);
void save_transform(const AffineTransform& t, const std::filesystem::path& path);
AffineTransform load_transform(const std::filesystem::path& path);

enum class MetricKind {
  woods,
  correlation_ratio,
  joint_entropy,
  mutual_information,
  normalized_mutual_information,
};

const char* metric_name(MetricKind kind);
MetricKind metric_from_name(const std::string& name);

struct SimilarityMetric {
  MetricKind kind = MetricKind::normalized_mutual_information;
  int n_bins = 64;
};

/// Intensity co-occurrence counts over the shared grid of two images, each
/// min/max scaled into n_bins bins. Basis for all five metrics. The masked
/// form counts only voxels flagged valid (the overlap after resampling).
class JointHistogram {
public:
  JointHistogram(const Volume3D& a, const Volume3D& b, int n_bins);
  JointHistogram(const Volume3D& a, const Volume3D& b, int n_bins,
                 const std::vector<std::uint8_t>& valid);

  int n_bins() const { return n_bins_; }
  double total() const { return total_; }
  double joint(int i, int j) const { return counts_[static_cast<std::size_t>(i) * n_bins_ + j]; }
  double marginal_a(int i) const { return marg_a_[static_cast<std::size_t>(i)]; }
  double marginal_b(int j) const { return marg_b_[static_cast<std::size_t>(j)]; }

  double entropy_a() const;      // nats
  double entropy_b() const;
  double entropy_joint() const;

private:
  void init(const Volume3D& a, const Volume3D& b, int n_bins,
            const std::vector<std::uint8_t>* valid);

  int n_bins_ = 0;
  double total_ = 0.0;
  std::vector<double> counts_;
  std::vector<double> marg_a_, marg_b_;
};

/// Metric value from a prebuilt histogram (the masked-overlap path).
double metric_value(const JointHistogram& h, MetricKind kind);

/// Raw metric value from the shared joint histogram. Woods and joint entropy
/// improve downward, the other three upward; see oriented_score.
double compute_similarity(const Volume3D& a, const Volume3D& b,
                          const SimilarityMetric& metric);

/// Maps a raw metric value onto a maximize-me score.
double oriented_score(MetricKind kind, double value);

struct SearchConfig {
  int levels = 3;                       // pyramid factors 2^(levels-1) .. 1
  int max_sweeps = 60;                  // coordinate-descent sweeps per level
  double translation_step_voxels = 2.0; // initial, in level-grid voxels
  double rotation_step_deg = 4.0;
  double scale_step = 0.04;
  double min_translation_voxels = 0.05;
  double min_rotation_deg = 0.05;
  double min_scale_step = 0.002;
  bool polish = true;
};

/// Multi-resolution coordinate descent over 9 affine parameters, maximizing
/// the oriented metric between the resampled moving image and the reference.
/// Deterministic; never returns a transform scoring below the identity.
AffineTransform optimize_transform(const Volume3D& moving, const Volume3D& ref,
                                   const SimilarityMetric& metric,
                                   const SearchConfig& search = {});

/// Fills each reference voxel from src at t^-1(reference coordinate) by
/// trilinear interpolation; samples outside src map to 0.
Volume3D resample_trilinear(const Volume3D& src, const AffineTransform& t,
                            const Geometry& ref_geom);

/// Same, also reporting which reference voxels sampled inside src.
std::pair<Volume3D, std::vector<std::uint8_t>> resample_trilinear_masked(
    const Volume3D& src, const AffineTransform& t, const Geometry& ref_geom);

/// Block-average downsampling by an integer factor; spacing scales by factor.
Volume3D downsample(const Volume3D& vol, int factor);

/// Fraction of nonzero image voxels lying on atlas background (label 0).
/// An image with no nonzero voxels scores 0.
double registration_error(const Volume3D& img, const AtlasVolume& atlas);

struct RegisteredCondition {
  int category_index = 0;
  int condition_index = 0;
  Volume3D image;
  AffineTransform transform;
  double score = 0.0;  // raw metric value at the returned transform
};

}  // namespace apa
