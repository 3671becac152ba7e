#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "apa/glm.hpp"
#include "apa/volume.hpp"

namespace apa {

/// The scans belonging to one stimulus condition, sliced out of the session.
class ConditionImage {
public:
  ConditionImage(Geometry frame, int category_index, int condition_index,
                 std::size_t n_scans, std::vector<double> data);

  const Geometry& frame() const { return frame_; }
  int category_index() const { return category_index_; }
  int condition_index() const { return condition_index_; }
  std::size_t n_scans() const { return n_scans_; }
  const std::vector<double>& data() const { return data_; }
  const double* scan(std::size_t k) const {
    return data_.data() + k * frame_.n_voxels();
  }

private:
  Geometry frame_;
  int category_index_ = 0;
  int condition_index_ = 0;
  std::size_t n_scans_ = 0;
  std::vector<double> data_;
};

struct ConditionSum {
  int category_index = 0;
  int condition_index = 0;
  Volume3D image;
};

struct MaskedCondition {
  int category_index = 0;
  int condition_index = 0;
  Volume3D image;
};

struct FeatureVector {
  int category_index = -1;
  int condition_index = -1;
  std::string subject_id;
  std::string session_id;
  std::string category_name;
  std::vector<double> values;
};

struct FeatureTable {
  std::string atlas_id;
  std::vector<FeatureVector> rows;

  std::size_t n_features() const { return rows.empty() ? 0 : rows.front().values.size(); }
  /// Category names ordered by category_index.
  std::vector<std::string> category_names() const;
};

/// Slices the session into per-event condition blocks. Scan n belongs to an
/// event when onset <= (n - lag_scans) * tr < onset + duration; every scan
/// lands in at most one condition. Output is ordered by (category, condition).
std::vector<ConditionImage> partition_conditions(const Volume4D& data,
                                                 const OnsetTable& onsets,
                                                 double tr, int lag_scans = 0);

/// Voxelwise sum of the condition's scans.
ConditionSum sum_condition(const ConditionImage& cond);

/// Hadamard product with the category's positive-coefficient map.
MaskedCondition apply_beta_mask(const ConditionSum& sum,
                                const PositiveBetaMaps& pos);

/// Mean of the image over each atlas region; an empty region yields 0 and a
/// recorded warning. Labels (subject, category, ...) are left for the caller.
FeatureVector pool_atlas_features(const Volume3D& reg, const AtlasVolume& atlas,
                                  std::vector<std::string>* warnings = nullptr);

struct SessionFeatures {
  SessionMeta meta;
  std::string atlas_id;
  std::vector<FeatureVector> rows;  // values + category/condition indices
};

/// Merges per-session rows into one table, attaching subject, session and
/// category-name labels from each session's metadata.
FeatureTable build_feature_table(const std::vector<SessionFeatures>& sessions);

// CSV layout: subject,session,category,condition,f1..fL with shortest
// round-trip decimal floats.
void save_feature_table_csv(const FeatureTable& table,
                            const std::filesystem::path& path);
FeatureTable load_feature_table_csv(const std::filesystem::path& path);

}  // namespace apa
