#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "apa/error.hpp"

namespace apa {

/// Grid shape shared by all volume types: dims (nx, ny, nz) and voxel
/// spacing in millimeters. Sample order in memory and on disk is x-fastest.
struct Geometry {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  std::size_t n_voxels() const { return dims[0] * dims[1] * dims[2]; }
  bool operator==(const Geometry&) const = default;
};

inline std::size_t voxel_offset(const Geometry& g, std::size_t x, std::size_t y,
                                std::size_t z) {
  return x + g.dims[0] * (y + g.dims[1] * z);
}

/// Dense scalar 3D grid. Immutable after construction.
class Volume3D {
public:
  Volume3D() = default;
  Volume3D(Geometry geom, std::vector<double> data);
  static Volume3D zeros(const Geometry& geom);

  const Geometry& geom() const { return geom_; }
  const std::vector<double>& data() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[voxel_offset(geom_, x, y, z)];
  }

private:
  Geometry geom_;
  std::vector<double> data_;
};

/// Time series of scans sharing one frame geometry. Scan-major layout:
/// scan k occupies [k * n_voxels, (k + 1) * n_voxels).
class Volume4D {
public:
  Volume4D() = default;
  Volume4D(Geometry frame, std::size_t n_scans, std::vector<double> data);

  const Geometry& frame() const { return frame_; }
  std::size_t n_scans() const { return n_scans_; }
  const std::vector<double>& data() const { return data_; }
  const double* scan(std::size_t k) const {
    return data_.data() + k * frame_.n_voxels();
  }
  Volume3D scan_volume(std::size_t k) const;

private:
  Geometry frame_;
  std::size_t n_scans_ = 0;
  std::vector<double> data_;
};

/// Integer-labeled grid; label 0 is background, 1..n_regions are region ids.
/// Region label sets are disjoint by construction (one label per voxel).
class AtlasVolume {
public:
  AtlasVolume() = default;
  /// n_regions 0 means "derive from the payload" (max label).
  AtlasVolume(Geometry geom, std::vector<std::uint32_t> labels,
              std::uint32_t n_regions = 0);

  const Geometry& geom() const { return geom_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }
  std::uint32_t n_regions() const { return n_regions_; }
  std::uint32_t label_at(std::size_t x, std::size_t y, std::size_t z) const {
    return labels_[voxel_offset(geom_, x, y, z)];
  }

private:
  Geometry geom_;
  std::vector<std::uint32_t> labels_;
  std::uint32_t n_regions_ = 0;
};

/// All voxel indices [x,y,z] carrying region label l, sorted
/// lexicographically by (x, y, z). l must be in 1..n_regions.
std::vector<std::array<std::size_t, 3>> region_index(const AtlasVolume& atlas,
                                                     std::uint32_t l);

struct SessionMeta {
  std::string subject_id;
  std::string session_id;
  double tr_seconds = 0.0;
  std::vector<std::string> categories;
};

SessionMeta load_session_meta(const std::filesystem::path& path);
void save_session_meta(const SessionMeta& meta, const std::filesystem::path& path);

// Binary volume file: magic "APAV1\0", u8 kind (0 = 3D, 1 = 4D, 2 = atlas),
// u32 nx, ny, nz, u32 n_scans (1 unless 4D), f32 sx, sy, sz, then the payload
// as f32 (u32 for atlas), everything little-endian. Scalars are widened to
// f64 in memory.
using AnyVolume = std::variant<Volume3D, Volume4D, AtlasVolume>;

AnyVolume load_volume(const std::filesystem::path& path);
void save_volume(const Volume3D& vol, const std::filesystem::path& path);
void save_volume(const Volume4D& vol, const std::filesystem::path& path);
void save_volume(const AtlasVolume& vol, const std::filesystem::path& path);
void save_volume(const AnyVolume& vol, const std::filesystem::path& path);

// Kind-checked loads; throw bad_header if the file holds a different kind.
Volume3D load_volume3d(const std::filesystem::path& path);
Volume4D load_volume4d(const std::filesystem::path& path);
AtlasVolume load_atlas(const std::filesystem::path& path);

}  // namespace apa
