#include "apa/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

namespace apa {

const char* errc_name(errc code) {
  switch (code) {
    case errc::io_failure: return "io_failure";
    case errc::bad_magic: return "bad_magic";
    case errc::bad_header: return "bad_header";
    case errc::payload_size_mismatch: return "payload_size_mismatch";
    case errc::non_finite_payload: return "non_finite_payload";
    case errc::invalid_argument: return "invalid_argument";
    case errc::geometry_mismatch: return "geometry_mismatch";
    case errc::rank_deficient: return "rank_deficient";
    case errc::singular_transform: return "singular_transform";
    case errc::degenerate_input: return "degenerate_input";
    case errc::config_invalid: return "config_invalid";
  }
  return "unknown";
}

namespace {

constexpr char kMagic[6] = {'A', 'P', 'A', 'V', '1', '\0'};
constexpr std::uint8_t kKind3D = 0;
constexpr std::uint8_t kKind4D = 1;
constexpr std::uint8_t kKindAtlas = 2;

void check_geometry(const Geometry& g) {
  if (g.dims[0] == 0 || g.dims[1] == 0 || g.dims[2] == 0)
    raise(errc::invalid_argument, "volume dims must be positive");
  for (double s : g.spacing)
    if (!(s > 0.0) || !std::isfinite(s))
      raise(errc::invalid_argument, "voxel spacing must be positive and finite");
}

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

struct Header {
  std::uint8_t kind = 0;
  Geometry geom;
  std::uint32_t n_scans = 1;
};

void write_header(std::ostream& out, const Header& h) {
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, h.kind);
  for (std::size_t d : h.geom.dims) write_raw(out, static_cast<std::uint32_t>(d));
  write_raw(out, h.n_scans);
  for (double s : h.geom.spacing) write_raw(out, static_cast<float>(s));
}

Header read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    raise(errc::bad_magic, "not an APAV1 volume file: " + path.string());

  Header h;
  h.kind = read_raw<std::uint8_t>(in);
  for (auto& d : h.geom.dims) d = read_raw<std::uint32_t>(in);
  h.n_scans = read_raw<std::uint32_t>(in);
  for (auto& s : h.geom.spacing) s = read_raw<float>(in);
  if (!in) raise(errc::bad_header, "truncated header: " + path.string());
  if (h.kind > kKindAtlas)
    raise(errc::bad_header, "unknown volume kind in " + path.string());
  if (h.geom.dims[0] == 0 || h.geom.dims[1] == 0 || h.geom.dims[2] == 0 ||
      h.n_scans == 0)
    raise(errc::bad_header, "zero dimension in header: " + path.string());
  for (double s : h.geom.spacing)
    if (!(s > 0.0) || !std::isfinite(s))
      raise(errc::bad_header, "non-positive spacing in header: " + path.string());
  return h;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  return out;
}

void write_f32_payload(std::ostream& out, const std::vector<double>& data,
                       const std::filesystem::path& path) {
  std::vector<float> buf(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]))
      raise(errc::non_finite_payload,
            "non-finite value at sample " + std::to_string(i) + " while writing " +
                path.string());
    buf[i] = static_cast<float>(data[i]);
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::size_t payload_count(std::istream& in, std::size_t elem_size,
                          const std::filesystem::path& path,
                          std::size_t expected) {
  auto pos = in.tellg();
  in.seekg(0, std::ios::end);
  auto end = in.tellg();
  in.seekg(pos);
  std::size_t bytes = static_cast<std::size_t>(end - pos);
  if (bytes != expected * elem_size)
    raise(errc::payload_size_mismatch,
          "payload of " + path.string() + " holds " +
              std::to_string(bytes / elem_size) + " samples, expected " +
              std::to_string(expected));
  return expected;
}

std::vector<double> read_f32_payload(std::istream& in, std::size_t count,
                                     const std::filesystem::path& path) {
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) raise(errc::io_failure, "short read: " + path.string());
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(buf[i]))
      raise(errc::non_finite_payload,
            "non-finite value at sample " + std::to_string(i) + " in " +
                path.string());
    data[i] = buf[i];
  }
  return data;
}

}  // namespace

Volume3D::Volume3D(Geometry geom, std::vector<double> data)
    : geom_(geom), data_(std::move(data)) {
  check_geometry(geom_);
  if (data_.size() != geom_.n_voxels())
    raise(errc::invalid_argument,
          "Volume3D data length " + std::to_string(data_.size()) +
              " does not match dims (" + std::to_string(geom_.n_voxels()) + ")");
}

Volume3D Volume3D::zeros(const Geometry& geom) {
  return Volume3D(geom, std::vector<double>(geom.n_voxels(), 0.0));
}

Volume4D::Volume4D(Geometry frame, std::size_t n_scans, std::vector<double> data)
    : frame_(frame), n_scans_(n_scans), data_(std::move(data)) {
  check_geometry(frame_);
  if (n_scans_ == 0) raise(errc::invalid_argument, "Volume4D needs n_scans >= 1");
  if (data_.size() != n_scans_ * frame_.n_voxels())
    raise(errc::invalid_argument,
          "Volume4D data length " + std::to_string(data_.size()) +
              " does not match n_scans * n_voxels");
}

Volume3D Volume4D::scan_volume(std::size_t k) const {
  if (k >= n_scans_) raise(errc::invalid_argument, "scan index out of range");
  const double* p = scan(k);
  return Volume3D(frame_, std::vector<double>(p, p + frame_.n_voxels()));
}

AtlasVolume::AtlasVolume(Geometry geom, std::vector<std::uint32_t> labels,
                         std::uint32_t n_regions)
    : geom_(geom), labels_(std::move(labels)), n_regions_(n_regions) {
  check_geometry(geom_);
  if (labels_.size() != geom_.n_voxels())
    raise(errc::invalid_argument, "AtlasVolume label count does not match dims");
  std::uint32_t max_label = 0;
  for (std::uint32_t l : labels_) max_label = std::max(max_label, l);
  if (n_regions_ == 0) {
    n_regions_ = max_label;
  } else if (max_label > n_regions_) {
    raise(errc::invalid_argument,
          "atlas label " + std::to_string(max_label) + " exceeds n_regions " +
              std::to_string(n_regions_));
  }
}

std::vector<std::array<std::size_t, 3>> region_index(const AtlasVolume& atlas,
                                                     std::uint32_t l) {
  if (l < 1 || l > atlas.n_regions())
    raise(errc::invalid_argument,
          "region id " + std::to_string(l) + " outside 1.." +
              std::to_string(atlas.n_regions()));
  const auto& g = atlas.geom();
  std::vector<std::array<std::size_t, 3>> out;
  for (std::size_t z = 0; z < g.dims[2]; ++z)
    for (std::size_t y = 0; y < g.dims[1]; ++y)
      for (std::size_t x = 0; x < g.dims[0]; ++x)
        if (atlas.label_at(x, y, z) == l) out.push_back({x, y, z});
  std::sort(out.begin(), out.end());
  return out;
}

void save_volume(const Volume3D& vol, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, Header{kKind3D, vol.geom(), 1});
  write_f32_payload(out, vol.data(), path);
  if (!out) raise(errc::io_failure, "write failed: " + path.string());
}

void save_volume(const Volume4D& vol, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, Header{kKind4D, vol.frame(),
                           static_cast<std::uint32_t>(vol.n_scans())});
  write_f32_payload(out, vol.data(), path);
  if (!out) raise(errc::io_failure, "write failed: " + path.string());
}

void save_volume(const AtlasVolume& vol, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_header(out, Header{kKindAtlas, vol.geom(), 1});
  out.write(reinterpret_cast<const char*>(vol.labels().data()),
            static_cast<std::streamsize>(vol.labels().size() * sizeof(std::uint32_t)));
  if (!out) raise(errc::io_failure, "write failed: " + path.string());
}

void save_volume(const AnyVolume& vol, const std::filesystem::path& path) {
  std::visit([&](const auto& v) { save_volume(v, path); }, vol);
}

AnyVolume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  Header h = read_header(in, path);

  if (h.kind == kKindAtlas) {
    std::size_t count = payload_count(in, sizeof(std::uint32_t), path,
                                      h.geom.n_voxels());
    std::vector<std::uint32_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()),
            static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    if (!in) raise(errc::io_failure, "short read: " + path.string());
    return AtlasVolume(h.geom, std::move(labels));
  }

  std::size_t n_scans = (h.kind == kKind4D) ? h.n_scans : 1;
  std::size_t count =
      payload_count(in, sizeof(float), path, n_scans * h.geom.n_voxels());
  auto data = read_f32_payload(in, count, path);
  if (h.kind == kKind4D) return Volume4D(h.geom, n_scans, std::move(data));
  return Volume3D(h.geom, std::move(data));
}

namespace {
template <typename T>
T load_kind(const std::filesystem::path& path, const char* what) {
  AnyVolume v = load_volume(path);
  if (auto* p = std::get_if<T>(&v)) return std::move(*p);
  raise(errc::bad_header, path.string() + " does not hold a " + what);
}
}  // namespace

Volume3D load_volume3d(const std::filesystem::path& path) {
  return load_kind<Volume3D>(path, "3D volume");
}
Volume4D load_volume4d(const std::filesystem::path& path) {
  return load_kind<Volume4D>(path, "4D volume");
}
AtlasVolume load_atlas(const std::filesystem::path& path) {
  return load_kind<AtlasVolume>(path, "label atlas");
}

SessionMeta load_session_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, "bad session meta " + path.string() + ": " + e.what());
  }
  SessionMeta m;
  try {
    m.subject_id = j.at("subject_id").get<std::string>();
    m.session_id = j.at("session_id").get<std::string>();
    m.tr_seconds = j.at("tr_seconds").get<double>();
    m.categories = j.at("categories").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, "bad session meta " + path.string() + ": " + e.what());
  }
  if (!(m.tr_seconds > 0.0))
    raise(errc::bad_header, "tr_seconds must be positive in " + path.string());
  std::vector<std::string> names = m.categories;
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    raise(errc::bad_header, "duplicate category name in " + path.string());
  return m;
}

void save_session_meta(const SessionMeta& meta, const std::filesystem::path& path) {
  nlohmann::json j{{"subject_id", meta.subject_id},
                   {"session_id", meta.session_id},
                   {"tr_seconds", meta.tr_seconds},
                   {"categories", meta.categories}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace apa
