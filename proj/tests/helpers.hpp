#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& suffix) {
  auto p = std::filesystem::temp_directory_path() / ("apa_test_" + suffix);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Uniform doubles that are exactly representable as f32, for bitwise
/// round-trip checks through the on-disk format.
inline std::vector<double> random_f32_values(std::size_t n, std::uint64_t seed,
                                             double lo = -10.0, double hi = 10.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(static_cast<float>(lo),
                                             static_cast<float>(hi));
  std::vector<double> out(n);
  for (auto& v : out) v = static_cast<double>(dist(rng));
  return out;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

inline std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace testutil
