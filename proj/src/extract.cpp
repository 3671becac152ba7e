#include "apa/extract.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace apa {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

ConditionImage::ConditionImage(Geometry frame, int category_index,
                               int condition_index, std::size_t n_scans,
                               std::vector<double> data)
    : frame_(frame),
      category_index_(category_index),
      condition_index_(condition_index),
      n_scans_(n_scans),
      data_(std::move(data)) {
  if (n_scans_ == 0) raise(errc::invalid_argument, "condition needs >= 1 scans");
  if (data_.size() != n_scans_ * frame_.n_voxels())
    raise(errc::invalid_argument, "condition data length mismatch");
}

std::vector<std::string> FeatureTable::category_names() const {
  std::map<int, std::string> by_index;
  for (const auto& r : rows) by_index.emplace(r.category_index, r.category_name);
  std::vector<std::string> names;
  names.reserve(by_index.size());
  for (auto& [idx, name] : by_index) names.push_back(name);
  return names;
}

std::vector<ConditionImage> partition_conditions(const Volume4D& data,
                                                 const OnsetTable& onsets,
                                                 double tr, int lag_scans) {
  if (!(tr > 0.0)) raise(errc::invalid_argument, "tr must be positive");
  const std::size_t N = data.n_scans();
  const std::size_t n_vox = data.frame().n_voxels();

  std::vector<int> owner(N, -1);
  std::vector<std::vector<std::size_t>> scans_of(onsets.events.size());
  for (std::size_t e = 0; e < onsets.events.size(); ++e) {
    const auto& ev = onsets.events[e];
    for (std::size_t n = 0; n < N; ++n) {
      double t = (static_cast<double>(n) - lag_scans) * tr;
      if (t >= ev.onset_seconds && t < ev.onset_seconds + ev.duration_seconds) {
        if (owner[n] >= 0)
          raise(errc::invalid_argument,
                "events " + std::to_string(owner[n]) + " and " + std::to_string(e) +
                    " overlap at scan " + std::to_string(n));
        owner[n] = static_cast<int>(e);
        scans_of[e].push_back(n);
      }
    }
    if (scans_of[e].empty())
      raise(errc::invalid_argument,
            "event " + std::to_string(e) + " (t=" + std::to_string(ev.onset_seconds) +
                "s) covers no scans");
  }

  std::vector<std::size_t> order(onsets.events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = onsets.events[a];
    const auto& eb = onsets.events[b];
    return std::pair(ea.category_index, ea.condition_index) <
           std::pair(eb.category_index, eb.condition_index);
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& a = onsets.events[order[i - 1]];
    const auto& b = onsets.events[order[i]];
    if (a.category_index == b.category_index &&
        a.condition_index == b.condition_index)
      raise(errc::invalid_argument,
            "duplicate condition " + std::to_string(a.condition_index) +
                " in category " + std::to_string(a.category_index));
  }

  std::vector<ConditionImage> out;
  out.reserve(order.size());
  for (std::size_t e : order) {
    const auto& ev = onsets.events[e];
    std::vector<double> block(scans_of[e].size() * n_vox);
    for (std::size_t k = 0; k < scans_of[e].size(); ++k)
      std::copy_n(data.scan(scans_of[e][k]), n_vox, block.data() + k * n_vox);
    out.emplace_back(data.frame(), ev.category_index, ev.condition_index,
                     scans_of[e].size(), std::move(block));
  }
  return out;
}

ConditionSum sum_condition(const ConditionImage& cond) {
  const std::size_t n_vox = cond.frame().n_voxels();
  std::vector<double> sum(n_vox, 0.0);
  for (std::size_t k = 0; k < cond.n_scans(); ++k) {
    const double* s = cond.scan(k);
    for (std::size_t v = 0; v < n_vox; ++v) sum[v] += s[v];
  }
  return {cond.category_index(), cond.condition_index(),
          Volume3D(cond.frame(), std::move(sum))};
}

MaskedCondition apply_beta_mask(const ConditionSum& sum,
                                const PositiveBetaMaps& pos) {
  if (sum.category_index < 0 ||
      static_cast<std::size_t>(sum.category_index) >= pos.maps.size())
    raise(errc::invalid_argument,
          "category " + std::to_string(sum.category_index) +
              " has no positive-coefficient map");
  const Volume3D& mask = pos.maps[static_cast<std::size_t>(sum.category_index)];
  if (!(mask.geom() == sum.image.geom()))
    raise(errc::geometry_mismatch, "mask and condition geometry differ");
  std::vector<double> out(mask.data().size());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = mask[v] * sum.image[v];
  return {sum.category_index, sum.condition_index,
          Volume3D(sum.image.geom(), std::move(out))};
}

FeatureVector pool_atlas_features(const Volume3D& reg, const AtlasVolume& atlas,
                                  std::vector<std::string>* warnings) {
  if (!(reg.geom() == atlas.geom()))
    raise(errc::geometry_mismatch, "image and atlas geometry differ");
  const std::size_t L = atlas.n_regions();
  std::vector<double> sums(L, 0.0);
  std::vector<std::size_t> counts(L, 0);
  for (std::size_t v = 0; v < reg.data().size(); ++v) {
    std::uint32_t l = atlas.labels()[v];
    if (l == 0) continue;
    sums[l - 1] += reg[v];
    counts[l - 1]++;
  }
  FeatureVector fv;
  fv.values.resize(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    if (counts[l] == 0) {
      if (warnings)
        warnings->push_back("atlas region " + std::to_string(l + 1) +
                            " is empty; feature set to 0");
      continue;
    }
    fv.values[l] = sums[l] / static_cast<double>(counts[l]);
  }
  return fv;
}

FeatureTable build_feature_table(const std::vector<SessionFeatures>& sessions) {
  if (sessions.empty())
    raise(errc::invalid_argument, "cannot build a feature table from no sessions");
  FeatureTable table;
  table.atlas_id = sessions.front().atlas_id;
  std::size_t width = 0;
  for (const auto& s : sessions) {
    if (s.atlas_id != table.atlas_id)
      raise(errc::invalid_argument, "sessions pooled over different atlases: '" +
                                        s.atlas_id + "' vs '" + table.atlas_id + "'");
    std::vector<char> covered(s.meta.categories.size(), 0);
    for (const auto& row : s.rows)
      if (row.category_index >= 0 &&
          static_cast<std::size_t>(row.category_index) < covered.size())
        covered[static_cast<std::size_t>(row.category_index)] = 1;
    for (std::size_t c = 0; c < covered.size(); ++c)
      if (!covered[c])
        raise(errc::invalid_argument, "session " + s.meta.session_id +
                                          " has no rows for category '" +
                                          s.meta.categories[c] + "'");
    for (const auto& row : s.rows) {
      FeatureVector fv = row;
      fv.subject_id = s.meta.subject_id;
      fv.session_id = s.meta.session_id;
      if (fv.category_index < 0 ||
          static_cast<std::size_t>(fv.category_index) >= s.meta.categories.size())
        raise(errc::invalid_argument, "row category index outside session categories");
      fv.category_name = s.meta.categories[static_cast<std::size_t>(fv.category_index)];
      if (width == 0) width = fv.values.size();
      if (fv.values.size() != width)
        raise(errc::invalid_argument, "feature rows have mixed lengths");
      table.rows.push_back(std::move(fv));
    }
  }
  if (table.rows.empty())
    raise(errc::invalid_argument, "sessions contributed no feature rows");
  return table;
}

void save_feature_table_csv(const FeatureTable& table,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << "subject,session,category,condition";
  for (std::size_t l = 1; l <= table.n_features(); ++l) out << ",f" << l;
  out << '\n';
  for (const auto& r : table.rows) {
    out << r.subject_id << ',' << r.session_id << ',' << r.category_name << ','
        << r.condition_index;
    for (double v : r.values) out << ',' << fmt_double(v);
    out << '\n';
  }
  out << std::flush;
  if (!out) raise(errc::io_failure, "write failed: " + path.string());
}

FeatureTable load_feature_table_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject,session,category,condition", 0) != 0)
    raise(errc::bad_header, "expected feature table header in " + path.string());

  FeatureTable table;
  std::map<std::string, int> cat_index;  // first-appearance order
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5)
      raise(errc::bad_header,
            path.string() + ":" + std::to_string(line_no) + ": too few columns");
    FeatureVector fv;
    fv.subject_id = cells[0];
    fv.session_id = cells[1];
    fv.category_name = cells[2];
    auto it = cat_index.find(fv.category_name);
    if (it == cat_index.end())
      it = cat_index.emplace(fv.category_name, static_cast<int>(cat_index.size())).first;
    fv.category_index = it->second;
    fv.condition_index = std::stoi(cells[3]);
    fv.values.reserve(cells.size() - 4);
    for (std::size_t i = 4; i < cells.size(); ++i) {
      double v = 0.0;
      auto res = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
      if (res.ec != std::errc())
        raise(errc::bad_header, path.string() + ":" + std::to_string(line_no) +
                                    ": bad float '" + cells[i] + "'");
      fv.values.push_back(v);
    }
    if (!table.rows.empty() && fv.values.size() != table.n_features())
      raise(errc::bad_header, path.string() + ":" + std::to_string(line_no) +
                                  ": inconsistent feature count");
    table.rows.push_back(std::move(fv));
  }
  if (table.rows.empty()) raise(errc::bad_header, "no rows in " + path.string());
  return table;
}

}  // namespace apa
