#include "apa/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "apa/parallel.hpp"

namespace apa {

void LabeledDataset::validate() const {
  if (features.size() != labels.size())
    raise(errc::invalid_argument, "feature row count does not match label count");
  std::size_t width = n_features();
  for (const auto& row : features) {
    if (row.size() != width)
      raise(errc::invalid_argument, "feature rows have mixed lengths");
    for (double v : row)
      if (!std::isfinite(v))
        raise(errc::invalid_argument, "non-finite feature value");
  }
}

ClassSplit split_classes(const LabeledDataset& train) {
  train.validate();
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : train.labels) {
    if (l == +1)
      ++n_pos;
    else if (l == -1)
      ++n_neg;
    else
      raise(errc::invalid_argument,
            "binary labels must be +1 or -1, got " + std::to_string(l));
  }
  if (n_pos == 0 || n_neg == 0)
    raise(errc::invalid_argument, "both classes must be present");

  ClassSplit split;
  // tie goes to +1 as the small class
  split.small_label = (n_pos <= n_neg) ? +1 : -1;
  split.large_label = -split.small_label;
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto& side = (train.labels[i] == split.small_label) ? split.small : split.large;
    side.features.push_back(train.features[i]);
    side.labels.push_back(train.labels[i]);
  }
  split.j_parts = std::max<int>(
      1, static_cast<int>(split.large.size() / split.small.size()));
  return split;
}

namespace {

std::vector<double> mean_row(const LabeledDataset& d) {
  std::vector<double> m(d.n_features(), 0.0);
  for (const auto& row : d.features)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += row[i];
  for (double& v : m) v /= static_cast<double>(d.size());
  return m;
}

}  // namespace

double penalty_weight(const LabeledDataset& small, const LabeledDataset& large,
                      std::vector<std::string>* warnings) {
  if (small.size() == 0 || large.size() == 0)
    raise(errc::invalid_argument, "penalty weight needs non-empty classes");
  if (small.n_features() != large.n_features())
    raise(errc::invalid_argument, "classes have different feature widths");

  auto a = mean_row(small);
  auto b = mean_row(large);
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) {
    if (warnings)
      warnings->push_back("zero-variance class mean vector; penalty weight set to 1");
    return 1.0;
  }
  double corr = cov / std::sqrt(va * vb);
  return 1.0 - std::min(1.0, std::abs(corr));
}

// ---------------------------------------------------------------------------
// decision tree

namespace {

struct LabelMap {
  std::vector<int> values;  // sorted distinct labels
  std::size_t index_of(int label) const {
    return static_cast<std::size_t>(
        std::lower_bound(values.begin(), values.end(), label) - values.begin());
  }
};

double gini(const std::vector<double>& class_weight, double total) {
  double g = 1.0;
  for (double w : class_weight) {
    double p = w / total;
    g -= p * p;
  }
  return g;
}

}  // namespace

WeightedTree WeightedTree::train(const std::vector<std::vector<double>>& features,
                                 const std::vector<int>& labels,
                                 const std::vector<double>& weights,
                                 const TreeConfig& cfg) {
  if (features.empty() || features.size() != labels.size() ||
      features.size() != weights.size())
    raise(errc::invalid_argument, "tree training needs matching rows/labels/weights");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      raise(errc::invalid_argument, "tree weights must be finite and >= 0");

  LabelMap lm;
  lm.values.assign(labels.begin(), labels.end());
  std::sort(lm.values.begin(), lm.values.end());
  lm.values.erase(std::unique(lm.values.begin(), lm.values.end()), lm.values.end());
  const std::size_t n_classes = lm.values.size();
  const std::size_t n_feat = features.front().size();

  WeightedTree tree;

  // returns the node index; builds depth-first
  auto build = [&](auto&& self, std::vector<std::size_t> rows, int depth) -> int {
    std::vector<double> cw(n_classes, 0.0);
    double total = 0.0;
    for (std::size_t r : rows) {
      cw[lm.index_of(labels[r])] += weights[r];
      total += weights[r];
    }

    // leaf label: heaviest class, ties to the larger label value
    std::size_t best_c = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (cw[c] >= cw[best_c]) best_c = c;
    Node leaf;
    leaf.label = lm.values[best_c];

    bool pure = false;
    for (std::size_t c = 0; c < n_classes; ++c)
      if (cw[c] == total && total > 0.0) pure = true;

    if (pure || depth >= cfg.max_depth || total < 2.0 * cfg.min_leaf_weight ||
        rows.size() < 2) {
      tree.nodes_.push_back(leaf);
      return static_cast<int>(tree.nodes_.size() - 1);
    }

    double parent_gini = gini(cw, total);
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_decrease = 1e-12;

    std::vector<std::pair<double, std::size_t>> order(rows.size());
    for (std::size_t f = 0; f < n_feat; ++f) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        order[i] = {features[rows[i]][f], rows[i]};
      std::sort(order.begin(), order.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });

      std::vector<double> left_cw(n_classes, 0.0);
      double left_total = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        std::size_t r = order[i].second;
        left_cw[lm.index_of(labels[r])] += weights[r];
        left_total += weights[r];
        if (order[i].first == order[i + 1].first) continue;  // no boundary here
        double right_total = total - left_total;
        if (left_total < cfg.min_leaf_weight || right_total < cfg.min_leaf_weight)
          continue;
        std::vector<double> right_cw(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) right_cw[c] = cw[c] - left_cw[c];
        double decrease = parent_gini -
                          (left_total / total) * gini(left_cw, left_total) -
                          (right_total / total) * gini(right_cw, right_total);
        if (decrease > best_decrease) {
          best_decrease = decrease;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (order[i].first + order[i + 1].first);
        }
      }
    }

    if (best_feature < 0) {
      tree.nodes_.push_back(leaf);
      return static_cast<int>(tree.nodes_.size() - 1);
    }

    std::vector<std::size_t> left_rows, right_rows;
    for (std::size_t r : rows) {
      if (features[r][static_cast<std::size_t>(best_feature)] <= best_threshold)
        left_rows.push_back(r);
      else
        right_rows.push_back(r);
    }

    Node node;
    node.feature = best_feature;
    node.threshold = best_threshold;
    tree.nodes_.push_back(node);
    int self_idx = static_cast<int>(tree.nodes_.size() - 1);
    int left = self(self, std::move(left_rows), depth + 1);
    int right = self(self, std::move(right_rows), depth + 1);
    tree.nodes_[static_cast<std::size_t>(self_idx)].left = left;
    tree.nodes_[static_cast<std::size_t>(self_idx)].right = right;
    return self_idx;
  };

  std::vector<std::size_t> all(features.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  build(build, std::move(all), 0);
  return tree;
}

int WeightedTree::predict(const std::vector<double>& x) const {
  if (nodes_.empty()) raise(errc::invalid_argument, "empty tree");
  int idx = 0;
  for (;;) {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.feature < 0) return n.label;
    if (static_cast<std::size_t>(n.feature) >= x.size())
      raise(errc::invalid_argument, "feature vector shorter than tree expects");
    idx = (x[static_cast<std::size_t>(n.feature)] <= n.threshold) ? n.left : n.right;
  }
}

nlohmann::json WeightedTree::to_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : nodes_)
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
  return nlohmann::json{{"nodes", nodes}};
}

WeightedTree WeightedTree::from_json(const nlohmann::json& j) {
  WeightedTree t;
  try {
    for (const auto& row : j.at("nodes")) {
      Node n;
      n.feature = row.at(0).get<int>();
      n.threshold = row.at(1).get<double>();
      n.left = row.at(2).get<int>();
      n.right = row.at(3).get<int>();
      n.label = row.at(4).get<int>();
      t.nodes_.push_back(n);
    }
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, std::string("bad tree JSON: ") + e.what());
  }
  if (t.nodes_.empty()) raise(errc::bad_header, "tree JSON holds no nodes");
  return t;
}

// ---------------------------------------------------------------------------
// imbalance boosting

namespace {

// explicit Fisher-Yates so shuffles are stable across standard libraries
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

EnsembleClassifier train_imbalance_adaboost(const LabeledDataset& train,
                                            const TreeConfig& tree_cfg,
                                            std::uint64_t rng_seed,
                                            TrainTrace* trace) {
  ClassSplit split = split_classes(train);
  if (split.small.size() < 2 || split.large.size() < 2)
    raise(errc::invalid_argument, "need at least 2 samples per class");

  const int J = split.j_parts;
  double penalty = penalty_weight(split.small, split.large);

  std::mt19937_64 rng(rng_seed);
  auto perm = shuffled_indices(split.large.size(), rng);
  std::vector<std::vector<std::size_t>> parts(static_cast<std::size_t>(J));
  {
    std::size_t base = split.large.size() / static_cast<std::size_t>(J);
    std::size_t rem = split.large.size() % static_cast<std::size_t>(J);
    std::size_t cursor = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      std::size_t take = base + (p < rem ? 1 : 0);
      parts[p].assign(perm.begin() + cursor, perm.begin() + cursor + take);
      cursor += take;
    }
  }

  if (trace) {
    trace->large_parts = parts;
    trace->penalty = penalty;
    trace->rounds.clear();
  }

  EnsembleClassifier model;
  model.n_features = train.n_features();
  std::vector<std::vector<double>> carry_features;
  std::vector<int> carry_labels;

  for (int j = 0; j <= J; ++j) {
    std::vector<std::vector<double>> gf;
    std::vector<int> gl;
    std::vector<double> gw;

    for (std::size_t i = 0; i < split.small.size(); ++i) {
      gf.push_back(split.small.features[i]);
      gl.push_back(split.small_label);
      gw.push_back(1.0);
    }
    std::size_t part_count = 0;
    if (j < J) {
      for (std::size_t r : parts[static_cast<std::size_t>(j)]) {
        gf.push_back(split.large.features[r]);
        gl.push_back(split.large_label);
        gw.push_back(penalty);
      }
      part_count = parts[static_cast<std::size_t>(j)].size();
    }
    for (std::size_t i = 0; i < carry_labels.size(); ++i) {
      gf.push_back(carry_features[i]);
      gl.push_back(carry_labels[i]);
      gw.push_back(1.0);
    }

    WeightedTree tree = WeightedTree::train(gf, gl, gw, tree_cfg);

    std::vector<std::vector<double>> next_carry_features;
    std::vector<int> next_carry_labels;
    for (std::size_t i = 0; i < gl.size(); ++i) {
      if (tree.predict(gf[i]) != gl[i]) {
        next_carry_features.push_back(gf[i]);
        next_carry_labels.push_back(gl[i]);
      }
    }

    if (trace) {
      TrainTrace::Round round;
      round.small_count = split.small.size();
      round.part_count = part_count;
      round.carry_count = carry_labels.size();
      round.weights = gw;
      round.misclassified = next_carry_labels.size();
      trace->rounds.push_back(std::move(round));
    }

    model.members.push_back(std::move(tree));
    carry_features = std::move(next_carry_features);
    carry_labels = std::move(next_carry_labels);
  }
  return model;
}

BinaryPrediction predict_binary(const EnsembleClassifier& model,
                                const std::vector<double>& x) {
  if (model.members.empty()) raise(errc::invalid_argument, "empty ensemble");
  if (x.size() != model.n_features)
    raise(errc::invalid_argument,
          "feature vector length " + std::to_string(x.size()) +
              " does not match training width " + std::to_string(model.n_features));
  int plus = 0, minus = 0;
  for (const auto& tree : model.members)
    (tree.predict(x) == +1 ? plus : minus)++;
  BinaryPrediction out;
  out.margin = static_cast<double>(plus - minus) /
               static_cast<double>(model.members.size());
  out.label = (plus >= minus) ? +1 : -1;
  return out;
}

// ---------------------------------------------------------------------------
// one-versus-all ECOC

EcocModel train_ecoc_ova(const LabeledDataset& train, const EcocConfig& cfg,
                         const std::vector<std::string>& category_names) {
  train.validate();
  int max_label = -1;
  for (int l : train.labels) {
    if (l < 0)
      raise(errc::invalid_argument, "multi-class labels must be 0..P-1");
    max_label = std::max(max_label, l);
  }
  const int P = max_label + 1;
  if (P < 2) raise(errc::invalid_argument, "need at least 2 classes");

  auto class_name = [&](int p) {
    if (static_cast<std::size_t>(p) < category_names.size())
      return category_names[static_cast<std::size_t>(p)];
    return "class " + std::to_string(p);
  };
  std::vector<std::size_t> counts(static_cast<std::size_t>(P), 0);
  for (int l : train.labels) counts[static_cast<std::size_t>(l)]++;
  for (int p = 0; p < P; ++p)
    if (counts[static_cast<std::size_t>(p)] < 2)
      raise(errc::invalid_argument,
            "category '" + class_name(p) + "' has fewer than 2 samples");

  EcocModel model;
  model.config = cfg;
  model.categories.resize(static_cast<std::size_t>(P));
  for (int p = 0; p < P; ++p)
    model.categories[static_cast<std::size_t>(p)] = class_name(p);
  model.codebook.assign(static_cast<std::size_t>(P),
                        std::vector<int>(static_cast<std::size_t>(P), -1));
  for (int p = 0; p < P; ++p)
    model.codebook[static_cast<std::size_t>(p)][static_cast<std::size_t>(p)] = +1;

  model.classifiers.resize(static_cast<std::size_t>(P));
  parallel_for(static_cast<std::size_t>(P), [&](std::size_t p) {
    LabeledDataset binary;
    binary.features = train.features;
    binary.labels.resize(train.labels.size());
    for (std::size_t i = 0; i < train.labels.size(); ++i)
      binary.labels[i] = (train.labels[i] == static_cast<int>(p)) ? +1 : -1;
    std::uint64_t seed = cfg.seed ^ (0x9E3779B97F4A7C15ULL * (p + 1));
    model.classifiers[p] = train_imbalance_adaboost(binary, cfg.tree, seed);
  });
  return model;
}

int decode_hamming(const std::vector<std::vector<int>>& codebook,
                   const std::vector<int>& outputs,
                   const std::vector<double>& margins) {
  if (codebook.empty()) raise(errc::invalid_argument, "empty codebook");
  if (outputs.size() != codebook.front().size() || margins.size() != outputs.size())
    raise(errc::invalid_argument, "output vector does not match codebook width");

  int best = -1;
  int best_dist = std::numeric_limits<int>::max();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < codebook.size(); ++p) {
    int dist = 0;
    double score = 0.0;
    for (std::size_t q = 0; q < outputs.size(); ++q) {
      if (codebook[p][q] != outputs[q]) ++dist;
      score += codebook[p][q] * margins[q];
    }
    if (dist < best_dist || (dist == best_dist && score > best_score)) {
      best = static_cast<int>(p);
      best_dist = dist;
      best_score = score;
    }
  }
  return best;
}

EcocScores predict_ecoc_scores(const EcocModel& model, const std::vector<double>& x) {
  const std::size_t P = model.classifiers.size();
  if (P == 0) raise(errc::invalid_argument, "empty ECOC model");
  EcocScores s;
  s.outputs.resize(P);
  s.margins.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    BinaryPrediction bp = predict_binary(model.classifiers[p], x);
    s.outputs[p] = bp.label;
    s.margins[p] = bp.margin;
  }
  s.class_scores.resize(P, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < P; ++q)
      s.class_scores[p] += model.codebook[p][q] * s.margins[q];
  s.category = decode_hamming(model.codebook, s.outputs, s.margins);
  return s;
}

int predict_ecoc(const EcocModel& model, const std::vector<double>& x) {
  return predict_ecoc_scores(model, x).category;
}

void save_ecoc_model(const EcocModel& model, const std::filesystem::path& path) {
  nlohmann::json classifiers = nlohmann::json::array();
  for (const auto& ens : model.classifiers) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : ens.members) trees.push_back(t.to_json());
    classifiers.push_back({{"trees", trees}, {"n_features", ens.n_features}});
  }
  nlohmann::json j{
      {"categories", model.categories},
      {"codebook", model.codebook},
      {"classifiers", classifiers},
      {"config",
       {{"seed", model.config.seed},
        {"max_depth", model.config.tree.max_depth},
        {"min_leaf_weight", model.config.tree.min_leaf_weight}}}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

EcocModel load_ecoc_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, "bad model file " + path.string() + ": " + e.what());
  }
  EcocModel model;
  try {
    model.categories = j.at("categories").get<std::vector<std::string>>();
    model.codebook = j.at("codebook").get<std::vector<std::vector<int>>>();
    for (const auto& c : j.at("classifiers")) {
      EnsembleClassifier ens;
      ens.n_features = c.at("n_features").get<std::size_t>();
      for (const auto& t : c.at("trees")) ens.members.push_back(WeightedTree::from_json(t));
      model.classifiers.push_back(std::move(ens));
    }
    model.config.seed = j.at("config").at("seed").get<std::uint64_t>();
    model.config.tree.max_depth = j.at("config").at("max_depth").get<int>();
    model.config.tree.min_leaf_weight =
        j.at("config").at("min_leaf_weight").get<double>();
  } catch (const nlohmann::json::exception& e) {
    raise(errc::bad_header, "bad model file " + path.string() + ": " + e.what());
  }
  if (model.classifiers.size() != model.codebook.size() ||
      model.classifiers.size() != model.categories.size())
    raise(errc::bad_header, "inconsistent model file " + path.string());
  return model;
}

}  // namespace apa
