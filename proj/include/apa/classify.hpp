#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/error.hpp"

namespace apa {

/// Feature rows with labels: {+1, -1} for binary problems, 0..P-1 for
/// multi-class. Rows keep their input order everywhere.
struct LabeledDataset {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t n_features() const { return features.empty() ? 0 : features.front().size(); }
  void validate() const;
};

/// Minority/majority partition of a binary training set. j_parts is the
/// number of majority chunks used by the ensemble, max(1, floor(|large|/|small|)).
struct ClassSplit {
  LabeledDataset small;
  LabeledDataset large;
  int j_parts = 1;
  int small_label = +1;
  int large_label = -1;
};

ClassSplit split_classes(const LabeledDataset& train);

/// Penalty weight 1 - |corr(mean(small rows), mean(large rows))| in [0, 1].
/// A zero-variance mean vector makes the correlation 0 (weight 1) and
/// records a warning.
double penalty_weight(const LabeledDataset& small, const LabeledDataset& large,
                      std::vector<std::string>* warnings = nullptr);

struct TreeConfig {
  int max_depth = 8;
  double min_leaf_weight = 1.0;
};

/// Axis-aligned binary decision tree trained on weighted Gini impurity with
/// midpoint thresholds between sorted distinct feature values. Handles any
/// integer label set, so it doubles as the plain multi-class baseline tree.
class WeightedTree {
public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    int label = 0;
  };

  static WeightedTree train(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels,
                            const std::vector<double>& weights,
                            const TreeConfig& cfg);

  int predict(const std::vector<double>& x) const;
  const std::vector<Node>& nodes() const { return nodes_; }

  nlohmann::json to_json() const;
  static WeightedTree from_json(const nlohmann::json& j);

private:
  std::vector<Node> nodes_;
};

struct EnsembleClassifier {
  std::vector<WeightedTree> members;
  std::size_t n_features = 0;
};

struct BinaryPrediction {
  int label = +1;
  double margin = 0.0;  // (votes_plus - votes_minus) / members
};

/// Per-round introspection of the ensemble training loop, for tests and
/// reports.
struct TrainTrace {
  struct Round {
    std::size_t small_count = 0;
    std::size_t part_count = 0;
    std::size_t carry_count = 0;
    std::vector<double> weights;      // in G_j row order: small, part, carry
    std::size_t misclassified = 0;
  };
  std::vector<std::vector<std::size_t>> large_parts;  // row indices into split.large
  double penalty = 0.0;
  std::vector<Round> rounds;
};

/// Imbalance-aware boosting: the minority class joins every round, the
/// majority class is split into J seeded random chunks, each round adds the
/// previous round's misclassified rows, and majority rows carry the
/// correlation penalty weight. Trains J+1 trees.
EnsembleClassifier train_imbalance_adaboost(const LabeledDataset& train,
                                            const TreeConfig& tree_cfg,
                                            std::uint64_t rng_seed,
                                            TrainTrace* trace = nullptr);

/// Unweighted majority vote; ties go to +1 (the minority side of a
/// one-versus-all problem).
BinaryPrediction predict_binary(const EnsembleClassifier& model,
                                const std::vector<double>& x);

struct EcocConfig {
  TreeConfig tree;
  std::uint64_t seed = 1;
};

/// One-versus-all codebook model: one binary ensemble per category and a
/// P x P codebook with +1 on the diagonal.
struct EcocModel {
  std::vector<EnsembleClassifier> classifiers;
  std::vector<std::vector<int>> codebook;
  std::vector<std::string> categories;
  EcocConfig config;
};

EcocModel train_ecoc_ova(const LabeledDataset& train, const EcocConfig& cfg,
                         const std::vector<std::string>& category_names = {});

/// Nearest codebook row by Hamming distance; ties break on the largest
/// codeword-aligned margin sum, then the lowest row index.
int decode_hamming(const std::vector<std::vector<int>>& codebook,
                   const std::vector<int>& outputs,
                   const std::vector<double>& margins);

struct EcocScores {
  int category = 0;
  std::vector<int> outputs;
  std::vector<double> margins;
  std::vector<double> class_scores;  // codeword-aligned margin sums
};

EcocScores predict_ecoc_scores(const EcocModel& model, const std::vector<double>& x);
int predict_ecoc(const EcocModel& model, const std::vector<double>& x);

void save_ecoc_model(const EcocModel& model, const std::filesystem::path& path);
EcocModel load_ecoc_model(const std::filesystem::path& path);

}  // namespace apa
