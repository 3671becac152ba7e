#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "apa/classify.hpp"
#include "apa/extract.hpp"

namespace apa {

struct CvFold {
  std::vector<std::string> train_subjects;
  std::string held_out;
};

struct CvPlan {
  std::vector<CvFold> folds;
};

/// Leave-one-subject-out plan; fold order follows sorted subject ids.
CvPlan make_loo_plan(const FeatureTable& table);

/// Percent of matching positions.
double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

/// Area under the ROC curve as the Mann-Whitney statistic, in percent:
/// the fraction of (positive, negative) pairs ordered correctly, ties at 1/2.
/// truth uses +1 / -1.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& truth);

/// Pairwise Pearson correlation matrix of the table's feature rows.
/// A zero-variance row correlates 0 with everything and records a warning.
std::vector<std::vector<double>> correlation_matrix(
    const FeatureTable& table, std::vector<std::string>* warnings = nullptr);

void save_matrix_csv(const std::vector<std::vector<double>>& m,
                     const std::filesystem::path& path);

struct FoldResult {
  std::string held_out;
  double accuracy = 0.0;
  double auc = 0.0;            // macro one-vs-all over class scores
  bool auc_defined = false;
  std::vector<std::vector<long long>> confusion;  // truth x predicted
  std::vector<int> truth, predicted;
  std::vector<std::vector<double>> class_scores;  // per test row
};

/// Cross-validated metrics. Accuracy/AUC are percent, aggregated as
/// unweighted mean +- population std over folds. The multi-class AUC is a
/// macro-averaged one-vs-all extension over codeword-aligned margin sums and
/// is flagged as such in the report.
struct MetricsReport {
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double auc_mean = 0.0, auc_std = 0.0;
  bool auc_is_macro_ova_extension = true;
  std::vector<std::vector<long long>> confusion;  // summed over folds
  std::vector<std::string> categories;
  std::vector<FoldResult> folds;
  std::vector<std::string> warnings;
};

/// Trains one model per fold on the training subjects and scores the
/// held-out subject's rows.
MetricsReport evaluate_loo(const FeatureTable& table, const EcocConfig& cfg);

nlohmann::json report_to_json(const MetricsReport& report);
void save_report_json(const MetricsReport& report, const std::filesystem::path& path);
std::string report_to_text(const MetricsReport& report);

}  // namespace apa
