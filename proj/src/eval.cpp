#include "apa/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace apa {

CvPlan make_loo_plan(const FeatureTable& table) {
  std::set<std::string> subjects;
  for (const auto& r : table.rows) subjects.insert(r.subject_id);
  if (subjects.size() < 2)
    raise(errc::invalid_argument,
          "leave-one-out needs at least 2 subjects, found " +
              std::to_string(subjects.size()));
  CvPlan plan;
  for (const auto& held : subjects) {
    CvFold fold;
    fold.held_out = held;
    for (const auto& s : subjects)
      if (s != held) fold.train_subjects.push_back(s);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    raise(errc::invalid_argument, "prediction/truth length mismatch");
  if (pred.empty()) raise(errc::invalid_argument, "empty prediction set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pred.size());
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size())
    raise(errc::invalid_argument, "score/truth length mismatch");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == +1)
      pos.push_back(scores[i]);
    else if (truth[i] == -1)
      neg.push_back(scores[i]);
    else
      raise(errc::invalid_argument, "AUC truth labels must be +1 or -1");
  }
  if (pos.empty() || neg.empty())
    raise(errc::invalid_argument, "AUC needs both classes present");

  // O(n log n) via ranks; equals the all-pairs count with ties at 1/2
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double s : pos) {
    auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    auto hi = std::upper_bound(neg.begin(), neg.end(), s);
    wins += static_cast<double>(lo - neg.begin());
    wins += 0.5 * static_cast<double>(hi - lo);
  }
  return 100.0 * wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<std::vector<double>> correlation_matrix(
    const FeatureTable& table, std::vector<std::string>* warnings) {
  const std::size_t n = table.rows.size();
  if (n < 2) raise(errc::invalid_argument, "correlation matrix needs >= 2 rows");
  const std::size_t w = table.n_features();

  std::vector<double> mean(n, 0.0), norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& v = table.rows[i].values;
    for (double x : v) mean[i] += x;
    mean[i] /= static_cast<double>(w);
    for (double x : v) norm[i] += (x - mean[i]) * (x - mean[i]);
    if (norm[i] <= 0.0 && warnings)
      warnings->push_back("row " + std::to_string(i) +
                          " has zero variance; correlations set to 0");
  }

  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    m[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norm[i] <= 0.0 || norm[j] <= 0.0) continue;
      double cov = 0.0;
      const auto& a = table.rows[i].values;
      const auto& b = table.rows[j].values;
      for (std::size_t k = 0; k < w; ++k)
        cov += (a[k] - mean[i]) * (b[k] - mean[j]);
      m[i][j] = m[j][i] = cov / std::sqrt(norm[i] * norm[j]);
    }
  }
  return m;
}

void save_matrix_csv(const std::vector<std::vector<double>>& m,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof(buf), row[j]);
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

MetricsReport evaluate_loo(const FeatureTable& table, const EcocConfig& cfg) {
  CvPlan plan = make_loo_plan(table);
  MetricsReport report;
  report.categories = table.category_names();
  const std::size_t P = report.categories.size();
  if (P < 2) raise(errc::invalid_argument, "need at least 2 categories to evaluate");
  report.confusion.assign(P, std::vector<long long>(P, 0));

  for (const auto& fold : plan.folds) {
    LabeledDataset train;
    std::vector<const FeatureVector*> test_rows;
    for (const auto& r : table.rows) {
      if (r.subject_id == fold.held_out) {
        test_rows.push_back(&r);
      } else {
        train.features.push_back(r.values);
        train.labels.push_back(r.category_index);
      }
    }
    if (test_rows.empty())
      raise(errc::invalid_argument, "fold has no test rows for " + fold.held_out);

    EcocModel model = train_ecoc_ova(train, cfg, report.categories);

    FoldResult fr;
    fr.held_out = fold.held_out;
    fr.confusion.assign(P, std::vector<long long>(P, 0));
    for (const auto* row : test_rows) {
      EcocScores s = predict_ecoc_scores(model, row->values);
      fr.truth.push_back(row->category_index);
      fr.predicted.push_back(s.category);
      fr.class_scores.push_back(s.class_scores);
      fr.confusion[static_cast<std::size_t>(row->category_index)]
                  [static_cast<std::size_t>(s.category)]++;
    }
    fr.accuracy = accuracy(fr.predicted, fr.truth);

    // macro one-vs-all AUC over the codeword-aligned margin sums
    double auc_sum = 0.0;
    std::size_t auc_classes = 0;
    for (std::size_t p = 0; p < P; ++p) {
      std::vector<double> scores;
      std::vector<int> binary;
      bool has_pos = false, has_neg = false;
      for (std::size_t i = 0; i < fr.truth.size(); ++i) {
        scores.push_back(fr.class_scores[i][p]);
        int label = (fr.truth[i] == static_cast<int>(p)) ? +1 : -1;
        (label == +1 ? has_pos : has_neg) = true;
        binary.push_back(label);
      }
      if (!has_pos || !has_neg) continue;
      auc_sum += auc_roc(scores, binary);
      ++auc_classes;
    }
    if (auc_classes > 0) {
      fr.auc = auc_sum / static_cast<double>(auc_classes);
      fr.auc_defined = true;
    } else {
      report.warnings.push_back("fold " + fr.held_out +
                                " has single-class test data; AUC skipped");
    }

    for (std::size_t a = 0; a < P; ++a)
      for (std::size_t b = 0; b < P; ++b) report.confusion[a][b] += fr.confusion[a][b];
    report.folds.push_back(std::move(fr));
  }

  std::vector<double> accs, aucs;
  for (const auto& f : report.folds) {
    accs.push_back(f.accuracy);
    if (f.auc_defined) aucs.push_back(f.auc);
  }
  std::tie(report.accuracy_mean, report.accuracy_std) = mean_std(accs);
  std::tie(report.auc_mean, report.auc_std) = mean_std(aucs);
  return report;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : report.folds) {
    folds.push_back({{"held_out", f.held_out},
                     {"accuracy", f.accuracy},
                     {"auc", f.auc_defined ? nlohmann::json(f.auc) : nlohmann::json()},
                     {"test_rows", f.truth.size()}});
  }
  return nlohmann::json{
      {"accuracy", {{"mean", report.accuracy_mean}, {"std", report.accuracy_std}}},
      {"auc",
       {{"mean", report.auc_mean},
        {"std", report.auc_std},
        {"note", "macro-averaged one-vs-all over class margin sums (multi-class extension)"}}},
      {"categories", report.categories},
      {"confusion", report.confusion},
      {"folds", folds},
      {"warnings", report.warnings}};
}

void save_report_json(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(errc::io_failure, "cannot open for writing: " + path.string());
  out << report_to_json(report).dump(2) << '\n';
}

std::string report_to_text(const MetricsReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "accuracy: " << report.accuracy_mean << " +- " << report.accuracy_std
     << " %\n";
  os << "auc:      " << report.auc_mean << " +- " << report.auc_std
     << " %  (macro one-vs-all extension)\n";
  os << "confusion (rows = truth):\n";
  std::size_t name_w = 4;
  for (const auto& c : report.categories) name_w = std::max(name_w, c.size());
  for (std::size_t a = 0; a < report.confusion.size(); ++a) {
    os << "  " << report.categories[a];
    for (std::size_t pad = report.categories[a].size(); pad < name_w + 2; ++pad)
      os << ' ';
    for (long long v : report.confusion[a]) os << ' ' << v;
    os << '\n';
  }
  for (const auto& w : report.warnings) os << "warning: " << w << '\n';
  return os.str();
}

}  // namespace apa
