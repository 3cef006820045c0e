#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace sclair {

struct ConfusionPair {
  char a = 'A', b = 'A';  // unordered pair, a < b
  std::size_t count = 0;  // cm[a][b] + cm[b][a]
  double percent = 0.0;   // share of total off-diagonal mass, in percent
};

struct EvalReport {
  std::map<std::string, double> per_subject;
  double mean_accuracy = 0.0;    // unweighted mean over subjects (headline)
  double pooled_accuracy = 0.0;  // trace / total samples
  std::vector<std::vector<std::size_t>> confusion;  // 26 x 26, rows = true label
  std::vector<ConfusionPair> top_confusions;
  std::size_t skipped_anchors = 0;  // carried over from training, where applicable
  double wall_clock_s = 0.0;
  nlohmann::json config = nlohmann::json::object();  // resolved-config echo
};

// Ranks unordered letter pairs by symmetric error count, descending, ties
// alphabetical; returns at most k pairs with nonzero count.
std::vector<ConfusionPair> top_confusions(const std::vector<std::vector<std::size_t>>& confusion,
                                          std::size_t k = 5);

nlohmann::json eval_report_to_json(const EvalReport& r);

void write_json(const nlohmann::json& j, const std::string& path);

// Header row `true\pred,A,...,Z`, then 26 count rows.
void write_confusion_csv(const std::vector<std::vector<std::size_t>>& confusion,
                         const std::string& path);

}  // namespace sclair
