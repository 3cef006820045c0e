#include "sclair/report.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "sclair/data.hpp"
#include "sclair/version.hpp"

namespace sclair {

std::vector<ConfusionPair> top_confusions(const std::vector<std::vector<std::size_t>>& confusion,
                                          std::size_t k) {
  if (confusion.size() != kNumClasses) {
    throw std::invalid_argument("top_confusions: expected a 26x26 matrix");
  }
  std::size_t total_off = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (confusion[i].size() != kNumClasses) {
      throw std::invalid_argument("top_confusions: expected a 26x26 matrix");
    }
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      if (i != j) total_off += confusion[i][j];
    }
  }
  if (total_off == 0) return {};
  std::vector<ConfusionPair> pairs;
  for (std::size_t a = 0; a < kNumClasses; ++a) {
    for (std::size_t b = a + 1; b < kNumClasses; ++b) {
      const std::size_t count = confusion[a][b] + confusion[b][a];
      if (count == 0) continue;
      ConfusionPair p;
      p.a = index_label(static_cast<int>(a));
      p.b = index_label(static_cast<int>(b));
      p.count = count;
      p.percent = 100.0 * static_cast<double>(count) / static_cast<double>(total_off);
      pairs.push_back(p);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const ConfusionPair& x, const ConfusionPair& y) {
    if (x.count != y.count) return x.count > y.count;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  if (pairs.size() > k) pairs.resize(k);
  return pairs;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["config"] = r.config;
  j["mean_accuracy"] = r.mean_accuracy;
  j["pooled_accuracy"] = r.pooled_accuracy;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, acc] : r.per_subject) per[id] = acc;
  j["per_subject"] = std::move(per);
  j["confusion"] = r.confusion;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : r.top_confusions) {
    pairs.push_back({{"pair", std::string(1, p.a) + "-" + std::string(1, p.b)},
                     {"count", p.count},
                     {"percent", p.percent}});
  }
  j["top_confusions"] = std::move(pairs);
  j["skipped_anchors"] = r.skipped_anchors;
  j["wall_clock_s"] = r.wall_clock_s;
  return j;
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("report: cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("report: write failed for " + path);
}

void write_confusion_csv(const std::vector<std::vector<std::size_t>>& confusion,
                         const std::string& path) {
  if (confusion.size() != kNumClasses) {
    throw std::invalid_argument("confusion csv: expected a 26x26 matrix");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("confusion csv: cannot write " + path);
  out << "true\\pred";
  for (std::size_t j = 0; j < kNumClasses; ++j) out << ',' << index_label(static_cast<int>(j));
  out << '\n';
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    out << index_label(static_cast<int>(i));
    for (std::size_t j = 0; j < kNumClasses; ++j) out << ',' << confusion[i][j];
    out << '\n';
  }
  if (!out) throw std::runtime_error("confusion csv: write failed for " + path);
}

}  // namespace sclair
