#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cal {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double accuracy(std::span<const int> preds, std::span<const int> labels);
/// 2PR / (P + R), 0 when P + R = 0. Labels and predictions must be 0/1.
double f1_binary(std::span<const int> preds, std::span<const int> labels, int positive_class = 1);
/// Matthews correlation; 0 when any marginal is empty.
double mcc(std::span<const int> preds, std::span<const int> labels);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> fractional_ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of fractional ranks. Throws MetricError when either
/// input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Applies the task metric by name: accuracy, f1, mcc.
double classification_metric(const std::string& name, std::span<const int> preds, std::span<const int> labels);

struct AttackInfo {
  std::string kind;
  double epsilon = 0.0;
};

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::size_t support = 0;
  std::map<std::string, double> per_class;  // "class<k>.accuracy" etc.
  std::optional<AttackInfo> attack;
  std::map<std::string, std::string> notes;

  /// Single line of space-separated key=value pairs.
  std::string to_kv_line() const;
  nlohmann::json to_json() const;
};

}  // namespace cal
