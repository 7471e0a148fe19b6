#include "cal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace cal {

namespace {

void check_pair(std::size_t a, std::size_t b, const char* name) {
  if (a == 0 || b == 0) throw MetricError(std::string(name) + ": empty input");
  if (a != b) throw MetricError(std::string(name) + ": length mismatch");
}

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

Confusion confusion(std::span<const int> preds, std::span<const int> labels, int positive, const char* name) {
  check_pair(preds.size(), labels.size(), name);
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1)) {
      throw MetricError(std::string(name) + ": expects binary 0/1 labels");
    }
    const bool p = preds[i] == positive, l = labels[i] == positive;
    if (p && l) ++c.tp;
    else if (p && !l) ++c.fp;
    else if (!p && l) ++c.fn;
    else ++c.tn;
  }
  return c;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds.size(), labels.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_binary(std::span<const int> preds, std::span<const int> labels, int positive_class) {
  auto c = confusion(preds, labels, positive_class, "f1_binary");
  const double p = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double r = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

double mcc(std::span<const int> preds, std::span<const int> labels) {
  auto c = confusion(preds, labels, 1, "mcc");
  const double denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn);
  if (denom == 0.0) return 0.0;
  return (c.tp * c.tn - c.fp * c.fn) / std::sqrt(denom);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x.size(), y.size(), "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("correlation undefined for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x.size(), y.size(), "spearman");
  if (x.size() < 2) throw MetricError("spearman: needs at least 2 points");
  auto rx = fractional_ranks(x);
  auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw MetricError("cosine_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 1e-12 ? dot / denom : 0.0;
}

double classification_metric(const std::string& name, std::span<const int> preds, std::span<const int> labels) {
  if (name == "accuracy") return accuracy(preds, labels);
  if (name == "f1") return f1_binary(preds, labels, 1);
  if (name == "mcc") return mcc(preds, labels);
  throw MetricError("unknown classification metric '" + name + "'");
}

std::string MetricReport::to_kv_line() const {
  std::ostringstream os;
  os << "metric=" << metric << " value=" << format_double(value) << " support=" << support;
  if (attack) os << " attack=" << attack->kind << " epsilon=" << format_double(attack->epsilon);
  for (const auto& [k, v] : per_class) os << ' ' << k << '=' << format_double(v);
  for (const auto& [k, v] : notes) os << ' ' << k << '=' << v;
  return os.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["metric"] = metric;
  j["value"] = value;
  j["support"] = support;
  if (!per_class.empty()) j["per_class"] = per_class;
  if (attack) j["attack"] = {{"kind", attack->kind}, {"epsilon", attack->epsilon}};
  if (!notes.empty()) j["notes"] = notes;
  return j;
}

}  // namespace cal
