#include "dk/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace dk {

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion(std::span<const std::string> truths, std::span<const std::string> preds,
                          std::span<const std::string> labels) {
  if (truths.size() != preds.size())
    throw MetricsError("confusion: " + std::to_string(truths.size()) + " truths vs " +
                       std::to_string(preds.size()) + " predictions");
  ConfusionMatrix cm;
  cm.labels.assign(labels.begin(), labels.end());
  cm.counts.assign(labels.size(), std::vector<std::size_t>(labels.size(), 0));
  auto index = [&](const std::string& label) {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw MetricsError("confusion: unknown label '" + label + "'");
    return static_cast<std::size_t>(it - labels.begin());
  };
  for (std::size_t n = 0; n < truths.size(); ++n) ++cm.counts[index(truths[n])][index(preds[n])];
  return cm;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.labels.size();
  if (cm.counts.size() != k)
    throw MetricsError("confusion matrix has " + std::to_string(cm.counts.size()) + " rows for " +
                       std::to_string(k) + " labels");
  for (const auto& row : cm.counts)
    if (row.size() != k) throw MetricsError("confusion matrix is not square");
  const std::size_t total = cm.total();
  if (k == 0 || total == 0) throw MetricsError("cannot compute metrics of an empty confusion matrix");

  MetricReport r;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    double fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(cm.counts[o][c]);
      fn += static_cast<double>(cm.counts[c][o]);
    }
    const double tn = static_cast<double>(total) - tp - fp - fn;

    ClassMetrics m;
    m.label = cm.labels[c];
    m.precision = tp + fp > 0 ? tp / (tp + fp) : (m.undefined = true, 0.0);
    m.recall = tp + fn > 0 ? tp / (tp + fn) : (m.undefined = true, 0.0);
    m.specificity = tn + fp > 0 ? tn / (tn + fp) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : (m.undefined = true, 0.0);
    if (m.undefined) r.warnings.push_back("class '" + m.label + "': 0/0 in P, R or F1 set to 0");
    r.per_class.push_back(m);
  }
  const double kd = static_cast<double>(k);
  for (const auto& m : r.per_class) {
    r.macro_precision += m.precision / kd;
    r.macro_recall += m.recall / kd;
    r.macro_specificity += m.specificity / kd;
    r.macro_f1 += m.f1 / kd;
  }
  return r;
}

std::string metrics_to_json(const MetricReport& report, const ConfusionMatrix& cm) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["precision"] = report.macro_precision;
  j["recall"] = report.macro_recall;
  j["specificity"] = report.macro_specificity;
  j["f1"] = report.macro_f1;
  auto& per_class = j["per_class"] = nlohmann::ordered_json::object();
  for (const auto& m : report.per_class) {
    nlohmann::ordered_json c;
    c["precision"] = m.precision;
    c["recall"] = m.recall;
    c["specificity"] = m.specificity;
    c["f1"] = m.f1;
    c["undefined"] = m.undefined;
    per_class[m.label] = c;
  }
  j["confusion"] = {{"labels", cm.labels}, {"counts", cm.counts}};
  j["warnings"] = report.warnings;
  return j.dump(2);
}

std::string metrics_to_table(const MetricReport& report, const ConfusionMatrix& cm) {
  std::size_t width = 5;
  for (const auto& l : cm.labels) width = std::max(width, l.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };

  std::ostringstream out;
  out << pad("") << "  ACC     P       R       S       F1\n";
  out << pad("macro") << "  " << fixed4(report.accuracy) << "  " << fixed4(report.macro_precision)
      << "  " << fixed4(report.macro_recall) << "  " << fixed4(report.macro_specificity) << "  "
      << fixed4(report.macro_f1) << '\n';
  for (const auto& m : report.per_class)
    out << pad(m.label) << "  " << std::string(6, ' ') << "  " << fixed4(m.precision) << "  "
        << fixed4(m.recall) << "  " << fixed4(m.specificity) << "  " << fixed4(m.f1)
        << (m.undefined ? "  (0/0)" : "") << '\n';

  out << "\nconfusion (rows true, columns predicted)\n" << pad("");
  for (const auto& l : cm.labels) out << "  " << pad(l);
  out << '\n';
  for (std::size_t i = 0; i < cm.labels.size(); ++i) {
    out << pad(cm.labels[i]);
    for (auto c : cm.counts[i]) out << "  " << pad(std::to_string(c));
    out << '\n';
  }
  return out.str();
}

}  // namespace dk
