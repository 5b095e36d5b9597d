#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dk {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rows are true labels, columns predicted labels.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t trace() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  /// A 0/0 occurred in P, R or F1 and was replaced by 0.
  bool undefined = false;
};

struct MetricReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_specificity = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  /// One entry per class whose P, R or F1 fell back to the 0/0 convention.
  std::vector<std::string> warnings;
};

ConfusionMatrix confusion(std::span<const std::string> truths, std::span<const std::string> preds,
                          std::span<const std::string> labels);

/// One-vs-rest per class, unweighted mean across classes.
MetricReport compute_metrics(const ConfusionMatrix& cm);

std::string metrics_to_json(const MetricReport& report, const ConfusionMatrix& cm);

/// Columns ACC, P, R, S, F1, then per-class rows and the confusion matrix.
std::string metrics_to_table(const MetricReport& report, const ConfusionMatrix& cm);

}  // namespace dk
