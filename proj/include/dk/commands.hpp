#pragma once

// Pipeline commands behind the `dk` executable. Each takes a fully resolved
// options struct and writes its outputs; failures surface as exceptions.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dk/embednet.hpp"
#include "dk/ensemble.hpp"
#include "dk/knowspace.hpp"
#include "dk/metrics.hpp"
#include "dk/synth.hpp"

namespace dk {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SplitFilter { all, train, test };
SplitFilter parse_split_filter(std::string_view text);

/// "s=VALUE", e.g. "1=0.3".
void apply_threshold_flag(Thresholds& thresholds, std::string_view flag);

/// Either "start:stop:step" or a comma-separated list of values.
std::vector<double> parse_grid(std::string_view text);

struct SynthOptions {
  std::filesystem::path codebook;
  std::filesystem::path dataset;
  SynthConfig synth;
};
std::vector<SynthSlide> cmd_synth(const SynthOptions& opts, std::ostream& log);

struct TrainOptions {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint_dir;
  TrainConfig train;
};
/// Trains one model per scale on the train split; returns checkpoint paths.
std::vector<std::filesystem::path> cmd_train(const TrainOptions& opts, std::ostream& log);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int scale_index);

/// Where slide-level bag probabilities come from: a checkpoint directory
/// applied to the dataset's instances, or an external bag-probability file.
/// With neither, the dataset's bag_probs.csv is used.
struct BagSource {
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> bags;
  SplitFilter split = SplitFilter::test;
};
std::vector<BagPrediction> collect_bag_predictions(const BagSource& source);

struct PredictOptions {
  std::filesystem::path codebook;
  BagSource source;
  Thresholds thresholds;
  std::filesystem::path out;
  std::optional<std::filesystem::path> save_bags;
};
std::vector<Diagnosis> cmd_predict(const PredictOptions& opts, std::ostream& log);

struct EvaluateOptions {
  std::filesystem::path diagnoses;
  std::filesystem::path manifest;
  /// Label order for the confusion matrix; manifest order of first
  /// appearance when absent.
  std::optional<std::filesystem::path> codebook;
  std::optional<std::filesystem::path> out;
};
struct Evaluation {
  ConfusionMatrix confusion;
  MetricReport report;
};
Evaluation cmd_evaluate(const EvaluateOptions& opts, std::ostream& log);

struct SweepOptions {
  std::filesystem::path codebook;
  BagSource source;
  /// Thresholds held fixed on the scales not being swept.
  Thresholds base;
  std::vector<double> grid;
  std::optional<std::filesystem::path> out;
};
struct SweepPoint {
  int scale_index = 1;
  double v = 0.5;
  double accuracy = 0.0;
};
std::vector<SweepPoint> cmd_sweep(const SweepOptions& opts, std::ostream& log);

struct ExportSpaceOptions {
  std::filesystem::path codebook;
  std::filesystem::path diagnoses;
  std::optional<std::filesystem::path> manifest;
  std::filesystem::path out;
};
void cmd_export_space(const ExportSpaceOptions& opts, std::ostream& log);

struct ReportOptions {
  std::filesystem::path diagnoses;
  std::string slide_id;
};
void cmd_report(const ReportOptions& opts, std::ostream& out);

std::vector<Diagnosis> load_diagnoses(const std::filesystem::path& path);

/// Accuracy of diagnoses against manifest truth through the same metric
/// path cmd_evaluate uses.
Evaluation evaluate(std::span<const Diagnosis> diagnoses, std::span<const ManifestEntry> manifest,
                    std::vector<std::string> labels);

}  // namespace dk
