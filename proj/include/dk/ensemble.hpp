#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dk/codebook.hpp"

namespace dk {

/// Per-feature probabilities one bag emits at one scale.
struct BagPrediction {
  std::string slide_id;
  int scale_index = 1;
  int bag_id = 0;
  std::vector<double> probs;

  bool operator==(const BagPrediction&) const = default;
};

/// Voted binary code of one slide, one entry per scale in order 1, 2, 3.
struct SlideCode {
  std::string slide_id;
  std::array<BinaryCode, kNumScales> codes{BinaryCode{1, {}}, BinaryCode{2, {}}, BinaryCode{3, {}}};

  bool operator==(const SlideCode&) const = default;
};

/// Label threshold v for each scale; 0.5 by default.
struct Thresholds {
  std::array<double, kNumScales> v{0.5, 0.5, 0.5};

  double at(int scale_index) const { return v.at(static_cast<std::size_t>(scale_index - 1)); }
};

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// bits[i] = probs[i] > v. Equality maps to 0.
BinaryCode binarize_bag(const BagPrediction& pred, double v);

/// Majority vote over the bags of one slide at one scale: bit i is set iff
/// strictly more than half the bags exceed v on feature i.
BinaryCode vote_slide(std::span<const BagPrediction> preds, double v);

/// Groups predictions by slide and scale and votes each group. Every slide
/// must have bags at all three scales. Output is sorted by slide_id.
std::vector<SlideCode> vote_all(std::span<const BagPrediction> preds, const Thresholds& thresholds);

/// Rejects predictions whose scale or length disagree with the codebook.
void check_against_codebook(std::span<const BagPrediction> preds, const Codebook& cb);

// Bag-prediction files. CSV: header `slide_id,scale,bag_id,p_1,...,p_N`,
// with rows shorter than N padded by empty fields. JSON lines: one object
// per line with keys slide_id, scale, bag_id, probs. NaN and values outside
// [0, 1] are rejected on read.
std::vector<BagPrediction> read_bag_predictions_csv(std::istream& in);
void write_bag_predictions_csv(std::ostream& out, std::span<const BagPrediction> preds);
std::vector<BagPrediction> read_bag_predictions_jsonl(std::istream& in);
void write_bag_predictions_jsonl(std::ostream& out, std::span<const BagPrediction> preds);

/// Picks the format from the extension: .jsonl/.json are JSON lines, anything
/// else CSV.
std::vector<BagPrediction> load_bag_predictions(const std::filesystem::path& path);
void save_bag_predictions(const std::filesystem::path& path, std::span<const BagPrediction> preds);

}  // namespace dk
