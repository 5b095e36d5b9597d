#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dk/codebook.hpp"
#include "dk/embednet.hpp"
#include "dk/ensemble.hpp"

namespace dk {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  int slides_per_subtype = 50;
  /// Per-subtype overrides of slides_per_subtype, e.g. {"BCC", 60}.
  std::vector<std::pair<std::string, int>> subtype_counts;
  int bags_per_slide = 5;
  int instances_per_bag = 8;
  int instance_width = 32;
  /// Probability that an emitted bag probability is mirrored across 0.5.
  double flip_noise = 0.0;
  /// Emitted probabilities are 1 - jitter*u for set bits, jitter*u otherwise.
  double prob_jitter = 0.0;
  /// Mean offset of a feature-aligned instance coordinate, +signal when the
  /// feature is present and -signal when absent, before unit Gaussian noise.
  double signal = 2.0;

  void validate() const;
  int count_for(std::string_view subtype) const;
};

enum class Split { train, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SynthSlide {
  std::string slide_id;
  std::string true_subtype;
  SlideCode true_codes;
  Split split = Split::train;
  std::array<std::vector<Bag>, kNumScales> bags;
  std::array<std::vector<BagPrediction>, kNumScales> bag_probs;
};

/// Deterministic in (cfg.seed, subtype, index). Slides come back with
/// split = train; generate_dataset assigns the real split.
SynthSlide generate_slide(const Codebook& cb, std::string_view subtype, const SynthConfig& cfg,
                          int index);

/// Slides grouped by subtype in codebook order. max(1, floor(0.8 * N)) slides
/// are train overall; the test slots are split across subtypes in proportion
/// to their size (largest remainder) and take each subtype's last indices.
std::vector<SynthSlide> generate_dataset(const Codebook& cb, const SynthConfig& cfg);

std::string make_slide_id(std::string_view subtype, int index);

struct ManifestEntry {
  std::string slide_id;
  std::string subtype;
  Split split = Split::train;
  SlideCode true_codes;
};

void write_manifest(std::ostream& out, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(std::istream& in);

/// CSV: slide_id,scale,bag_id,instance,x_1..x_Q. Labels are not stored.
void write_instances(std::ostream& out, std::span<const Bag> bags);
std::vector<Bag> read_instances(std::istream& in);

/// On-disk dataset: manifest.csv, bag_probs.csv, instances.csv.
struct DatasetFiles {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.csv"; }
  std::filesystem::path bag_probs() const { return dir / "bag_probs.csv"; }
  std::filesystem::path instances() const { return dir / "instances.csv"; }
};

void save_dataset(const DatasetFiles& files, std::span<const SynthSlide> slides);

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// Reads instances.csv and attaches each bag's label from the manifest's
/// true codes at the bag's scale.
std::vector<Bag> load_training_bags(const DatasetFiles& files,
                                    std::span<const ManifestEntry> manifest);

std::vector<ManifestEntry> manifest_of(std::span<const SynthSlide> slides);

}  // namespace dk
