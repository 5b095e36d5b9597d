#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dk/codebook.hpp"
#include "dk/ensemble.hpp"
#include "dk/kernels.hpp"

namespace dk {

class KnowspaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SubtypeDistance {
  std::string subtype;
  double distance = 0.0;

  bool operator==(const SubtypeDistance&) const = default;
};

/// Outcome of classifying one slide in the knowledge space.
struct Diagnosis {
  std::string slide_id;
  std::string predicted;
  /// Minimum distance to each subtype's knowledge points, in codebook order.
  std::vector<SubtypeDistance> per_subtype_min_distance;
  Coord3 projected_coord{};
  std::array<Bits, kNumScales> per_scale_bits;
  std::array<std::vector<std::string>, kNumScales> per_scale_features;
  bool via_shortcut = false;
  /// Set when the shortcut fired; names the rule.
  std::optional<ShortcutRule> shortcut_rule;
  /// Minimum distance attained by two or more subtypes.
  bool tie = false;

  double min_distance() const;
  double distance_to(std::string_view subtype) const;

  bool operator==(const Diagnosis&) const = default;
};

/// Validated codebook plus its expanded knowledge points, one point set per
/// subtype in codebook order. Immutable and safe to share across threads.
class KnowledgeSpace {
 public:
  explicit KnowledgeSpace(Codebook cb);

  const Codebook& codebook() const { return cb_; }
  const kernels::PointSet& points(std::size_t subtype_index) const { return points_.at(subtype_index); }
  /// All knowledge points, subtypes in codebook order.
  std::vector<KnowledgePoint> all_points() const;

  Diagnosis classify(const SlideCode& code) const;
  std::vector<Diagnosis> classify_batch(std::span<const SlideCode> codes) const;

 private:
  Codebook cb_;
  std::vector<kernels::PointSet> points_;
};

Coord3 project_slide(const SlideCode& code, const Codebook& cb);

double distance(const Coord3& a, const Coord3& b);

/// Builds a KnowledgeSpace each call; prefer KnowledgeSpace for many slides.
Diagnosis classify(const SlideCode& code, const Codebook& cb);
std::vector<Diagnosis> classify_batch(std::span<const SlideCode> codes, const Codebook& cb);

/// One JSON object per line with a fixed field order.
std::string diagnosis_to_json(const Diagnosis& d);
Diagnosis diagnosis_from_json(std::string_view line);
void write_diagnoses(std::ostream& out, std::span<const Diagnosis> diagnoses);
std::vector<Diagnosis> read_diagnoses(std::istream& in);

/// Rebuilds the voted code a diagnosis was computed from.
SlideCode slide_code_of(const Diagnosis& d);

/// Export for 3D plotting: one row per diagnosis, then one per knowledge
/// point. `true_labels` pairs slide ids with ground truth; slides without an
/// entry get an empty true_label field.
void write_space_csv(std::ostream& out, std::span<const Diagnosis> diagnoses,
                     const KnowledgeSpace& space,
                     std::span<const std::pair<std::string, std::string>> true_labels = {});

/// Plain-text rendering of one diagnosis.
std::string render_report(const Diagnosis& d);

}  // namespace dk
