#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dk {

inline constexpr int kNumScales = 3;
inline constexpr std::size_t kMaxFeatures = 32;

/// Feature ID 1 maps to the most significant bit under msb_first.
enum class BitOrder { msb_first, lsb_first };

using Bits = std::vector<std::uint8_t>;

/// One coordinate per scale, x = s1, y = s2, z = s3.
using Coord3 = std::array<std::uint32_t, kNumScales>;

struct ScaleSchema {
  int scale_index = 0;
  std::vector<std::string> feature_names;

  std::size_t size() const { return feature_names.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;

  bool operator==(const ScaleSchema&) const = default;
};

struct BinaryCode {
  int scale_index = 1;
  Bits bits;

  bool operator==(const BinaryCode&) const = default;
};

struct KnowledgeRow {
  std::string subtype;
  int scale_index = 1;
  Bits bits;

  bool operator==(const KnowledgeRow&) const = default;
};

/// A feature at a scale that forces a subtype regardless of distances.
struct ShortcutRule {
  int scale_index = 1;
  std::string feature;
  std::string subtype;

  bool operator==(const ShortcutRule&) const = default;
};

struct KnowledgePoint {
  std::string subtype;
  Coord3 coord{};

  bool operator==(const KnowledgePoint&) const = default;
};

struct Codebook {
  std::string disease_name;
  BitOrder bit_order = BitOrder::msb_first;
  std::vector<std::string> subtypes;
  std::array<ScaleSchema, kNumScales> schemas;
  std::vector<KnowledgeRow> rows;
  std::vector<ShortcutRule> shortcut_rules;

  const ScaleSchema& schema(int scale_index) const;
  std::optional<std::size_t> subtype_index(std::string_view subtype) const;
  std::vector<const KnowledgeRow*> rows_for(std::string_view subtype, int scale_index) const;

  bool operator==(const Codebook&) const = default;
};

class CodebookError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed codebook text. Line and column are 1-based.
class CodebookParseError : public CodebookError {
 public:
  CodebookParseError(std::size_t line, std::size_t column, const std::string& what);

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Well-formed text describing an invalid codebook. When the violation is
/// attributable to a knowledge row, row_index() identifies it.
class CodebookSchemaError : public CodebookError {
 public:
  explicit CodebookSchemaError(const std::string& what,
                               std::optional<std::size_t> row_index = std::nullopt);

  std::optional<std::size_t> row_index() const { return row_index_; }

 private:
  std::optional<std::size_t> row_index_;
};

Codebook parse_codebook(std::string_view text);
Codebook load_codebook(const std::filesystem::path& path);

/// Canonical text form; parse_codebook(serialize_codebook(cb)) == cb.
std::string serialize_codebook(const Codebook& cb);

/// Checks every structural invariant plus knowledge-point collisions.
/// Throws CodebookSchemaError on the first violation.
void validate_codebook(const Codebook& cb);

std::string to_bit_string(const Bits& bits);
Bits parse_bit_string(std::string_view text);

/// Binary-to-decimal projection of one scale's code.
std::uint32_t encode_code(const BinaryCode& code, BitOrder order = BitOrder::msb_first);

/// Cartesian product of the subtype's rows across the three scales, s=1
/// varying slowest. A scale with no rows contributes a single all-zero row.
std::vector<KnowledgePoint> expand_knowledge_points(const Codebook& cb, std::string_view subtype);

std::string_view to_string(BitOrder order);

}  // namespace dk
