#pragma once

// Shared helpers for the test and acceptance binaries: fixture paths, a
// scratch directory, and brute-force oracles written independently of the
// library (no calls into expand_knowledge_points, encode_code or the
// distance kernels).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dk/codebook.hpp"
#include "dk/ensemble.hpp"

namespace dk::test {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(DK_DATA_DIR) / name;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dk-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

namespace oracle {

/// Binary string to integer, first character most significant.
inline std::uint64_t decimal(const Bits& bits, BitOrder order = BitOrder::msb_first) {
  std::uint64_t value = 0;
  const std::size_t n = bits.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t power = order == BitOrder::msb_first ? n - 1 - i : i;
    if (bits[i]) value += std::uint64_t{1} << power;
  }
  return value;
}

struct Point {
  std::string subtype;
  std::uint64_t x, y, z;
};

/// Every cross-scale row triple, built with three explicit nested loops.
inline std::vector<Point> knowledge_points(const Codebook& cb) {
  std::vector<Point> out;
  for (const auto& st : cb.subtypes) {
    std::vector<std::uint64_t> values[3];
    for (const auto& row : cb.rows)
      if (row.subtype == st) values[row.scale_index - 1].push_back(decimal(row.bits, cb.bit_order));
    for (auto& v : values)
      if (v.empty()) v.push_back(0);
    for (auto x : values[0])
      for (auto y : values[1])
        for (auto z : values[2]) out.push_back({st, x, y, z});
  }
  return out;
}

struct Verdict {
  std::string predicted;
  bool tie = false;
  bool shortcut = false;
  std::vector<std::uint64_t> min_sq;  // per subtype, codebook order
  std::uint64_t x = 0, y = 0, z = 0;
};

/// Nearest subtype by exhaustive search, first-listed subtype on ties, with
/// the codebook's shortcut rules applied on top.
inline Verdict classify(const std::array<Bits, 3>& codes, const Codebook& cb,
                        const std::vector<Point>& points) {
  Verdict v;
  v.x = decimal(codes[0], cb.bit_order);
  v.y = decimal(codes[1], cb.bit_order);
  v.z = decimal(codes[2], cb.bit_order);
  v.min_sq.assign(cb.subtypes.size(), UINT64_MAX);
  for (const auto& p : points) {
    const std::size_t i =
        std::find(cb.subtypes.begin(), cb.subtypes.end(), p.subtype) - cb.subtypes.begin();
    auto sq = [](std::uint64_t a, std::uint64_t b) { return a > b ? (a - b) * (a - b) : (b - a) * (b - a); };
    v.min_sq[i] = std::min(v.min_sq[i], sq(v.x, p.x) + sq(v.y, p.y) + sq(v.z, p.z));
  }
  const auto best = *std::min_element(v.min_sq.begin(), v.min_sq.end());
  const auto winners = std::count(v.min_sq.begin(), v.min_sq.end(), best);
  v.predicted = cb.subtypes[std::find(v.min_sq.begin(), v.min_sq.end(), best) - v.min_sq.begin()];
  v.tie = winners > 1;
  for (const auto& rule : cb.shortcut_rules) {
    const auto& names = cb.schemas[rule.scale_index - 1].feature_names;
    const std::size_t f = std::find(names.begin(), names.end(), rule.feature) - names.begin();
    if (codes[rule.scale_index - 1][f]) {
      v.predicted = rule.subtype;
      v.shortcut = true;
      v.tie = false;
      break;
    }
  }
  return v;
}

/// Count-and-compare majority vote.
inline Bits vote(const std::vector<std::vector<double>>& bags, double v) {
  Bits out(bags.front().size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t above = 0;
    for (const auto& bag : bags) above += bag[i] > v ? 1 : 0;
    out[i] = above * 2 > bags.size() ? 1 : 0;
  }
  return out;
}

}  // namespace oracle

inline Bits random_bits(std::mt19937_64& gen, std::size_t n) {
  Bits bits(n);
  for (auto& b : bits) b = static_cast<std::uint8_t>(gen() & 1);
  return bits;
}

inline SlideCode make_code(const std::string& id, const Bits& a, const Bits& b, const Bits& c) {
  SlideCode code;
  code.slide_id = id;
  code.codes = {BinaryCode{1, a}, BinaryCode{2, b}, BinaryCode{3, c}};
  return code;
}

}  // namespace dk::test
