#include "dk/codebook.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

namespace dk {

namespace {

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size() || line[i] == '#') break;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    tokens.push_back({line.substr(start, i - start), start + 1});
  }
  return tokens;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

class LineParser {
 public:
  LineParser(std::size_t line_no, std::vector<Token> tokens)
      : line_no_(line_no), tokens_(std::move(tokens)) {}

  [[noreturn]] void fail(std::size_t token, const std::string& msg) const {
    std::size_t col = token < tokens_.size() ? tokens_[token].column
                                             : (tokens_.empty() ? 1
                                                                : tokens_.back().column +
                                                                      tokens_.back().text.size());
    throw CodebookParseError(line_no_, col, msg);
  }

  void expect_count(std::size_t n) const {
    if (tokens_.size() < n) fail(tokens_.size(), "expected " + std::to_string(n - 1) +
                                                     " argument(s) after '" +
                                                     std::string(tokens_[0].text) + "'");
    if (tokens_.size() > n) fail(n, "unexpected token '" + std::string(tokens_[n].text) + "'");
  }

  int scale(std::size_t token) const {
    auto sv = tokens_.at(token).text;
    int value = 0;
    auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), value);
    if (ec != std::errc{} || ptr != sv.data() + sv.size())
      fail(token, "expected a scale index, got '" + std::string(sv) + "'");
    if (value < 1 || value > kNumScales)
      fail(token, "scale index must be 1, 2 or 3, got " + std::to_string(value));
    return value;
  }

  Bits bits(std::size_t token) const {
    auto sv = tokens_.at(token).text;
    for (std::size_t i = 0; i < sv.size(); ++i) {
      if (sv[i] != '0' && sv[i] != '1')
        throw CodebookParseError(line_no_, tokens_[token].column + i,
                                 "bit string may only contain 0 and 1");
    }
    return parse_bit_string(sv);
  }

  std::string_view word(std::size_t i) const { return tokens_.at(i).text; }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::size_t line_no_;
  std::vector<Token> tokens_;
};

std::string describe_row(const KnowledgeRow& row, std::size_t index) {
  return "row " + std::to_string(index + 1) + " (" + row.subtype + ", s=" +
         std::to_string(row.scale_index) + ", " + to_bit_string(row.bits) + ")";
}

}  // namespace

CodebookParseError::CodebookParseError(std::size_t line, std::size_t column, const std::string& what)
    : CodebookError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                    what),
      line_(line),
      column_(column) {}

CodebookSchemaError::CodebookSchemaError(const std::string& what,
                                         std::optional<std::size_t> row_index)
    : CodebookError(what), row_index_(row_index) {}

std::optional<std::size_t> ScaleSchema::index_of(std::string_view name) const {
  auto it = std::find(feature_names.begin(), feature_names.end(), name);
  if (it == feature_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - feature_names.begin());
}

const ScaleSchema& Codebook::schema(int scale_index) const {
  if (scale_index < 1 || scale_index > kNumScales)
    throw CodebookError("scale index out of range: " + std::to_string(scale_index));
  return schemas[static_cast<std::size_t>(scale_index - 1)];
}

std::optional<std::size_t> Codebook::subtype_index(std::string_view subtype) const {
  auto it = std::find(subtypes.begin(), subtypes.end(), subtype);
  if (it == subtypes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - subtypes.begin());
}

std::vector<const KnowledgeRow*> Codebook::rows_for(std::string_view subtype,
                                                    int scale_index) const {
  std::vector<const KnowledgeRow*> out;
  for (const auto& row : rows)
    if (row.subtype == subtype && row.scale_index == scale_index) out.push_back(&row);
  return out;
}

std::string_view to_string(BitOrder order) {
  return order == BitOrder::msb_first ? "msb-first" : "lsb-first";
}

std::string to_bit_string(const Bits& bits) {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? '1' : '0';
  return s;
}

Bits parse_bit_string(std::string_view text) {
  Bits bits(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '0' && text[i] != '1')
      throw CodebookError("invalid bit string '" + std::string(text) + "'");
    bits[i] = text[i] == '1';
  }
  return bits;
}

std::uint32_t encode_code(const BinaryCode& code, BitOrder order) {
  std::uint32_t value = 0;
  const std::size_t n = code.bits.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!code.bits[i]) continue;
    const std::size_t shift = order == BitOrder::msb_first ? n - 1 - i : i;
    value |= std::uint32_t{1} << shift;
  }
  return value;
}

std::vector<KnowledgePoint> expand_knowledge_points(const Codebook& cb, std::string_view subtype) {
  if (!cb.subtype_index(subtype))
    throw CodebookError("unknown subtype '" + std::string(subtype) + "'");

  std::array<std::vector<std::uint32_t>, kNumScales> axis;
  for (int s = 1; s <= kNumScales; ++s) {
    auto& values = axis[static_cast<std::size_t>(s - 1)];
    for (const KnowledgeRow* row : cb.rows_for(subtype, s))
      values.push_back(encode_code({s, row->bits}, cb.bit_order));
    if (values.empty()) values.push_back(0);
  }

  std::vector<KnowledgePoint> points;
  points.reserve(axis[0].size() * axis[1].size() * axis[2].size());
  for (auto x : axis[0])
    for (auto y : axis[1])
      for (auto z : axis[2]) points.push_back({std::string(subtype), {x, y, z}});
  return points;
}

void validate_codebook(const Codebook& cb) {
  if (cb.disease_name.empty()) throw CodebookSchemaError("disease name is empty");
  if (cb.subtypes.size() < 2) throw CodebookSchemaError("a codebook needs at least two subtypes");
  {
    std::set<std::string> seen;
    for (const auto& st : cb.subtypes) {
      if (st.empty()) throw CodebookSchemaError("empty subtype name");
      if (!seen.insert(st).second) throw CodebookSchemaError("duplicate subtype '" + st + "'");
    }
  }

  for (int s = 1; s <= kNumScales; ++s) {
    const auto& schema = cb.schemas[static_cast<std::size_t>(s - 1)];
    const std::string where = "scale " + std::to_string(s);
    if (schema.scale_index != s)
      throw CodebookSchemaError(where + " is missing or mis-indexed");
    if (schema.feature_names.empty()) throw CodebookSchemaError(where + " has no features");
    if (schema.size() > kMaxFeatures)
      throw CodebookSchemaError(where + " has more than " + std::to_string(kMaxFeatures) +
                                " features");
    std::set<std::string> seen;
    for (const auto& name : schema.feature_names) {
      if (name.empty()) throw CodebookSchemaError(where + " has an empty feature name");
      if (!seen.insert(name).second)
        throw CodebookSchemaError(where + " has duplicate feature '" + name + "'");
    }
  }

  std::set<std::tuple<std::string, int, Bits>> unique_rows;
  for (std::size_t i = 0; i < cb.rows.size(); ++i) {
    const auto& row = cb.rows[i];
    if (!cb.subtype_index(row.subtype))
      throw CodebookSchemaError(describe_row(row, i) + ": unknown subtype '" + row.subtype + "'",
                                i);
    if (row.scale_index < 1 || row.scale_index > kNumScales)
      throw CodebookSchemaError(describe_row(row, i) + ": scale index out of range", i);
    const auto expected = cb.schema(row.scale_index).size();
    if (row.bits.size() != expected)
      throw CodebookSchemaError(describe_row(row, i) + ": expected " + std::to_string(expected) +
                                    " bits, got " + std::to_string(row.bits.size()),
                                i);
    for (auto b : row.bits)
      if (b > 1) throw CodebookSchemaError(describe_row(row, i) + ": bits must be 0 or 1", i);
    if (!unique_rows.insert({row.subtype, row.scale_index, row.bits}).second)
      throw CodebookSchemaError(describe_row(row, i) + ": duplicate knowledge row", i);
  }

  for (const auto& rule : cb.shortcut_rules) {
    const std::string where = "shortcut (s=" + std::to_string(rule.scale_index) + ", " +
                              rule.feature + " -> " + rule.subtype + ")";
    if (rule.scale_index < 1 || rule.scale_index > kNumScales)
      throw CodebookSchemaError(where + ": scale index out of range");
    if (!cb.schema(rule.scale_index).index_of(rule.feature))
      throw CodebookSchemaError(where + ": unknown feature");
    if (!cb.subtype_index(rule.subtype)) throw CodebookSchemaError(where + ": unknown subtype");
  }

  std::map<Coord3, std::string> owner;
  for (const auto& subtype : cb.subtypes) {
    for (const auto& point : expand_knowledge_points(cb, subtype)) {
      auto [it, inserted] = owner.emplace(point.coord, subtype);
      if (!inserted) {
        const auto& c = point.coord;
        throw CodebookSchemaError("knowledge point (" + std::to_string(c[0]) + ", " +
                                  std::to_string(c[1]) + ", " + std::to_string(c[2]) +
                                  ") of " + subtype + " collides with " + it->second);
      }
    }
  }
}

Codebook parse_codebook(std::string_view text) {
  Codebook cb;
  std::vector<std::size_t> row_lines;
  std::array<bool, kNumScales> have_scale{};
  bool have_disease = false, have_order = false, have_subtypes = false;
  std::size_t line_no = 0;

  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);

    auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    LineParser p(line_no, tokens);
    const std::string_view directive = p.word(0);

    if (directive == "disease") {
      if (have_disease) p.fail(0, "duplicate 'disease' directive");
      if (p.size() < 2) p.fail(1, "missing disease name");
      auto rest = line.substr(tokens[1].column - 1);
      if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
      cb.disease_name = std::string(trim(rest));
      have_disease = true;
    } else if (directive == "bit-order") {
      if (have_order) p.fail(0, "duplicate 'bit-order' directive");
      p.expect_count(2);
      if (p.word(1) == "msb-first")
        cb.bit_order = BitOrder::msb_first;
      else if (p.word(1) == "lsb-first")
        cb.bit_order = BitOrder::lsb_first;
      else
        p.fail(1, "bit order must be 'msb-first' or 'lsb-first'");
      have_order = true;
    } else if (directive == "subtypes") {
      if (have_subtypes) p.fail(0, "duplicate 'subtypes' directive");
      if (p.size() < 2) p.fail(1, "missing subtype list");
      for (std::size_t i = 1; i < p.size(); ++i) cb.subtypes.emplace_back(p.word(i));
      have_subtypes = true;
    } else if (directive == "scale") {
      if (p.size() < 3) p.fail(p.size(), "expected a scale index followed by feature names");
      const int s = p.scale(1);
      auto& flag = have_scale[static_cast<std::size_t>(s - 1)];
      if (flag) p.fail(1, "scale " + std::to_string(s) + " declared twice");
      flag = true;
      auto& schema = cb.schemas[static_cast<std::size_t>(s - 1)];
      schema.scale_index = s;
      for (std::size_t i = 2; i < p.size(); ++i) schema.feature_names.emplace_back(p.word(i));
    } else if (directive == "row") {
      p.expect_count(4);
      cb.rows.push_back({std::string(p.word(1)), p.scale(2), p.bits(3)});
      row_lines.push_back(line_no);
    } else if (directive == "shortcut") {
      p.expect_count(4);
      cb.shortcut_rules.push_back({p.scale(1), std::string(p.word(2)), std::string(p.word(3))});
    } else {
      p.fail(0, "unknown directive '" + std::string(directive) + "'");
    }
  }

  const std::size_t end_line = line_no + 1;
  if (!have_disease) throw CodebookParseError(end_line, 1, "missing 'disease' directive");
  if (!have_order) throw CodebookParseError(end_line, 1, "missing 'bit-order' directive");
  if (!have_subtypes) throw CodebookParseError(end_line, 1, "missing 'subtypes' directive");
  for (int s = 1; s <= kNumScales; ++s)
    if (!have_scale[static_cast<std::size_t>(s - 1)])
      throw CodebookParseError(end_line, 1, "missing 'scale " + std::to_string(s) + "' directive");

  try {
    validate_codebook(cb);
  } catch (const CodebookSchemaError& e) {
    if (auto idx = e.row_index())
      throw CodebookSchemaError("line " + std::to_string(row_lines[*idx]) + ": " + e.what(), idx);
    throw;
  }
  return cb;
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CodebookError("cannot open codebook '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_codebook(ss.str());
}

std::string serialize_codebook(const Codebook& cb) {
  std::ostringstream out;
  out << "disease " << cb.disease_name << '\n';
  out << "bit-order " << to_string(cb.bit_order) << '\n';
  out << "subtypes";
  for (const auto& st : cb.subtypes) out << ' ' << st;
  out << '\n';
  for (const auto& schema : cb.schemas) {
    out << "scale " << schema.scale_index;
    for (const auto& name : schema.feature_names) out << ' ' << name;
    out << '\n';
  }
  for (const auto& row : cb.rows)
    out << "row " << row.subtype << ' ' << row.scale_index << ' ' << to_bit_string(row.bits)
        << '\n';
  for (const auto& rule : cb.shortcut_rules)
    out << "shortcut " << rule.scale_index << ' ' << rule.feature << ' ' << rule.subtype << '\n';
  return out.str();
}

}  // namespace dk
