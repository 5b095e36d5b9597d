#include "dk/knowspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "csv.hpp"
#include "json.hpp"

namespace dk {

namespace {

using kernels::SqDistance;

double to_distance(SqDistance sq) {
  return static_cast<double>(std::sqrt(static_cast<long double>(sq)));
}

void check_code(const SlideCode& code, const Codebook& cb) {
  for (int s = 1; s <= kNumScales; ++s) {
    const auto& bc = code.codes[static_cast<std::size_t>(s - 1)];
    const auto expected = cb.schema(s).size();
    if (bc.scale_index != s)
      throw KnowspaceError("slide '" + code.slide_id + "': code in slot " + std::to_string(s) +
                           " is tagged with scale " + std::to_string(bc.scale_index));
    if (bc.bits.size() != expected)
      throw KnowspaceError("slide '" + code.slide_id + "': s=" + std::to_string(s) + " code has " +
                           std::to_string(bc.bits.size()) + " bits, codebook '" + cb.disease_name +
                           "' expects " + std::to_string(expected));
    for (auto b : bc.bits)
      if (b > 1) throw KnowspaceError("slide '" + code.slide_id + "': bits must be 0 or 1");
  }
}

std::string scale_key(int s) { return "s" + std::to_string(s); }

}  // namespace

double Diagnosis::min_distance() const {
  double best = INFINITY;
  for (const auto& d : per_subtype_min_distance) best = std::min(best, d.distance);
  return best;
}

double Diagnosis::distance_to(std::string_view subtype) const {
  for (const auto& d : per_subtype_min_distance)
    if (d.subtype == subtype) return d.distance;
  throw KnowspaceError("diagnosis of '" + slide_id + "' has no distance for subtype '" +
                       std::string(subtype) + "'");
}

Coord3 project_slide(const SlideCode& code, const Codebook& cb) {
  check_code(code, cb);
  Coord3 c{};
  for (std::size_t s = 0; s < kNumScales; ++s) c[s] = encode_code(code.codes[s], cb.bit_order);
  return c;
}

double distance(const Coord3& a, const Coord3& b) {
  SqDistance sum = 0;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    const std::uint64_t d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
    sum += static_cast<SqDistance>(d) * d;
  }
  return to_distance(sum);
}

KnowledgeSpace::KnowledgeSpace(Codebook cb) : cb_(std::move(cb)) {
  validate_codebook(cb_);
  points_.reserve(cb_.subtypes.size());
  for (const auto& subtype : cb_.subtypes) {
    kernels::PointSet set;
    for (const auto& p : expand_knowledge_points(cb_, subtype))
      set.push_back(p.coord[0], p.coord[1], p.coord[2]);
    points_.push_back(std::move(set));
  }
}

std::vector<KnowledgePoint> KnowledgeSpace::all_points() const {
  std::vector<KnowledgePoint> out;
  for (std::size_t j = 0; j < points_.size(); ++j) {
    const auto& set = points_[j];
    for (std::size_t i = 0; i < set.size(); ++i)
      out.push_back({cb_.subtypes[j], {set.xs[i], set.ys[i], set.zs[i]}});
  }
  return out;
}

Diagnosis KnowledgeSpace::classify(const SlideCode& code) const {
  Diagnosis d;
  d.slide_id = code.slide_id;
  d.projected_coord = project_slide(code, cb_);
  const auto [x, y, z] = d.projected_coord;

  for (int s = 1; s <= kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s - 1);
    const auto& bits = code.codes[idx].bits;
    d.per_scale_bits[idx] = bits;
    const auto& names = cb_.schema(s).feature_names;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) d.per_scale_features[idx].push_back(names[i]);
  }

  std::vector<SqDistance> mins(points_.size());
  for (std::size_t j = 0; j < points_.size(); ++j)
    mins[j] = kernels::min_sq_distance(points_[j], x, y, z);

  std::size_t best = 0;
  for (std::size_t j = 1; j < mins.size(); ++j)
    if (mins[j] < mins[best]) best = j;
  const auto attained = std::count(mins.begin(), mins.end(), mins[best]);

  d.per_subtype_min_distance.reserve(mins.size());
  for (std::size_t j = 0; j < mins.size(); ++j)
    d.per_subtype_min_distance.push_back({cb_.subtypes[j], to_distance(mins[j])});

  for (const auto& rule : cb_.shortcut_rules) {
    const auto idx = static_cast<std::size_t>(rule.scale_index - 1);
    const auto feature = *cb_.schema(rule.scale_index).index_of(rule.feature);
    if (code.codes[idx].bits[feature]) {
      d.predicted = rule.subtype;
      d.via_shortcut = true;
      d.shortcut_rule = rule;
      return d;
    }
  }

  d.predicted = cb_.subtypes[best];
  d.tie = attained > 1;
  return d;
}

std::vector<Diagnosis> KnowledgeSpace::classify_batch(std::span<const SlideCode> codes) const {
  std::vector<Diagnosis> out;
  out.reserve(codes.size());
  for (const auto& code : codes) {
    try {
      out.push_back(classify(code));
    } catch (const std::exception& e) {
      throw KnowspaceError("slide '" + code.slide_id + "': " + e.what());
    }
  }
  return out;
}

Diagnosis classify(const SlideCode& code, const Codebook& cb) {
  return KnowledgeSpace(cb).classify(code);
}

std::vector<Diagnosis> classify_batch(std::span<const SlideCode> codes, const Codebook& cb) {
  return KnowledgeSpace(cb).classify_batch(codes);
}

std::string diagnosis_to_json(const Diagnosis& d) {
  nlohmann::ordered_json j;
  j["slide_id"] = d.slide_id;
  j["predicted"] = d.predicted;
  j["via_shortcut"] = d.via_shortcut;
  if (d.shortcut_rule) {
    nlohmann::ordered_json rule;
    rule["scale"] = d.shortcut_rule->scale_index;
    rule["feature"] = d.shortcut_rule->feature;
    rule["subtype"] = d.shortcut_rule->subtype;
    j["shortcut_rule"] = rule;
  } else {
    j["shortcut_rule"] = nullptr;
  }
  j["tie"] = d.tie;
  j["coord"] = d.projected_coord;
  nlohmann::ordered_json codes, features, distances;
  for (int s = 1; s <= kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s - 1);
    codes[scale_key(s)] = to_bit_string(d.per_scale_bits[idx]);
    features[scale_key(s)] = d.per_scale_features[idx];
  }
  for (const auto& sd : d.per_subtype_min_distance) distances[sd.subtype] = sd.distance;
  j["codes"] = codes;
  j["features"] = features;
  j["distances"] = distances;
  return j.dump();
}

Diagnosis diagnosis_from_json(std::string_view line) {
  Diagnosis d;
  try {
    const auto j = nlohmann::ordered_json::parse(line);
    d.slide_id = j.at("slide_id").get<std::string>();
    d.predicted = j.at("predicted").get<std::string>();
    d.via_shortcut = j.at("via_shortcut").get<bool>();
    if (const auto& rule = j.at("shortcut_rule"); !rule.is_null())
      d.shortcut_rule = ShortcutRule{rule.at("scale").get<int>(), rule.at("feature").get<std::string>(),
                                     rule.at("subtype").get<std::string>()};
    d.tie = j.at("tie").get<bool>();
    d.projected_coord = j.at("coord").get<Coord3>();
    for (int s = 1; s <= kNumScales; ++s) {
      const auto idx = static_cast<std::size_t>(s - 1);
      d.per_scale_bits[idx] = parse_bit_string(j.at("codes").at(scale_key(s)).get<std::string>());
      d.per_scale_features[idx] =
          j.at("features").at(scale_key(s)).get<std::vector<std::string>>();
    }
    for (const auto& [subtype, dist] : j.at("distances").items())
      d.per_subtype_min_distance.push_back({subtype, dist.get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw KnowspaceError(std::string("malformed diagnosis record: ") + e.what());
  } catch (const CodebookError& e) {
    throw KnowspaceError(std::string("malformed diagnosis record: ") + e.what());
  }
  return d;
}

void write_diagnoses(std::ostream& out, std::span<const Diagnosis> diagnoses) {
  for (const auto& d : diagnoses) out << diagnosis_to_json(d) << '\n';
}

std::vector<Diagnosis> read_diagnoses(std::istream& in) {
  std::vector<Diagnosis> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(diagnosis_from_json(line));
    } catch (const KnowspaceError& e) {
      throw KnowspaceError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

SlideCode slide_code_of(const Diagnosis& d) {
  SlideCode code;
  code.slide_id = d.slide_id;
  for (int s = 1; s <= kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s - 1);
    code.codes[idx] = BinaryCode{s, d.per_scale_bits[idx]};
  }
  return code;
}

void write_space_csv(std::ostream& out, std::span<const Diagnosis> diagnoses,
                     const KnowledgeSpace& space,
                     std::span<const std::pair<std::string, std::string>> true_labels) {
  std::map<std::string, std::string> truth(true_labels.begin(), true_labels.end());
  out << "kind,slide_id,subtype,x,y,z,predicted,true_label,min_distance,via_shortcut\n";
  for (const auto& d : diagnoses) {
    const auto it = truth.find(d.slide_id);
    out << "prediction," << d.slide_id << ",," << d.projected_coord[0] << ','
        << d.projected_coord[1] << ',' << d.projected_coord[2] << ',' << d.predicted << ','
        << (it == truth.end() ? std::string() : it->second) << ','
        << csv::format_double(d.distance_to(d.predicted)) << ','
        << (d.via_shortcut ? "true" : "false") << '\n';
  }
  for (const auto& p : space.all_points())
    out << "knowledge,," << p.subtype << ',' << p.coord[0] << ',' << p.coord[1] << ','
        << p.coord[2] << ",,,,\n";
}

std::string render_report(const Diagnosis& d) {
  std::ostringstream out;
  out << "Slide " << d.slide_id << '\n';
  for (int s = 1; s <= kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s - 1);
    out << "  s=" << s << "  code " << to_bit_string(d.per_scale_bits[idx]) << " -> "
        << d.projected_coord[idx] << "  features: ";
    const auto& names = d.per_scale_features[idx];
    if (names.empty()) {
      out << "no features detected";
    } else {
      for (std::size_t i = 0; i < names.size(); ++i) out << (i ? ", " : "") << names[i];
    }
    out << '\n';
  }
  out << "  knowledge-space coordinate: (" << d.projected_coord[0] << ", " << d.projected_coord[1]
      << ", " << d.projected_coord[2] << ")\n";
  out << "  minimum distance per subtype:\n";
  std::size_t width = 0;
  for (const auto& sd : d.per_subtype_min_distance) width = std::max(width, sd.subtype.size());
  for (const auto& sd : d.per_subtype_min_distance) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", sd.distance);
    out << "    " << sd.subtype << std::string(width - sd.subtype.size(), ' ') << "  " << buf
        << (sd.subtype == d.predicted ? "  <" : "") << '\n';
  }
  out << "  predicted: " << d.predicted << '\n';
  if (d.via_shortcut && d.shortcut_rule) {
    out << "  shortcut: " << d.shortcut_rule->feature << " present at s="
        << d.shortcut_rule->scale_index << " -> " << d.shortcut_rule->subtype
        << " (distance metric bypassed)\n";
  } else {
    out << "  shortcut: none\n";
  }
  if (d.tie) {
    out << "  tie: minimum distance shared by";
    const double m = d.min_distance();
    for (const auto& sd : d.per_subtype_min_distance)
      if (sd.distance == m) out << ' ' << sd.subtype;
    out << "; first listed subtype chosen\n";
  }
  return out.str();
}

}  // namespace dk
