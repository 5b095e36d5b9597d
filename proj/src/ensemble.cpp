#include "dk/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include "json.hpp"

#include "csv.hpp"

namespace dk {

namespace {

void check_threshold(double v) {
  if (!(v > 0.0 && v < 1.0))
    throw EnsembleError("label threshold must lie in (0, 1), got " + csv::format_double(v));
}

void check_probs(const BagPrediction& pred) {
  for (double p : pred.probs) {
    if (std::isnan(p))
      throw EnsembleError("bag " + std::to_string(pred.bag_id) + " of slide '" + pred.slide_id +
                          "' has a NaN probability");
    if (p < 0.0 || p > 1.0)
      throw EnsembleError("bag " + std::to_string(pred.bag_id) + " of slide '" + pred.slide_id +
                          "' has a probability outside [0, 1]: " + csv::format_double(p));
  }
}

void check_scale(int scale, const std::string& context) {
  if (scale < 1 || scale > kNumScales)
    throw EnsembleError(context + ": scale must be 1, 2 or 3, got " + std::to_string(scale));
}

}  // namespace

BinaryCode binarize_bag(const BagPrediction& pred, double v) {
  check_threshold(v);
  check_probs(pred);
  BinaryCode code{pred.scale_index, Bits(pred.probs.size())};
  for (std::size_t i = 0; i < pred.probs.size(); ++i) code.bits[i] = pred.probs[i] > v;
  return code;
}

BinaryCode vote_slide(std::span<const BagPrediction> preds, double v) {
  check_threshold(v);
  if (preds.empty()) throw EnsembleError("cannot vote over an empty bag list");
  const auto& first = preds.front();
  std::vector<std::size_t> votes(first.probs.size(), 0);
  for (const auto& pred : preds) {
    if (pred.slide_id != first.slide_id || pred.scale_index != first.scale_index)
      throw EnsembleError("bags of slide '" + first.slide_id + "' s=" +
                          std::to_string(first.scale_index) + " mixed with slide '" +
                          pred.slide_id + "' s=" + std::to_string(pred.scale_index));
    if (pred.probs.size() != votes.size())
      throw EnsembleError("bag " + std::to_string(pred.bag_id) + " of slide '" + pred.slide_id +
                          "' has " + std::to_string(pred.probs.size()) + " probabilities, expected " +
                          std::to_string(votes.size()));
    check_probs(pred);
    for (std::size_t i = 0; i < votes.size(); ++i) votes[i] += pred.probs[i] > v;
  }
  // count > B/2 compared as 2 * count > B to stay in integers.
  BinaryCode code{first.scale_index, Bits(votes.size())};
  for (std::size_t i = 0; i < votes.size(); ++i) code.bits[i] = 2 * votes[i] > preds.size();
  return code;
}

std::vector<SlideCode> vote_all(std::span<const BagPrediction> preds, const Thresholds& thresholds) {
  std::map<std::string, std::array<std::vector<BagPrediction>, kNumScales>> groups;
  for (const auto& pred : preds) {
    check_scale(pred.scale_index, "slide '" + pred.slide_id + "'");
    groups[pred.slide_id][static_cast<std::size_t>(pred.scale_index - 1)].push_back(pred);
  }
  std::vector<SlideCode> out;
  out.reserve(groups.size());
  for (const auto& [slide_id, per_scale] : groups) {
    SlideCode code;
    code.slide_id = slide_id;
    for (int s = 1; s <= kNumScales; ++s) {
      const auto& bags = per_scale[static_cast<std::size_t>(s - 1)];
      if (bags.empty())
        throw EnsembleError("slide '" + slide_id + "' has no bags at scale " + std::to_string(s));
      code.codes[static_cast<std::size_t>(s - 1)] = vote_slide(bags, thresholds.at(s));
    }
    out.push_back(std::move(code));
  }
  return out;
}

void check_against_codebook(std::span<const BagPrediction> preds, const Codebook& cb) {
  for (const auto& pred : preds) {
    check_scale(pred.scale_index, "slide '" + pred.slide_id + "'");
    const auto expected = cb.schema(pred.scale_index).size();
    if (pred.probs.size() != expected)
      throw EnsembleError("bag " + std::to_string(pred.bag_id) + " of slide '" + pred.slide_id +
                          "' at s=" + std::to_string(pred.scale_index) + " has " +
                          std::to_string(pred.probs.size()) + " probabilities but codebook '" +
                          cb.disease_name + "' defines " + std::to_string(expected) + " features");
  }
}

std::vector<BagPrediction> read_bag_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw EnsembleError("bag-prediction file is empty");
  const auto header = csv::split(line);
  if (header.size() < 3 || header[0] != "slide_id" || header[1] != "scale" || header[2] != "bag_id")
    throw EnsembleError("bag-prediction header must start with slide_id,scale,bag_id");

  std::vector<BagPrediction> preds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = "line " + std::to_string(line_no);
    auto fields = csv::split(line);
    while (fields.size() > 3 && fields.back().empty()) fields.pop_back();
    if (fields.size() < 4) throw EnsembleError(where + ": expected at least one probability");
    BagPrediction pred;
    try {
      pred.slide_id = std::string(fields[0]);
      pred.scale_index = static_cast<int>(csv::parse_int(fields[1], where));
      pred.bag_id = static_cast<int>(csv::parse_int(fields[2], where));
      for (std::size_t i = 3; i < fields.size(); ++i)
        pred.probs.push_back(csv::parse_double(fields[i], where));
    } catch (const std::runtime_error& e) {
      throw EnsembleError(e.what());
    }
    if (pred.slide_id.empty()) throw EnsembleError(where + ": empty slide_id");
    check_scale(pred.scale_index, where);
    check_probs(pred);
    preds.push_back(std::move(pred));
  }
  return preds;
}

void write_bag_predictions_csv(std::ostream& out, std::span<const BagPrediction> preds) {
  std::size_t width = 0;
  for (const auto& p : preds) width = std::max(width, p.probs.size());
  out << "slide_id,scale,bag_id";
  for (std::size_t i = 1; i <= width; ++i) out << ",p_" << i;
  out << '\n';
  for (const auto& p : preds) {
    out << p.slide_id << ',' << p.scale_index << ',' << p.bag_id;
    for (double v : p.probs) out << ',' << csv::format_double(v);
    for (std::size_t i = p.probs.size(); i < width; ++i) out << ',';
    out << '\n';
  }
}

std::vector<BagPrediction> read_bag_predictions_jsonl(std::istream& in) {
  std::vector<BagPrediction> preds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    BagPrediction pred;
    try {
      const auto j = nlohmann::json::parse(line);
      pred.slide_id = j.at("slide_id").get<std::string>();
      pred.scale_index = j.at("scale").get<int>();
      pred.bag_id = j.at("bag_id").get<int>();
      for (const auto& p : j.at("probs")) {
        if (p.is_null()) throw EnsembleError(where + ": null probability");
        pred.probs.push_back(p.get<double>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw EnsembleError(where + ": " + e.what());
    }
    check_scale(pred.scale_index, where);
    check_probs(pred);
    preds.push_back(std::move(pred));
  }
  return preds;
}

void write_bag_predictions_jsonl(std::ostream& out, std::span<const BagPrediction> preds) {
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["slide_id"] = p.slide_id;
    j["scale"] = p.scale_index;
    j["bag_id"] = p.bag_id;
    j["probs"] = p.probs;
    out << j.dump() << '\n';
  }
}

std::vector<BagPrediction> load_bag_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EnsembleError("cannot open bag-prediction file '" + path.string() + "'");
  const auto ext = path.extension();
  if (ext == ".jsonl" || ext == ".json") return read_bag_predictions_jsonl(in);
  return read_bag_predictions_csv(in);
}

void save_bag_predictions(const std::filesystem::path& path, std::span<const BagPrediction> preds) {
  std::ofstream out(path);
  if (!out) throw EnsembleError("cannot write bag-prediction file '" + path.string() + "'");
  const auto ext = path.extension();
  if (ext == ".jsonl" || ext == ".json")
    write_bag_predictions_jsonl(out, preds);
  else
    write_bag_predictions_csv(out, preds);
}

}  // namespace dk
