#include "dk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include "csv.hpp"

namespace dk {

namespace {

double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

std::size_t pick(std::mt19937_64& gen, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(gen) * static_cast<double>(n)));
}

std::mt19937_64 slide_rng(std::uint64_t seed, std::size_t subtype_index, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(subtype_index), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SynthError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SynthError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (slides_per_subtype < 1) throw SynthError("slides_per_subtype must be at least 1");
  for (const auto& [name, n] : subtype_counts)
    if (n < 1) throw SynthError("slide count for '" + name + "' must be at least 1");
  if (bags_per_slide < 1) throw SynthError("bags_per_slide must be at least 1");
  if (instances_per_bag < 1) throw SynthError("instances_per_bag must be at least 1");
  if (instance_width < 1) throw SynthError("instance_width must be at least 1");
  if (!(flip_noise >= 0.0 && flip_noise < 0.5)) throw SynthError("flip_noise must lie in [0, 0.5)");
  if (!(prob_jitter >= 0.0 && prob_jitter <= 0.5))
    throw SynthError("prob_jitter must lie in [0, 0.5]");
  if (!std::isfinite(signal)) throw SynthError("signal must be finite");
}

int SynthConfig::count_for(std::string_view subtype) const {
  for (const auto& [name, n] : subtype_counts)
    if (name == subtype) return n;
  return slides_per_subtype;
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw SynthError("unknown split '" + std::string(text) + "'");
}

std::string make_slide_id(std::string_view subtype, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return std::string(subtype) + "-" + buf;
}

SynthSlide generate_slide(const Codebook& cb, std::string_view subtype, const SynthConfig& cfg,
                          int index) {
  cfg.validate();
  const auto subtype_index = cb.subtype_index(subtype);
  if (!subtype_index) throw SynthError("unknown subtype '" + std::string(subtype) + "'");
  for (const auto& schema : cb.schemas)
    if (schema.size() > static_cast<std::size_t>(cfg.instance_width))
      throw SynthError("instance_width " + std::to_string(cfg.instance_width) +
                       " is smaller than the " + std::to_string(schema.size()) +
                       " features at scale " + std::to_string(schema.scale_index));

  auto gen = slide_rng(cfg.seed, *subtype_index, index);
  std::normal_distribution<double> noise(0.0, 1.0);

  SynthSlide slide;
  slide.slide_id = make_slide_id(subtype, index);
  slide.true_subtype = std::string(subtype);
  slide.true_codes.slide_id = slide.slide_id;

  // One row per scale, each uniform over that scale's rows: uniform over the
  // Cartesian product of row triples.
  for (int s = 1; s <= kNumScales; ++s) {
    const auto rows = cb.rows_for(subtype, s);
    Bits bits = rows.empty() ? Bits(cb.schema(s).size(), 0) : rows[pick(gen, rows.size())]->bits;
    slide.true_codes.codes[static_cast<std::size_t>(s - 1)] = BinaryCode{s, std::move(bits)};
  }

  const auto Q = static_cast<std::size_t>(cfg.instance_width);
  for (int s = 1; s <= kNumScales; ++s) {
    const auto idx = static_cast<std::size_t>(s - 1);
    const Bits& truth = slide.true_codes.codes[idx].bits;
    for (int b = 0; b < cfg.bags_per_slide; ++b) {
      BagPrediction pred{slide.slide_id, s, b, std::vector<double>(truth.size())};
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const double u = uniform01(gen);
        const bool flip = uniform01(gen) < cfg.flip_noise;
        double p = truth[i] ? 1.0 - cfg.prob_jitter * u : cfg.prob_jitter * u;
        if (flip) p = 1.0 - p;
        pred.probs[i] = p;
      }
      slide.bag_probs[idx].push_back(std::move(pred));

      Bag bag;
      bag.slide_id = slide.slide_id;
      bag.scale_index = s;
      bag.bag_id = b;
      bag.width = Q;
      bag.label = truth;
      bag.instances.resize(Q * static_cast<std::size_t>(cfg.instances_per_bag));
      for (int k = 0; k < cfg.instances_per_bag; ++k) {
        double* x = bag.instances.data() + static_cast<std::size_t>(k) * Q;
        for (std::size_t j = 0; j < Q; ++j) {
          const double mean = j < truth.size() ? (truth[j] ? cfg.signal : -cfg.signal) : 0.0;
          x[j] = mean + noise(gen);
        }
      }
      slide.bags[idx].push_back(std::move(bag));
    }
  }
  return slide;
}

std::vector<SynthSlide> generate_dataset(const Codebook& cb, const SynthConfig& cfg) {
  cfg.validate();
  for (const auto& [name, n] : cfg.subtype_counts)
    if (!cb.subtype_index(name))
      throw SynthError("slide count given for unknown subtype '" + name + "'");

  std::vector<SynthSlide> slides;
  std::vector<std::vector<std::size_t>> by_subtype(cb.subtypes.size());
  for (std::size_t j = 0; j < cb.subtypes.size(); ++j) {
    const int n = cfg.count_for(cb.subtypes[j]);
    for (int i = 0; i < n; ++i) {
      by_subtype[j].push_back(slides.size());
      slides.push_back(generate_slide(cb, cb.subtypes[j], cfg, i));
    }
  }

  const std::size_t total = slides.size();
  const std::size_t n_train =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(total))));
  const std::size_t n_test = total - n_train;

  // Test slots are shared out in proportion to subtype size, leftovers going
  // to the largest remainders (earlier subtypes first on equal remainders).
  std::vector<std::size_t> quota(by_subtype.size());
  std::vector<std::size_t> order(by_subtype.size());
  std::size_t given = 0;
  for (std::size_t j = 0; j < by_subtype.size(); ++j) {
    quota[j] = n_test * by_subtype[j].size() / total;
    given += quota[j];
    order[j] = j;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return n_test * by_subtype[a].size() % total > n_test * by_subtype[b].size() % total;
  });
  for (std::size_t i = 0; given < n_test; ++i, ++given) ++quota[order[i]];

  for (std::size_t j = 0; j < by_subtype.size(); ++j) {
    const auto& members = by_subtype[j];
    for (std::size_t i = 0; i < members.size(); ++i)
      slides[members[i]].split = i + quota[j] >= members.size() ? Split::test : Split::train;
  }
  return slides;
}

std::vector<ManifestEntry> manifest_of(std::span<const SynthSlide> slides) {
  std::vector<ManifestEntry> out;
  out.reserve(slides.size());
  for (const auto& s : slides) out.push_back({s.slide_id, s.true_subtype, s.split, s.true_codes});
  return out;
}

void write_manifest(std::ostream& out, std::span<const ManifestEntry> entries) {
  out << "slide_id,subtype,split,code_s1,code_s2,code_s3\n";
  for (const auto& e : entries) {
    out << e.slide_id << ',' << e.subtype << ',' << to_string(e.split);
    for (const auto& code : e.true_codes.codes) out << ',' << to_bit_string(code.bits);
    out << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || csv::split(line).size() != 6 || csv::split(line)[0] != "slide_id")
    throw SynthError("manifest header must be slide_id,subtype,split,code_s1,code_s2,code_s3");
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    const std::string where = "manifest line " + std::to_string(line_no);
    if (f.size() != 6) throw SynthError(where + ": expected 6 fields");
    ManifestEntry e;
    e.slide_id = std::string(f[0]);
    e.subtype = std::string(f[1]);
    try {
      e.split = parse_split(f[2]);
      e.true_codes.slide_id = e.slide_id;
      for (int s = 1; s <= kNumScales; ++s)
        e.true_codes.codes[static_cast<std::size_t>(s - 1)] =
            BinaryCode{s, parse_bit_string(f[static_cast<std::size_t>(2 + s)])};
    } catch (const std::exception& ex) {
      throw SynthError(where + ": " + ex.what());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_instances(std::ostream& out, std::span<const Bag> bags) {
  std::size_t width = 0;
  for (const auto& b : bags) width = std::max(width, b.width);
  out << "slide_id,scale,bag_id,instance";
  for (std::size_t j = 1; j <= width; ++j) out << ",x_" << j;
  out << '\n';
  for (const auto& b : bags) {
    if (b.width != width) throw SynthError("instance widths differ across bags");
    for (std::size_t i = 0; i < b.size(); ++i) {
      out << b.slide_id << ',' << b.scale_index << ',' << b.bag_id << ',' << i;
      for (double v : b.instance(i)) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
}

std::vector<Bag> read_instances(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SynthError("instance file is empty");
  const auto header = csv::split(line);
  if (header.size() < 5 || header[0] != "slide_id" || header[3] != "instance")
    throw SynthError("instance header must be slide_id,scale,bag_id,instance,x_1..x_Q");
  const std::size_t width = header.size() - 4;

  std::vector<Bag> bags;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    const std::string where = "instance line " + std::to_string(line_no);
    if (f.size() != header.size()) throw SynthError(where + ": expected " + std::to_string(header.size()) + " fields");
    try {
      const std::string slide_id(f[0]);
      const int scale = static_cast<int>(csv::parse_int(f[1], where));
      const int bag_id = static_cast<int>(csv::parse_int(f[2], where));
      if (bags.empty() || bags.back().slide_id != slide_id || bags.back().scale_index != scale ||
          bags.back().bag_id != bag_id) {
        Bag bag;
        bag.slide_id = slide_id;
        bag.scale_index = scale;
        bag.bag_id = bag_id;
        bag.width = width;
        bags.push_back(std::move(bag));
      }
      for (std::size_t j = 4; j < f.size(); ++j)
        bags.back().instances.push_back(csv::parse_double(f[j], where));
    } catch (const SynthError&) {
      throw;
    } catch (const std::exception& ex) {
      throw SynthError(ex.what());
    }
  }
  return bags;
}

void save_dataset(const DatasetFiles& files, std::span<const SynthSlide> slides) {
  std::filesystem::create_directories(files.dir);
  {
    auto out = open_out(files.manifest());
    const auto manifest = manifest_of(slides);
    write_manifest(out, manifest);
  }
  std::vector<BagPrediction> probs;
  std::vector<Bag> bags;
  for (const auto& s : slides)
    for (int sc = 0; sc < kNumScales; ++sc) {
      probs.insert(probs.end(), s.bag_probs[static_cast<std::size_t>(sc)].begin(),
                   s.bag_probs[static_cast<std::size_t>(sc)].end());
      bags.insert(bags.end(), s.bags[static_cast<std::size_t>(sc)].begin(),
                  s.bags[static_cast<std::size_t>(sc)].end());
    }
  save_bag_predictions(files.bag_probs(), probs);
  auto out = open_out(files.instances());
  write_instances(out, bags);
  if (!out) throw SynthError("failed writing '" + files.instances().string() + "'");
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_manifest(in);
}

std::vector<Bag> load_training_bags(const DatasetFiles& files,
                                    std::span<const ManifestEntry> manifest) {
  auto in = open_in(files.instances());
  auto bags = read_instances(in);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.slide_id] = &e;
  for (auto& bag : bags) {
    const auto it = by_id.find(bag.slide_id);
    if (it == by_id.end())
      throw SynthError("instance file mentions slide '" + bag.slide_id + "' missing from the manifest");
    if (bag.scale_index < 1 || bag.scale_index > kNumScales)
      throw SynthError("slide '" + bag.slide_id + "' has invalid scale " + std::to_string(bag.scale_index));
    bag.label = it->second->true_codes.codes[static_cast<std::size_t>(bag.scale_index - 1)].bits;
  }
  return bags;
}

}  // namespace dk
