#include "dk/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "csv.hpp"

namespace dk {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw CommandError("cannot write '" + path.string() + "'");
  return out;
}

void require_file(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path))
    throw CommandError(what + " not found: '" + path.string() + "'");
}

Codebook read_codebook(const std::filesystem::path& path) {
  require_file(path, "codebook");
  try {
    return load_codebook(path);
  } catch (const CodebookError& e) {
    throw CommandError(path.string() + ": " + e.what());
  }
}

bool keep(SplitFilter filter, Split split) {
  return filter == SplitFilter::all || (filter == SplitFilter::train) == (split == Split::train);
}

std::map<std::string, const ManifestEntry*> index_manifest(std::span<const ManifestEntry> m) {
  std::map<std::string, const ManifestEntry*> out;
  for (const auto& e : m)
    if (!out.emplace(e.slide_id, &e).second)
      throw CommandError("manifest lists slide '" + e.slide_id + "' twice");
  return out;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

SplitFilter parse_split_filter(std::string_view text) {
  if (text == "all") return SplitFilter::all;
  if (text == "train") return SplitFilter::train;
  if (text == "test") return SplitFilter::test;
  throw CommandError("split must be all, train or test, got '" + std::string(text) + "'");
}

void apply_threshold_flag(Thresholds& thresholds, std::string_view flag) {
  const auto eq = flag.find('=');
  if (eq == std::string_view::npos)
    throw CommandError("threshold must look like s=VALUE, got '" + std::string(flag) + "'");
  try {
    const auto s = csv::parse_int(flag.substr(0, eq), "threshold scale");
    const double v = csv::parse_double(flag.substr(eq + 1), "threshold value");
    if (s < 1 || s > kNumScales) throw CommandError("threshold scale must be 1, 2 or 3");
    if (!(v > 0.0 && v < 1.0)) throw CommandError("threshold must lie in (0, 1)");
    thresholds.v[static_cast<std::size_t>(s - 1)] = v;
  } catch (const CommandError&) {
    throw;
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
}

std::vector<double> parse_grid(std::string_view text) {
  std::vector<double> grid;
  try {
    if (text.find(':') != std::string_view::npos) {
      const auto a = text.find(':');
      const auto b = text.find(':', a + 1);
      if (b == std::string_view::npos) throw CommandError("grid range must be start:stop:step");
      const double start = csv::parse_double(text.substr(0, a), "grid start");
      const double stop = csv::parse_double(text.substr(a + 1, b - a - 1), "grid stop");
      const double step = csv::parse_double(text.substr(b + 1), "grid step");
      if (!(step > 0.0) || stop < start) throw CommandError("grid range is empty or backwards");
      const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
      for (std::size_t i = 0; i < n; ++i)
        grid.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
    } else {
      for (auto field : csv::split(text))
        if (!field.empty()) grid.push_back(csv::parse_double(field, "grid value"));
    }
  } catch (const CommandError&) {
    throw;
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  if (grid.empty()) throw CommandError("threshold grid is empty");
  for (double v : grid)
    if (!(v > 0.0 && v < 1.0)) throw CommandError("grid values must lie in (0, 1)");
  return grid;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int scale_index) {
  return dir / ("scale" + std::to_string(scale_index) + ".ckpt");
}

std::vector<SynthSlide> cmd_synth(const SynthOptions& opts, std::ostream& log) {
  const Codebook cb = read_codebook(opts.codebook);
  auto slides = generate_dataset(cb, opts.synth);
  save_dataset({opts.dataset}, slides);
  const auto n_train = std::count_if(slides.begin(), slides.end(),
                                     [](const SynthSlide& s) { return s.split == Split::train; });
  log << "wrote " << slides.size() << " slides (" << n_train << " train, "
      << slides.size() - static_cast<std::size_t>(n_train) << " test) to " << opts.dataset.string()
      << '\n';
  return slides;
}

std::vector<std::filesystem::path> cmd_train(const TrainOptions& opts, std::ostream& log) {
  const DatasetFiles files{opts.dataset};
  require_file(files.manifest(), "manifest");
  require_file(files.instances(), "instance file");
  opts.train.validate();
  const auto manifest = load_manifest(files.manifest());
  const auto by_id = index_manifest(manifest);
  const auto bags = load_training_bags(files, manifest);

  std::filesystem::create_directories(opts.checkpoint_dir);
  std::vector<std::filesystem::path> written;
  for (int s = 1; s <= kNumScales; ++s) {
    std::vector<Bag> scale_bags;
    for (const auto& bag : bags)
      if (bag.scale_index == s && by_id.at(bag.slide_id)->split == Split::train)
        scale_bags.push_back(bag);
    if (scale_bags.empty()) throw CommandError("no training bags at scale " + std::to_string(s));

    ModelParams params = train(scale_bags, opts.train, [&](int epoch, double loss) {
      log << "s=" << s << " epoch " << epoch << " loss " << fmt("%.6f", loss) << '\n';
    });
    const auto path = checkpoint_path(opts.checkpoint_dir, s);
    save_checkpoint(path, {s, opts.train, std::move(params)});
    written.push_back(path);
  }
  log << "wrote checkpoints to " << opts.checkpoint_dir.string() << '\n';
  return written;
}

std::vector<BagPrediction> collect_bag_predictions(const BagSource& source) {
  std::optional<std::vector<ManifestEntry>> manifest;
  if (source.dataset) {
    const DatasetFiles files{*source.dataset};
    require_file(files.manifest(), "manifest");
    manifest = load_manifest(files.manifest());
  }
  std::map<std::string, const ManifestEntry*> by_id;
  if (manifest) by_id = index_manifest(*manifest);
  auto selected = [&](const std::string& slide_id) {
    if (!manifest || source.split == SplitFilter::all) return true;
    const auto it = by_id.find(slide_id);
    if (it == by_id.end())
      throw CommandError("slide '" + slide_id + "' is not listed in the manifest");
    return keep(source.split, it->second->split);
  };

  std::vector<BagPrediction> preds;
  if (source.checkpoint_dir) {
    if (!manifest) throw CommandError("predicting from checkpoints needs --dataset");
    const DatasetFiles files{*source.dataset};
    require_file(files.instances(), "instance file");
    std::array<ModelParams, kNumScales> models;
    for (int s = 1; s <= kNumScales; ++s) {
      const auto path = checkpoint_path(*source.checkpoint_dir, s);
      require_file(path, "checkpoint");
      auto ckpt = load_checkpoint(path);
      if (ckpt.scale_index != s)
        throw CommandError("checkpoint '" + path.string() + "' was trained for scale " +
                           std::to_string(ckpt.scale_index));
      models[static_cast<std::size_t>(s - 1)] = std::move(ckpt.params);
    }
    for (const auto& bag : load_training_bags(files, *manifest))
      if (selected(bag.slide_id))
        preds.push_back(predict_bag_probs(models[static_cast<std::size_t>(bag.scale_index - 1)], bag));
  } else {
    std::filesystem::path path;
    if (source.bags)
      path = *source.bags;
    else if (source.dataset)
      path = DatasetFiles{*source.dataset}.bag_probs();
    else
      throw CommandError("need --bags, --dataset or --checkpoint-dir");
    require_file(path, "bag-prediction file");
    for (auto& p : load_bag_predictions(path))
      if (selected(p.slide_id)) preds.push_back(std::move(p));
  }
  if (preds.empty()) throw CommandError("no bag predictions selected");
  return preds;
}

std::vector<Diagnosis> cmd_predict(const PredictOptions& opts, std::ostream& log) {
  const KnowledgeSpace space(read_codebook(opts.codebook));
  const auto preds = collect_bag_predictions(opts.source);
  check_against_codebook(preds, space.codebook());
  if (opts.save_bags) save_bag_predictions(*opts.save_bags, preds);

  const auto codes = vote_all(preds, opts.thresholds);
  auto diagnoses = space.classify_batch(codes);
  auto out = open_out(opts.out);
  write_diagnoses(out, diagnoses);
  const auto shortcuts = std::count_if(diagnoses.begin(), diagnoses.end(),
                                       [](const Diagnosis& d) { return d.via_shortcut; });
  log << "diagnosed " << diagnoses.size() << " slides (" << shortcuts << " via shortcut) -> "
      << opts.out.string() << '\n';
  return diagnoses;
}

std::vector<Diagnosis> load_diagnoses(const std::filesystem::path& path) {
  require_file(path, "diagnosis file");
  std::ifstream in(path);
  return read_diagnoses(in);
}

Evaluation evaluate(std::span<const Diagnosis> diagnoses, std::span<const ManifestEntry> manifest,
                    std::vector<std::string> labels) {
  if (diagnoses.empty()) throw CommandError("no diagnoses to evaluate");
  const auto by_id = index_manifest(manifest);
  std::vector<std::string> truths, preds;
  for (const auto& d : diagnoses) {
    const auto it = by_id.find(d.slide_id);
    if (it == by_id.end())
      throw CommandError("diagnosed slide '" + d.slide_id + "' is not in the manifest");
    truths.push_back(it->second->subtype);
    preds.push_back(d.predicted);
  }
  if (labels.empty()) {
    for (const auto& e : manifest)
      if (std::find(labels.begin(), labels.end(), e.subtype) == labels.end())
        labels.push_back(e.subtype);
  }
  Evaluation ev;
  ev.confusion = confusion(truths, preds, labels);
  ev.report = compute_metrics(ev.confusion);
  return ev;
}

Evaluation cmd_evaluate(const EvaluateOptions& opts, std::ostream& log) {
  const auto diagnoses = load_diagnoses(opts.diagnoses);
  require_file(opts.manifest, "manifest");
  const auto manifest = load_manifest(opts.manifest);
  std::vector<std::string> labels;
  if (opts.codebook) labels = read_codebook(*opts.codebook).subtypes;

  const auto ev = evaluate(diagnoses, manifest, labels);
  const auto table = metrics_to_table(ev.report, ev.confusion);
  log << table;
  if (opts.out) {
    auto json = open_out(*opts.out);
    json << metrics_to_json(ev.report, ev.confusion) << '\n';
    auto txt_path = *opts.out;
    txt_path.replace_extension(".txt");
    auto txt = open_out(txt_path);
    txt << table;
  }
  return ev;
}

std::vector<SweepPoint> cmd_sweep(const SweepOptions& opts, std::ostream& log) {
  if (opts.grid.empty()) throw CommandError("threshold grid is empty");
  if (!opts.source.dataset) throw CommandError("sweep needs --dataset for ground truth");
  const KnowledgeSpace space(read_codebook(opts.codebook));
  const auto preds = collect_bag_predictions(opts.source);
  check_against_codebook(preds, space.codebook());
  const auto manifest = load_manifest(DatasetFiles{*opts.source.dataset}.manifest());

  std::vector<SweepPoint> points;
  for (int s = 1; s <= kNumScales; ++s) {
    for (double v : opts.grid) {
      Thresholds t = opts.base;
      t.v[static_cast<std::size_t>(s - 1)] = v;
      const auto diagnoses = space.classify_batch(vote_all(preds, t));
      const auto ev = evaluate(diagnoses, manifest, space.codebook().subtypes);
      points.push_back({s, v, ev.report.accuracy});
    }
  }

  auto write = [&](std::ostream& out) {
    out << "scale,v,accuracy\n";
    for (const auto& p : points)
      out << p.scale_index << ',' << csv::format_double(p.v) << ',' << csv::format_double(p.accuracy)
          << '\n';
  };
  if (opts.out) {
    auto out = open_out(*opts.out);
    write(out);
    log << "wrote " << points.size() << " sweep points to " << opts.out->string() << '\n';
  } else {
    write(log);
  }
  return points;
}

void cmd_export_space(const ExportSpaceOptions& opts, std::ostream& log) {
  const KnowledgeSpace space(read_codebook(opts.codebook));
  const auto diagnoses = load_diagnoses(opts.diagnoses);
  std::vector<std::pair<std::string, std::string>> truth;
  if (opts.manifest) {
    require_file(*opts.manifest, "manifest");
    for (const auto& e : load_manifest(*opts.manifest)) truth.emplace_back(e.slide_id, e.subtype);
  }
  auto out = open_out(opts.out);
  write_space_csv(out, diagnoses, space, truth);
  log << "wrote " << diagnoses.size() << " prediction rows and " << space.all_points().size()
      << " knowledge rows to " << opts.out.string() << '\n';
}

void cmd_report(const ReportOptions& opts, std::ostream& out) {
  for (const auto& d : load_diagnoses(opts.diagnoses)) {
    if (d.slide_id == opts.slide_id) {
      out << render_report(d);
      return;
    }
  }
  throw CommandError("slide '" + opts.slide_id + "' not found in '" + opts.diagnoses.string() + "'");
}

}  // namespace dk
