#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dk/commands.hpp"
#include "support.hpp"

using namespace dk;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SynthOptions synth_options(const std::string& codebook, const std::filesystem::path& dir,
                           int per_subtype = 6) {
  SynthOptions o;
  o.codebook = test::data_path(codebook);
  o.dataset = dir;
  o.synth.slides_per_subtype = per_subtype;
  o.synth.bags_per_slide = 3;
  o.synth.instances_per_bag = 4;
  o.synth.instance_width = 12;
  return o;
}

std::map<std::string, std::string> truth_of(const std::filesystem::path& dataset) {
  std::map<std::string, std::string> out;
  for (const auto& e : load_manifest(DatasetFiles{dataset}.manifest())) out[e.slide_id] = e.subtype;
  return out;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(DK_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc;
}

}  // namespace

TEST_CASE("split filters and threshold flags parse") {
  CHECK(parse_split_filter("all") == SplitFilter::all);
  CHECK(parse_split_filter("test") == SplitFilter::test);
  CHECK_THROWS_AS(parse_split_filter("dev"), CommandError);

  Thresholds t;
  apply_threshold_flag(t, "1=0.3");
  apply_threshold_flag(t, "2=0.6");
  CHECK(t.v == std::array<double, 3>{0.3, 0.6, 0.5});
  CHECK_THROWS_AS(apply_threshold_flag(t, "4=0.3"), CommandError);
  CHECK_THROWS_AS(apply_threshold_flag(t, "1=1.0"), CommandError);
  CHECK_THROWS_AS(apply_threshold_flag(t, "1:0.3"), CommandError);
  CHECK_THROWS_AS(apply_threshold_flag(t, "x=0.3"), CommandError);

  const auto grid = parse_grid("0.1:0.9:0.1");
  REQUIRE(grid.size() == 9);
  CHECK(grid[2] == 0.3);
  CHECK(grid[8] == 0.9);
  CHECK(parse_grid("0.5") == std::vector<double>{0.5});
  CHECK(parse_grid("0.2,0.4") == std::vector<double>{0.2, 0.4});
  CHECK_THROWS_AS(parse_grid(""), CommandError);
  CHECK_THROWS_AS(parse_grid("0.9:0.1:0.1"), CommandError);
  CHECK_THROWS_AS(parse_grid("0,0.5"), CommandError);
}

TEST_CASE("synth writes a complete dataset") {
  test::ScratchDir dir("cmd-synth");
  std::ostringstream log;
  const auto slides = cmd_synth(synth_options("rcc.codebook", dir / "d", 1), log);
  CHECK(slides.size() == 3);
  CHECK(load_manifest(DatasetFiles{dir / "d"}.manifest()).size() == 3);
  CHECK(std::filesystem::exists(DatasetFiles{dir / "d"}.instances()));

  auto bad = synth_options("rcc.codebook", dir / "e");
  bad.codebook = dir / "nope.codebook";
  try {
    cmd_synth(bad, log);
    FAIL("expected an error");
  } catch (const CommandError& e) {
    CHECK(std::string(e.what()).find("nope.codebook") != std::string::npos);
  }
}

TEST_CASE("noiseless prediction recovers every subtype, from the dataset or an external file") {
  test::ScratchDir dir("cmd-predict");
  std::ostringstream log;
  cmd_synth(synth_options("rcc.codebook", dir / "d"), log);
  const auto truth = truth_of(dir / "d");

  PredictOptions po;
  po.codebook = test::data_path("rcc.codebook");
  po.source.dataset = dir / "d";
  po.source.split = SplitFilter::all;
  po.out = dir / "all.jsonl";
  const auto diagnoses = cmd_predict(po, log);
  CHECK(diagnoses.size() == 18);
  for (const auto& d : diagnoses) CHECK(d.predicted == truth.at(d.slide_id));
  CHECK(std::is_sorted(diagnoses.begin(), diagnoses.end(),
                       [](const Diagnosis& a, const Diagnosis& b) { return a.slide_id < b.slide_id; }));

  PredictOptions ext = po;
  ext.source.dataset.reset();
  ext.source.bags = DatasetFiles{dir / "d"}.bag_probs();
  ext.out = dir / "ext.jsonl";
  CHECK(cmd_predict(ext, log) == diagnoses);
  CHECK(slurp(dir / "ext.jsonl") == slurp(dir / "all.jsonl"));

  po.source.split = SplitFilter::test;
  po.out = dir / "test.jsonl";
  const auto test_only = cmd_predict(po, log);
  const auto manifest = load_manifest(DatasetFiles{dir / "d"}.manifest());
  const auto n_test = std::count_if(manifest.begin(), manifest.end(),
                                    [](const ManifestEntry& e) { return e.split == Split::test; });
  CHECK(test_only.size() == static_cast<std::size_t>(n_test));

  PredictOptions mismatch = po;
  mismatch.codebook = test::data_path("sc.codebook");
  CHECK_THROWS(cmd_predict(mismatch, log));
}

TEST_CASE("SC slides with Ep at s=1 are diagnosed BD through the shortcut") {
  test::ScratchDir dir("cmd-sc");
  std::ostringstream log;
  cmd_synth(synth_options("sc.codebook", dir / "d", 10), log);
  const auto cb = load_codebook(test::data_path("sc.codebook"));
  const auto ep = *cb.schema(1).index_of("Ep");

  PredictOptions po;
  po.codebook = test::data_path("sc.codebook");
  po.source.dataset = dir / "d";
  po.source.split = SplitFilter::all;
  po.out = dir / "d.jsonl";
  int shortcuts = 0;
  for (const auto& d : cmd_predict(po, log)) {
    if (d.per_scale_bits[0][ep]) {
      CHECK(d.via_shortcut);
      CHECK(d.predicted == "BD");
      ++shortcuts;
    }
  }
  CHECK(shortcuts > 0);
}

TEST_CASE("evaluate") {
  test::ScratchDir dir("cmd-eval");
  std::ostringstream log;

  SUBCASE("perfect predictions") {
    cmd_synth(synth_options("rcc.codebook", dir / "d"), log);
    PredictOptions po;
    po.codebook = test::data_path("rcc.codebook");
    po.source.dataset = dir / "d";
    po.out = dir / "p.jsonl";
    cmd_predict(po, log);
    EvaluateOptions eo{dir / "p.jsonl", DatasetFiles{dir / "d"}.manifest(),
                       test::data_path("rcc.codebook"), dir / "m.json"};
    const auto ev = cmd_evaluate(eo, log);
    CHECK(ev.report.accuracy == 1.0);
    CHECK(ev.report.macro_f1 == 1.0);
    CHECK(std::filesystem::exists(dir / "m.json"));
    CHECK(std::filesystem::exists(dir / "m.txt"));
  }

  SUBCASE("a fixed confusion matrix reproduces its metrics end to end") {
    const std::vector<std::string> labels{"A", "B", "C"};
    const int counts[3][3] = {{8, 2, 0}, {1, 9, 0}, {0, 0, 10}};
    std::vector<Diagnosis> ds;
    std::vector<ManifestEntry> manifest;
    int n = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int c = 0; c < counts[i][j]; ++c) {
          const std::string id = "s" + std::to_string(n++);
          Diagnosis d;
          d.slide_id = id;
          d.predicted = labels[j];
          ds.push_back(d);
          manifest.push_back({id, labels[i], Split::test, {}});
        }
    const auto ev = evaluate(ds, manifest, labels);
    CHECK(ev.report.accuracy == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(ev.report.macro_precision == doctest::Approx(0.9023569023569024).epsilon(1e-12));
    CHECK(ev.report.macro_recall == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(ev.report.macro_specificity == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(ev.report.macro_f1 == doctest::Approx(0.899749373433584).epsilon(1e-12));
  }

  SUBCASE("slide ids must match the manifest") {
    Diagnosis d;
    d.slide_id = "x";
    d.predicted = "A";
    const std::vector<ManifestEntry> manifest{{"y", "A", Split::test, {}}};
    CHECK_THROWS_AS(evaluate(std::vector<Diagnosis>{d}, manifest, {"A", "B"}), CommandError);
    CHECK_THROWS_AS(evaluate(std::vector<Diagnosis>{}, manifest, {"A", "B"}), CommandError);
  }
}

TEST_CASE("sweep") {
  test::ScratchDir dir("cmd-sweep");
  std::ostringstream log;

  SUBCASE("noiseless data is perfect at every threshold") {
    cmd_synth(synth_options("rcc.codebook", dir / "d"), log);
    SweepOptions so;
    so.codebook = test::data_path("rcc.codebook");
    so.source.dataset = dir / "d";
    so.grid = parse_grid("0.1:0.9:0.1");
    so.out = dir / "sweep.csv";
    const auto points = cmd_sweep(so, log);
    CHECK(points.size() == 27);
    for (const auto& p : points) CHECK(p.accuracy == 1.0);
    const auto csv = slurp(dir / "sweep.csv");
    CHECK(csv.rfind("scale,v,accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 28);
  }

  SUBCASE("noisy curve matches an independent per-threshold recomputation") {
    auto opts = synth_options("sc.codebook", dir / "n", 20);
    opts.synth.flip_noise = 0.1;
    opts.synth.prob_jitter = 0.45;
    opts.synth.bags_per_slide = 4;
    const auto slides = cmd_synth(opts, log);
    const auto cb = load_codebook(test::data_path("sc.codebook"));
    const auto points_oracle = test::oracle::knowledge_points(cb);

    SweepOptions so;
    so.codebook = test::data_path("sc.codebook");
    so.source.dataset = dir / "n";
    so.grid = parse_grid("0.1:0.9:0.2");
    so.base.v = {0.5, 0.5, 0.5};
    const auto points = cmd_sweep(so, log);
    REQUIRE(points.size() == 15);

    bool varied = false;
    for (const auto& pt : points) {
      std::array<double, 3> v = so.base.v;
      v[static_cast<std::size_t>(pt.scale_index - 1)] = pt.v;
      std::size_t correct = 0, total = 0;
      for (const auto& slide : slides) {
        if (slide.split != Split::test) continue;
        std::array<Bits, 3> codes;
        for (int s = 0; s < 3; ++s) {
          std::vector<std::vector<double>> probs;
          for (const auto& bag : slide.bag_probs[s]) probs.push_back(bag.probs);
          codes[s] = test::oracle::vote(probs, v[s]);
        }
        correct += test::oracle::classify(codes, cb, points_oracle).predicted == slide.true_subtype;
        ++total;
      }
      CHECK(pt.accuracy == doctest::Approx(static_cast<double>(correct) / total).epsilon(1e-15));
      varied |= pt.accuracy != points.front().accuracy;
    }
    CHECK(varied);
  }

  SUBCASE("a single v = 0.5 reproduces evaluate exactly") {
    auto opts = synth_options("rcc.codebook", dir / "n", 20);
    opts.synth.flip_noise = 0.15;
    cmd_synth(opts, log);
    SweepOptions so;
    so.codebook = test::data_path("rcc.codebook");
    so.source.dataset = dir / "n";
    so.grid = {0.5};
    const auto points = cmd_sweep(so, log);

    PredictOptions po;
    po.codebook = so.codebook;
    po.source.dataset = dir / "n";
    po.out = dir / "p.jsonl";
    cmd_predict(po, log);
    const auto ev = cmd_evaluate({dir / "p.jsonl", DatasetFiles{dir / "n"}.manifest(), so.codebook, {}}, log);
    for (const auto& p : points) CHECK(p.accuracy == ev.report.accuracy);
  }

  SUBCASE("empty grid") {
    SweepOptions so;
    so.codebook = test::data_path("rcc.codebook");
    CHECK_THROWS_AS(cmd_sweep(so, log), CommandError);
  }
}

TEST_CASE("export-space and report") {
  test::ScratchDir dir("cmd-space");
  std::ostringstream log;
  cmd_synth(synth_options("rcc.codebook", dir / "d"), log);
  PredictOptions po;
  po.codebook = test::data_path("rcc.codebook");
  po.source.dataset = dir / "d";
  po.source.split = SplitFilter::all;
  po.out = dir / "p.jsonl";
  const auto ds = cmd_predict(po, log);

  cmd_export_space({po.codebook, dir / "p.jsonl", DatasetFiles{dir / "d"}.manifest(), dir / "s.csv"}, log);
  const auto csv = slurp(dir / "s.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 18 + 90);

  { std::ofstream(dir / "empty.jsonl"); }
  cmd_export_space({po.codebook, dir / "empty.jsonl", std::nullopt, dir / "k.csv"}, log);
  const auto only = slurp(dir / "k.csv");
  CHECK(std::count(only.begin(), only.end(), '\n') == 91);
  CHECK(only.find("prediction,") == std::string::npos);

  std::ostringstream report;
  cmd_report({dir / "p.jsonl", ds.front().slide_id}, report);
  CHECK(report.str() == render_report(ds.front()));
  CHECK_THROWS_AS(cmd_report({dir / "p.jsonl", "NOPE-0000"}, report), CommandError);
}

TEST_CASE("report of the worked SCC example") {
  test::ScratchDir dir("cmd-report");
  const auto d = classify(test::make_code("SCC-EX", parse_bit_string("000001100"),
                                          parse_bit_string("0000"), parse_bit_string("11000")),
                          load_codebook(test::data_path("sc.codebook")));
  {
    std::ofstream out(dir / "d.jsonl");
    write_diagnoses(out, std::vector<Diagnosis>{d});
  }
  std::ostringstream report;
  cmd_report({dir / "d.jsonl", "SCC-EX"}, report);
  const auto text = report.str();
  CHECK(text.find("s=1  code 000001100 -> 12  features: Ke, Pie") != std::string::npos);
  CHECK(text.find("s=2  code 0000 -> 0  features: no features detected") != std::string::npos);
  CHECK(text.find("s=3  code 11000 -> 24  features: IB, MC") != std::string::npos);
  CHECK(text.find("predicted: SCC") != std::string::npos);
}

TEST_CASE("training through the command layer") {
  test::ScratchDir dir("cmd-train");
  std::ostringstream log;
  auto so = synth_options("rcc.codebook", dir / "d", 4);
  so.synth.instance_width = 8;
  cmd_synth(so, log);

  TrainOptions to;
  to.dataset = dir / "d";
  to.checkpoint_dir = dir / "ck";
  to.train.epochs = 3;
  to.train.hidden_width = 8;
  to.train.reduced_width = 16;
  std::ostringstream train_log;
  const auto paths = cmd_train(to, train_log);
  REQUIRE(paths.size() == 3);
  CHECK(train_log.str().find("s=3 epoch 3 loss") != std::string::npos);

  SUBCASE("reruns produce identical checkpoint files") {
    auto again = to;
    again.checkpoint_dir = dir / "ck2";
    cmd_train(again, log);
    for (int s = 1; s <= 3; ++s)
      CHECK(slurp(checkpoint_path(dir / "ck", s)) == slurp(checkpoint_path(dir / "ck2", s)));
  }

  SUBCASE("predict from checkpoints equals the manual pipeline") {
    PredictOptions po;
    po.codebook = test::data_path("rcc.codebook");
    po.source.dataset = dir / "d";
    po.source.checkpoint_dir = dir / "ck";
    po.source.split = SplitFilter::all;
    po.out = dir / "p.jsonl";
    const auto got = cmd_predict(po, log);

    std::vector<BagPrediction> preds;
    const DatasetFiles files{dir / "d"};
    const auto manifest = load_manifest(files.manifest());
    for (const auto& bag : load_training_bags(files, manifest))
      preds.push_back(predict_bag_probs(load_checkpoint(checkpoint_path(dir / "ck", bag.scale_index)).params, bag));
    const auto cb = load_codebook(po.codebook);
    std::vector<Diagnosis> manual;
    for (const auto& code : vote_all(preds, Thresholds{})) manual.push_back(classify(code, cb));
    CHECK(got == manual);
  }

  SUBCASE("zero learning rate prints a constant loss") {
    auto flat = to;
    flat.checkpoint_dir = dir / "flat";
    flat.train.learning_rate = 0.0;
    std::ostringstream flat_log;
    cmd_train(flat, flat_log);
    std::istringstream in(flat_log.str());
    std::string line;
    std::map<std::string, std::set<std::string>> losses;
    while (std::getline(in, line)) {
      const auto pos = line.find(" loss ");
      if (pos != std::string::npos) losses[line.substr(0, 3)].insert(line.substr(pos + 6));
    }
    CHECK(losses.size() == 3);
    for (const auto& [scale, values] : losses) CHECK(values.size() == 1);
  }
}

TEST_CASE("the dk executable runs the pipeline and reports errors on one line") {
  test::ScratchDir dir("cli");
  const auto log = dir / "log.txt";
  const std::string rcc = "\"" + test::data_path("rcc.codebook").string() + "\"";
  const std::string ds = "\"" + (dir / "d").string() + "\"";

  CHECK(run_cli("synth --codebook " + rcc + " --dataset " + ds +
                    " --slides-per-subtype 4 --bags-per-slide 3 --instances 3 --width 8",
                log) == 0);
  CHECK(run_cli("train --dataset " + ds + " --checkpoint-dir " + ds +
                    "/ck --epochs 2 --hidden 4 --reduced 8 --lr 0.01 --momentum 0.5 --seed 3",
                log) == 0);
  CHECK(slurp(log).find("s=2 epoch 2 loss") != std::string::npos);
  CHECK(run_cli("predict --codebook " + rcc + " --dataset " + ds + " --checkpoint-dir " + ds +
                    "/ck --split all --threshold 1=0.4 --threshold 3=0.6 --out " + ds + "/p.jsonl",
                log) == 0);
  CHECK(run_cli("predict --codebook " + rcc + " --dataset " + ds + " --out " + ds + "/q.jsonl", log) == 0);
  CHECK(run_cli("evaluate --diagnoses " + ds + "/q.jsonl --dataset " + ds + " --out " + ds + "/m.json",
                log) == 0);
  CHECK(slurp(log).find("ACC") != std::string::npos);
  CHECK(run_cli("sweep --codebook " + rcc + " --dataset " + ds + " --grid 0.5 --out " + ds + "/s.csv",
                log) == 0);
  CHECK(run_cli("export-space --codebook " + rcc + " --diagnoses " + ds + "/q.jsonl --out " + ds +
                    "/space.csv",
                log) == 0);
  const auto first = load_diagnoses(dir / "d" / "q.jsonl").front().slide_id;
  CHECK(run_cli("report --diagnoses " + ds + "/q.jsonl --slide " + first, log) == 0);
  CHECK(slurp(log).find("predicted:") != std::string::npos);

  CHECK(run_cli("synth --codebook /no/such.codebook --dataset " + ds + "/x", log) != 0);
  const auto err = slurp(log);
  CHECK(err.rfind("dk: error: ", 0) == 0);
  CHECK(err.find("/no/such.codebook") != std::string::npos);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);

  CHECK(run_cli("predict --codebook " + rcc + " --dataset " + ds + " --threshold 1=2 --out " + ds +
                    "/r.jsonl",
                log) != 0);
  CHECK(run_cli("report --diagnoses " + ds + "/q.jsonl --slide NOPE", log) != 0);
  CHECK(run_cli("sweep --codebook " + rcc + " --dataset " + ds + " --grid ,", log) != 0);
  CHECK(run_cli("bogus", log) != 0);
}
