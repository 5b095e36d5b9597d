// dk: synthesize, train, predict, evaluate and inspect D&K subtype diagnoses.

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dk/commands.hpp"

namespace {

using dk::CommandError;

struct SourceFlags {
  std::string dataset;
  std::string checkpoint_dir;
  std::string bags;
  std::string split = "test";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "Dataset directory (manifest, bag data, instances)");
    cmd->add_option("--checkpoint-dir", checkpoint_dir,
                    "Score the dataset's instances with these per-scale checkpoints");
    cmd->add_option("--bags", bags, "External bag-probability file (.csv or .jsonl)");
    cmd->add_option("--split", split, "Slides to use: all, train or test")
        ->capture_default_str();
  }

  dk::BagSource resolve() const {
    dk::BagSource src;
    if (!dataset.empty()) src.dataset = dataset;
    if (!checkpoint_dir.empty()) src.checkpoint_dir = checkpoint_dir;
    if (!bags.empty()) src.bags = bags;
    if (src.checkpoint_dir && src.bags)
      throw CommandError("--checkpoint-dir and --bags are mutually exclusive");
    src.split = dk::parse_split_filter(split);
    return src;
  }
};

dk::Thresholds thresholds_from(const std::vector<std::string>& flags) {
  dk::Thresholds t;
  for (const auto& f : flags) dk::apply_threshold_flag(t, f);
  return t;
}

std::vector<std::pair<std::string, int>> parse_counts(const std::string& text) {
  std::vector<std::pair<std::string, int>> counts;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const auto item = text.substr(start, end - start);
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CommandError("--counts entries must look like SUBTYPE=N, got '" + item + "'");
    try {
      counts.emplace_back(item.substr(0, eq), std::stoi(item.substr(eq + 1)));
    } catch (const std::exception&) {
      throw CommandError("--counts entry '" + item + "' has a bad count");
    }
    start = end + 1;
  }
  return counts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D&K histological subtype classification pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dk 1.0.0");

  // synth
  dk::SynthOptions synth;
  std::string synth_counts;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset from a codebook");
  c_synth->add_option("--codebook", synth.codebook, "Codebook file")->required();
  c_synth->add_option("--dataset,--out", synth.dataset, "Output dataset directory")->required();
  c_synth->add_option("--seed", synth.synth.seed)->capture_default_str();
  c_synth->add_option("--slides-per-subtype", synth.synth.slides_per_subtype)
      ->capture_default_str();
  c_synth->add_option("--counts", synth_counts, "Per-subtype slide counts, e.g. BCC=60,SCC=55");
  c_synth->add_option("--bags-per-slide", synth.synth.bags_per_slide)->capture_default_str();
  c_synth->add_option("--instances", synth.synth.instances_per_bag, "Instances per bag")
      ->capture_default_str();
  c_synth->add_option("--width", synth.synth.instance_width, "Instance vector width Q")
      ->capture_default_str();
  c_synth->add_option("--noise", synth.synth.flip_noise, "Probability of mirroring a bag probability")
      ->capture_default_str();
  c_synth->add_option("--jitter", synth.synth.prob_jitter, "Bag probability jitter")
      ->capture_default_str();
  c_synth->add_option("--signal", synth.synth.signal, "Instance signal strength")
      ->capture_default_str();

  // train
  dk::TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train one bag classifier per scale");
  c_train->add_option("--dataset", train.dataset, "Dataset directory")->required();
  c_train->add_option("--checkpoint-dir,--out", train.checkpoint_dir, "Checkpoint directory")
      ->required();
  c_train->add_option("--seed", train.train.seed)->capture_default_str();
  c_train->add_option("--epochs", train.train.epochs)->capture_default_str();
  c_train->add_option("--lr", train.train.learning_rate)->capture_default_str();
  c_train->add_option("--momentum", train.train.momentum)->capture_default_str();
  c_train->add_option("--hidden", train.train.hidden_width, "Encoder width D")
      ->capture_default_str();
  c_train->add_option("--reduced", train.train.reduced_width, "Reducer width")
      ->capture_default_str();

  // predict
  dk::PredictOptions predict;
  SourceFlags predict_src;
  std::vector<std::string> predict_thresholds;
  std::string predict_save_bags;
  auto* c_predict = app.add_subcommand("predict", "Vote bag predictions and classify slides");
  c_predict->add_option("--codebook", predict.codebook, "Codebook file")->required();
  predict_src.add_to(c_predict);
  c_predict->add_option("--threshold", predict_thresholds, "Label threshold per scale, s=VALUE");
  c_predict->add_option("--out", predict.out, "Diagnosis file (JSON lines)")->required();
  c_predict->add_option("--save-bags", predict_save_bags, "Also write the bag probabilities used");

  // evaluate
  dk::EvaluateOptions evaluate;
  std::string eval_dataset, eval_manifest, eval_codebook, eval_out;
  auto* c_eval = app.add_subcommand("evaluate", "Score diagnoses against ground truth");
  c_eval->add_option("--diagnoses", evaluate.diagnoses, "Diagnosis file")->required();
  c_eval->add_option("--manifest", eval_manifest, "Manifest with true subtypes");
  c_eval->add_option("--dataset", eval_dataset, "Dataset directory holding manifest.csv");
  c_eval->add_option("--codebook", eval_codebook, "Codebook fixing the label order");
  c_eval->add_option("--out", eval_out, "Metrics JSON; a .txt table is written alongside");

  // sweep
  dk::SweepOptions sweep;
  SourceFlags sweep_src;
  std::vector<std::string> sweep_thresholds;
  std::string sweep_grid = "0.1:0.9:0.1";
  std::string sweep_out;
  auto* c_sweep = app.add_subcommand("sweep", "Accuracy as each scale's threshold varies");
  c_sweep->add_option("--codebook", sweep.codebook, "Codebook file")->required();
  sweep_src.add_to(c_sweep);
  c_sweep->add_option("--threshold", sweep_thresholds,
                      "Threshold held on the other scales, s=VALUE");
  c_sweep->add_option("--grid", sweep_grid, "start:stop:step or comma list")
      ->capture_default_str();
  c_sweep->add_option("--out", sweep_out, "CSV output (stdout when omitted)");

  // export-space
  dk::ExportSpaceOptions space;
  std::string space_manifest, space_dataset;
  auto* c_space = app.add_subcommand("export-space", "Write knowledge and prediction points as CSV");
  c_space->add_option("--codebook", space.codebook, "Codebook file")->required();
  c_space->add_option("--diagnoses", space.diagnoses, "Diagnosis file")->required();
  c_space->add_option("--manifest", space_manifest, "Manifest supplying true labels");
  c_space->add_option("--dataset", space_dataset, "Dataset directory holding manifest.csv");
  c_space->add_option("--out", space.out, "CSV output")->required();

  // report
  dk::ReportOptions report;
  auto* c_report = app.add_subcommand("report", "Print the diagnosis of one slide");
  c_report->add_option("--diagnoses", report.diagnoses, "Diagnosis file")->required();
  c_report->add_option("--slide", report.slide_id, "Slide id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto manifest_from = [](const std::string& manifest, const std::string& dataset)
      -> std::optional<std::filesystem::path> {
    if (!manifest.empty()) return manifest;
    if (!dataset.empty()) return dk::DatasetFiles{dataset}.manifest();
    return std::nullopt;
  };

  try {
    if (c_synth->parsed()) {
      if (!synth_counts.empty()) synth.synth.subtype_counts = parse_counts(synth_counts);
      dk::cmd_synth(synth, std::cout);
    } else if (c_train->parsed()) {
      dk::cmd_train(train, std::cout);
    } else if (c_predict->parsed()) {
      predict.source = predict_src.resolve();
      predict.thresholds = thresholds_from(predict_thresholds);
      if (!predict_save_bags.empty()) predict.save_bags = predict_save_bags;
      dk::cmd_predict(predict, std::cout);
    } else if (c_eval->parsed()) {
      auto manifest = manifest_from(eval_manifest, eval_dataset);
      if (!manifest) throw CommandError("evaluate needs --manifest or --dataset");
      evaluate.manifest = *manifest;
      if (!eval_codebook.empty()) evaluate.codebook = eval_codebook;
      if (!eval_out.empty()) evaluate.out = eval_out;
      dk::cmd_evaluate(evaluate, std::cout);
    } else if (c_sweep->parsed()) {
      sweep.source = sweep_src.resolve();
      sweep.base = thresholds_from(sweep_thresholds);
      sweep.grid = dk::parse_grid(sweep_grid);
      if (!sweep_out.empty()) sweep.out = sweep_out;
      dk::cmd_sweep(sweep, std::cout);
    } else if (c_space->parsed()) {
      space.manifest = manifest_from(space_manifest, space_dataset);
      dk::cmd_export_space(space, std::cout);
    } else if (c_report->parsed()) {
      dk::cmd_report(report, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "dk: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
