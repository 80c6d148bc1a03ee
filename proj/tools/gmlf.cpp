// Command-line driver: dataset generation, training, evaluation, cost
// accounting, gate export and the baseline / spatial / channel comparison.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gmlf/gmlf.hpp"
#include "gmlf/runtime.hpp"

namespace fs = std::filesystem;
using namespace gmlf;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::string> model;
  std::optional<int> squeeze_ratio;
  std::string checkpoint;
  std::string image;
  std::string annotations;
  std::string detections;
  std::string seeds;
  int threads = 0;
  int max_rois = 4;
  bool quiet = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? experiment_from_table({}) : load_experiment(o.config);
  if (o.model) cfg.model.gate_kind = parse_gate_kind(*o.model);
  if (o.squeeze_ratio) cfg.model.squeeze_ratio = *o.squeeze_ratio;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.threads > 0) cfg.threads = o.threads;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string summary_line(const RunResult& r) {
  std::ostringstream s;
  s << std::left << std::setw(9) << model_name(r.model) << " seed " << r.seed << std::fixed << std::setprecision(4);
  for (const auto& sub : r.subsets) s << "  " << sub.subset << " " << sub.mr2;
  s << std::setprecision(1) << "  (train " << r.train_seconds << " s, eval " << r.eval_seconds << " s)";
  return s.str();
}

int cmd_gen(const Options& o) {
  ExperimentConfig cfg = resolve(o);
  if (o.seed) cfg.data_seed = *o.seed;
  const auto data = load_or_synthesize(cfg);
  const fs::path out(o.out);
  save_dataset(data.train, out / "train" / "annotations.txt");
  save_dataset(data.eval, out / "eval" / "annotations.txt");
  std::size_t boxes = 0;
  for (const auto& s : data.train) boxes += s.boxes.size();
  for (const auto& s : data.eval) boxes += s.boxes.size();
  std::cout << "wrote " << data.train.size() << " train and " << data.eval.size() << " eval images (" << boxes
            << " pedestrians) to " << out.string() << "\n";
  return 0;
}

template <typename T>
Detector<T> load_model(const ExperimentConfig& cfg, const std::string& path) {
  if (path.empty()) throw std::runtime_error("--checkpoint is required");
  Detector<T> model(cfg.model, 0);
  auto params = model.parameters();
  apply_checkpoint(decode_checkpoint(read_file(path)), params, config_hash(cfg.model, std::is_same_v<T, double>));
  return model;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  const auto data = load_or_synthesize(cfg);
  const int total = cfg.train.sgd.total_iterations();
  double window = 0;
  auto progress = [&](int it, double loss) {
    window += loss;
    if (!o.quiet && (it % 100 == 0 || it == total)) {
      std::cout << "iter " << it << "/" << total << "  mean loss " << window / (it % 100 == 0 ? 100 : it % 100)
                << std::endl;
      window = 0;
    }
  };
  const RunResult r = run_experiment(cfg, data, cfg.model.gate_kind, cfg.train.seed, progress);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_file((out / "model.ckpt").string(), r.checkpoint);
  write_text(out / "loss.csv", loss_csv(r.stats));
  write_text(out / "results.csv", results_csv({r}, cfg.eval.proposals_per_image));
  std::cout << summary_line(r) << "\n";
  return 0;
}

/// Detection file lines: <image path> x1 y1 x2 y2 score
std::map<std::string, std::vector<Detection>> read_detection_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections '" + path + "'");
  std::map<std::string, std::vector<Detection>> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    std::string id;
    Detection d;
    if (!(s >> id >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2 >> d.score) || !std::isfinite(d.score)) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": expected '<image> x1 y1 x2 y2 score'");
    }
    out[id].push_back(d);
  }
  return out;
}

std::string subset_csv(const std::vector<SubsetResult>& results) {
  std::ostringstream out;
  out << "subset,mr2,fppi,miss_rate\n" << std::setprecision(10);
  for (const auto& r : results) {
    for (const auto& p : r.curve) out << r.subset << ',' << r.mr2 << ',' << p.fppi << ',' << p.miss_rate << '\n';
  }
  return out.str();
}

int cmd_eval(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  std::vector<SubsetResult> results;
  if (!o.detections.empty()) {
    if (o.annotations.empty()) throw std::runtime_error("--detections needs --annotations");
    std::ifstream in(o.annotations);
    if (!in) throw std::runtime_error("cannot open annotations '" + o.annotations + "'");
    auto by_image = read_detection_file(o.detections);
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruthBox>> gts;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
      Sample s = parse_annotation_line(line, n);
      dets.push_back(by_image[s.path]);
      gts.push_back(s.boxes);
    }
    for (const auto& spec : cfg.eval.subsets) results.push_back(evaluate_subset(dets, gts, spec, cfg.eval.iou_threshold));
  } else {
    const Dataset eval = cfg.eval_annotations.empty() && o.annotations.empty()
                             ? load_or_synthesize(cfg).eval
                             : load_dataset(o.annotations.empty() ? cfg.eval_annotations : o.annotations);
    std::vector<std::vector<Detection>> dets;
    if (cfg.double_precision) {
      dets = detect_dataset(load_model<double>(cfg, o.checkpoint), eval, cfg.eval);
    } else {
      dets = detect_dataset(load_model<float>(cfg, o.checkpoint), eval, cfg.eval);
    }
    results = evaluate_detections(dets, eval, cfg.eval);
  }
  write_text(fs::path(o.out) / "eval.csv", subset_csv(results));
  for (const auto& r : results) std::cout << std::left << std::setw(11) << r.subset << " MR-2 " << r.mr2 << "\n";
  return 0;
}

int cmd_bench_cost(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  std::vector<GateKind> kinds{GateKind::none, GateKind::spatial, GateKind::channel};
  std::vector<int> ratios{1, 2, 4, 8};
  if (o.model) kinds = {cfg.model.gate_kind};
  if (o.squeeze_ratio) ratios = {cfg.model.squeeze_ratio};
  std::ostringstream csv;
  csv << "model,squeeze_ratio,backbone_params,squeeze_params,gate_params,head_params,roi_subnetwork_params,"
         "total_params,image_macs,roi_macs\n";
  std::cout << std::left << std::setw(9) << "model" << std::right << std::setw(4) << "r" << std::setw(12) << "squeeze"
            << std::setw(12) << "gates" << std::setw(12) << "head" << std::setw(14) << "roi-subnet" << std::setw(12)
            << "total" << std::setw(14) << "MACs/RoI" << "\n";
  for (GateKind k : kinds) {
    for (int r : ratios) {
      ModelConfig m = model_for(cfg, k);
      m.squeeze_ratio = r;
      const CostReport c = count_cost(m, cfg.synth.height, cfg.synth.width);
      csv << model_name(k) << ',' << r << ',' << c.backbone_params << ',' << c.squeeze_params << ',' << c.gate_params
          << ',' << c.head_params << ',' << c.roi_subnetwork_params() << ',' << c.total_params() << ','
          << c.image_macs << ',' << c.roi_macs << '\n';
      std::cout << std::left << std::setw(9) << model_name(k) << std::right << std::setw(4) << r << std::setw(12)
                << c.squeeze_params << std::setw(12) << c.gate_params << std::setw(12) << c.head_params
                << std::setw(14) << c.roi_subnetwork_params() << std::setw(12) << c.total_params() << std::setw(14)
                << c.roi_macs << "\n";
      if (k == GateKind::none) break;  // the baseline has no squeeze ratio
    }
  }
  write_text(fs::path(o.out) / "cost.csv", csv.str());
  return 0;
}

template <typename T>
int export_gates_as(const ExperimentConfig& cfg, const Options& o) {
  const Detector<T> model = load_model<T>(cfg, o.checkpoint);
  Sample sample;
  if (!o.image.empty()) {
    sample.image = read_pnm(o.image);
  } else {
    const Dataset eval = cfg.eval_annotations.empty() ? load_or_synthesize(cfg).eval : load_dataset(cfg.eval_annotations);
    sample = eval.front();
  }
  std::vector<RoiBox> rois;
  for (const auto& b : sample.boxes) {
    if (static_cast<int>(rois.size()) < o.max_rois) rois.push_back(b.box);
  }
  if (rois.empty()) {
    ProposalSpec spec = cfg.eval.proposals;
    spec.image_width = sample.image.width;
    spec.image_height = sample.image.height;
    rois = sample_proposals({}, spec, o.max_rois, cfg.eval.seed);
  }
  const auto files = export_gate_maps(model, image_to_tensor<T>(sample.image), rois, fs::path(o.out));
  std::cout << "wrote " << files.size() << " gate maps for " << rois.size() << " RoIs to " << o.out << "\n";
  return 0;
}

int cmd_export_gates(const Options& o) {
  const ExperimentConfig cfg = resolve(o);
  return cfg.double_precision ? export_gates_as<double>(cfg, o) : export_gates_as<float>(cfg, o);
}

int cmd_compare(const Options& o) {
  ExperimentConfig cfg = resolve(o);
  std::vector<std::uint64_t> seeds;
  if (!o.seeds.empty()) {
    for (const auto& s : detail::split(o.seeds, ',')) seeds.push_back(detail::to_u64(s));
  } else {
    seeds = {cfg.train.seed};
  }
  const auto data = load_or_synthesize(cfg);
  const fs::path out(o.out);
  std::vector<RunJob> jobs;
  for (auto s : seeds) {
    for (GateKind k : cfg.models) jobs.push_back({k, s});
  }
  const auto runs = run_jobs(cfg, data, jobs, cfg.threads, [&](const RunResult& r) {
    if (!o.quiet) std::cout << summary_line(r) << std::endl;
  });
  for (auto s : seeds) {
    std::vector<RunResult> subset;
    for (const auto& r : runs) {
      if (r.seed == s) subset.push_back(r);
    }
    const fs::path dir = seeds.size() == 1 ? out : out / ("seed" + std::to_string(s));
    write_text(dir / "results.csv", results_csv(subset, cfg.eval.proposals_per_image));
    write_text(dir / "curves.csv", curves_csv(subset));
    for (const auto& r : subset) {
      write_file((dir / (std::string(model_name(r.model)) + ".ckpt")).string(), r.checkpoint);
      write_text(dir / (std::string(model_name(r.model)) + "_loss.csv"), loss_csv(r.stats));
    }
  }
  std::cout << "results in " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Gated multi-layer RoI features: desk-scale detector and benchmarks"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file (sectioned key = value)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Run seed (data seed for gen)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--model", o.model, "Model variant")->check(CLI::IsMember({"baseline", "spatial", "channel"}));
    sub->add_option("--squeeze-ratio", o.squeeze_ratio, "Squeeze ratio r")->check(CLI::IsMember({1, 2, 4, 8}));
    sub->add_flag("--quiet", o.quiet, "Less progress output");
  };

  auto* gen = app.add_subcommand("gen", "Synthesize the train and eval datasets");
  common(gen);
  auto* train = app.add_subcommand("train", "Train one model and write its checkpoint");
  common(train);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, or a detection file against annotations");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint from train");
  eval->add_option("--annotations", o.annotations, "Annotation file of the evaluated images");
  eval->add_option("--detections", o.detections, "Detection file: <image> x1 y1 x2 y2 score per line");
  auto* cost = app.add_subcommand("bench-cost", "Parameter and MAC counts");
  common(cost);
  auto* gates = app.add_subcommand("export-gates", "Write gate coefficients of a trained model");
  common(gates);
  gates->add_option("--checkpoint", o.checkpoint, "Checkpoint from train")->required();
  gates->add_option("--image", o.image, "PGM/PPM image (default: first eval image)");
  gates->add_option("--max-rois", o.max_rois, "RoIs to export")->check(CLI::PositiveNumber);
  auto* cmp = app.add_subcommand("compare", "Train and evaluate baseline, spatial and channel models");
  common(cmp);
  cmp->add_option("--seeds", o.seeds, "Comma-separated seeds (one output directory each)");
  cmp->add_option("--threads", o.threads, "Concurrent runs (default: hardware threads)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "gmlf: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (gen->parsed()) return cmd_gen(o);
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (cost->parsed()) return cmd_bench_cost(o);
    if (gates->parsed()) return cmd_export_gates(o);
    if (cmp->parsed()) return cmd_compare(o);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "gmlf: error: " << msg << "\n";
    return 1;
  }
  return 1;
}
