#pragma once

// Train / evaluate runs, the baseline-vs-gates comparison, and CSV output.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "gmlf/bench/config.hpp"
#include "gmlf/bench/cost.hpp"
#include "gmlf/bench/synth.hpp"
#include "gmlf/dataset.hpp"
#include "gmlf/detector/train.hpp"
#include "gmlf/serialize.hpp"

namespace gmlf {

inline const char* model_name(GateKind k) { return k == GateKind::none ? "baseline" : to_string(k); }

struct DataSplits {
  Dataset train;
  Dataset eval;
};

/// Annotation files when configured, otherwise the seeded generator.
inline DataSplits load_or_synthesize(const ExperimentConfig& cfg) {
  DataSplits d;
  d.train = cfg.train_annotations.empty() ? synth_dataset(cfg.synth, cfg.train_images, mix_seed(cfg.data_seed, 1), "train")
                                          : load_dataset(cfg.train_annotations);
  d.eval = cfg.eval_annotations.empty() ? synth_dataset(cfg.synth, cfg.eval_images, mix_seed(cfg.data_seed, 2), "eval")
                                        : load_dataset(cfg.eval_annotations);
  if (d.train.empty() || d.eval.empty()) throw std::runtime_error("dataset split is empty");
  return d;
}

inline ModelConfig model_for(const ExperimentConfig& cfg, GateKind kind) {
  ModelConfig m = cfg.model;
  m.gate_kind = kind;
  return m;
}

struct RunResult {
  GateKind model = GateKind::none;
  std::uint64_t seed = 0;
  std::vector<SubsetResult> subsets;
  TrainStats stats;
  CostReport cost;
  std::string checkpoint;  // encoded parameters after training
  double train_seconds = 0;
  double eval_seconds = 0;

  const SubsetResult& subset(const std::string& name) const {
    for (const auto& s : subsets) {
      if (s.subset == name) return s;
    }
    throw std::out_of_range("no result for subset " + name);
  }
};

inline std::uint64_t config_hash(const ModelConfig& m, bool double_precision) {
  return fnv1a(m.canonical() + (double_precision ? ";f64" : ";f32"));
}

/// Initializes with `seed`, trains with `seed`, evaluates on the eval split.
template <typename T>
RunResult run_experiment_as(const ExperimentConfig& cfg, const DataSplits& data, GateKind kind, std::uint64_t seed,
                            const std::function<void(int, double)>& on_iteration = {}) {
  const ModelConfig mc = model_for(cfg, kind);
  RunResult r;
  r.model = kind;
  r.seed = seed;
  r.cost = count_cost(mc, data.eval.front().image.height, data.eval.front().image.width);
  Detector<T> model(mc, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.stats = train(model, data.train, tc, on_iteration);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(model_name(kind)) + " seed " + std::to_string(seed) + ": " + e.what());
  }
  const auto t1 = std::chrono::steady_clock::now();
  const auto dets = detect_dataset(model, data.eval, cfg.eval);
  r.subsets = evaluate_detections(dets, data.eval, cfg.eval);
  r.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
  r.train_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.checkpoint = encode_checkpoint(make_checkpoint(model.parameters(), config_hash(mc, std::is_same_v<T, double>)));
  return r;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, const DataSplits& data, GateKind kind,
                                std::uint64_t seed, const std::function<void(int, double)>& on_iteration = {}) {
  return cfg.double_precision ? run_experiment_as<double>(cfg, data, kind, seed, on_iteration)
                              : run_experiment_as<float>(cfg, data, kind, seed, on_iteration);
}

struct RunJob {
  GateKind model;
  std::uint64_t seed;
};

/// Runs independent jobs on `threads` workers (0: hardware concurrency).
/// Results come back in job order; the first failure is rethrown.
inline std::vector<RunResult> run_jobs(const ExperimentConfig& cfg, const DataSplits& data,
                                       const std::vector<RunJob>& jobs, int threads = 0,
                                       const std::function<void(const RunResult&)>& on_done = {}) {
  std::vector<RunResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        results[i] = run_experiment(cfg, data, jobs[i].model, jobs[i].seed);
        if (on_done) {
          std::lock_guard lock(mu);
          on_done(results[i]);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  int n = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  n = std::min<int>(n, static_cast<int>(jobs.size()));
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

/// Every configured model at one seed.
inline std::vector<RunResult> compare(const ExperimentConfig& cfg, const DataSplits& data, std::uint64_t seed,
                                      int threads = 0, const std::function<void(const RunResult&)>& on_done = {}) {
  std::vector<RunJob> jobs;
  for (GateKind k : cfg.models) jobs.push_back({k, seed});
  return run_jobs(cfg, data, jobs, threads, on_done);
}

constexpr const char* kResultsSchema = "# gmlf-results v1";
constexpr const char* kResultsHeader = "model,subset,mr2,params,macs,seed";

/// One row per (model, subset). `macs` is per evaluated image with the
/// configured number of proposals.
inline std::string results_csv(const std::vector<RunResult>& runs, int rois_per_image) {
  std::ostringstream out;
  out << kResultsSchema << '\n' << kResultsHeader << '\n';
  for (const auto& r : runs) {
    for (const auto& s : r.subsets) {
      out << model_name(r.model) << ',' << s.subset << ',' << std::setprecision(10) << s.mr2 << ','
          << r.cost.total_params() << ',' << r.cost.macs_per_image(rois_per_image) << ',' << r.seed << '\n';
    }
  }
  return out.str();
}

/// FPPI / miss-rate points for every run and subset.
inline std::string curves_csv(const std::vector<RunResult>& runs) {
  std::ostringstream out;
  out << "model,seed,subset,fppi,miss_rate\n" << std::setprecision(10);
  for (const auto& r : runs) {
    for (const auto& s : r.subsets) {
      for (const auto& p : s.curve) {
        out << model_name(r.model) << ',' << r.seed << ',' << s.subset << ',' << p.fppi << ',' << p.miss_rate << '\n';
      }
    }
  }
  return out.str();
}

inline std::string loss_csv(const TrainStats& s) {
  std::ostringstream out;
  out << "iteration,loss,cls,reg\n" << std::setprecision(10);
  for (std::size_t i = 0; i < s.loss.size(); ++i) {
    out << i + 1 << ',' << s.loss[i] << ',' << s.cls_loss[i] << ',' << s.reg_loss[i] << '\n';
  }
  return out.str();
}

}  // namespace gmlf
