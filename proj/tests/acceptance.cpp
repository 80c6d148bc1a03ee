// Acceptance checks 1-7. Each selected criterion prints one
// "CRITERION n PASS|FAIL: ..." line; indented lines before it are detail.
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "gmlf/gmlf.hpp"
#include "gmlf/runtime.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "test_util.hpp"
#include "walk.hpp"

namespace fs = std::filesystem;
using gmlf::GateKind;
using T = gmlf::Tensor<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int uni(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

/// Collects failed checks; the verdict lists the first few.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failures_.push_back(what);
  }
  Verdict verdict(const std::string& summary) const {
    if (failures_.empty()) return {true, summary};
    std::string d = std::to_string(failures_.size()) + "/" + std::to_string(total_) + " checks failed:";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, failures_.size()); ++i) d += " [" + failures_[i] + "]";
    return {false, d};
  }

 private:
  std::size_t total_ = 0;
  std::vector<std::string> failures_;
};

// ---------------------------------------------------------------- 1
//
// Every case is built twice from the same seed: in double, whose analytic
// gradients are under test, and in long double, whose central differences
// serve as the reference. Random values are drawn as doubles in both, so the
// two builds hold identical numbers.

template <typename F>
struct GradCase {
  std::function<gmlf::Tensor<F>()> loss;
  std::vector<gmlf::Tensor<F>> leaves;
};

template <typename F>
gmlf::Tensor<F> randn(gmlf::Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  const auto v = oracle::normal_vector(gmlf::shape_numel(shape), rng, stddev);
  return gmlf::Tensor<F>(std::move(shape), std::vector<F>(v.begin(), v.end()), true);
}

/// Weighted sum with standard-normal weights fixed by `seed`.
template <typename F>
gmlf::Tensor<F> probe(const gmlf::Tensor<F>& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto w = oracle::normal_vector(t.numel(), rng);
  return gmlf::weighted_sum(t, std::vector<F>(w.begin(), w.end()));
}

struct GradRow {
  std::string layer;
  double worst = 0;
  std::size_t checked = 0, kinks = 0;
};

template <typename Make>
GradRow grad_cases(const std::string& layer, int cases, Make make) {
  GradRow row{layer};
  gmlf::GradCheckOptions opts;
  opts.eps = 1e-6;
  for (int i = 0; i < cases; ++i) {
    const auto seed = gmlf::mix_seed(gmlf::fnv1a(layer), static_cast<std::uint64_t>(i));
    GradCase<double> c = make.template operator()<double>(seed);
    GradCase<long double> ref = make.template operator()<long double>(seed);
    const auto rep = gmlf::finite_diff_report<long double>(c.loss, c.leaves, ref.loss, ref.leaves, opts);
    row.worst = std::max(row.worst, rep.max_relative_error);
    row.checked += rep.checked;
    row.kinks += rep.skipped_kinks;
  }
  return row;
}

/// Gate unit with weights ~ N(0, 1/fan_in) and biases ~ N(0, 0.3^2), so every
/// pre-activation is O(1) for standard-normal features.
template <typename F>
GradCase<F> gate_case(GateKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int c = uni(rng, 1, 8), h = uni(rng, 1, 7), w = uni(rng, 1, 7);
  gmlf::Rng init(seed);
  auto g = std::make_shared<gmlf::GateUnit<F>>(gmlf::make_gate_unit<F>(kind, c, h, w, init));
  gmlf::ParamList<F> params;
  gmlf::register_params(params, "g", *g);
  for (auto p : params) {
    const auto& t = p.tensor;
    const double sd = t.rank() == 1 ? 0.3 : 1.0 / std::sqrt(static_cast<double>(t.numel() / t.dim(0)));
    std::normal_distribution<double> d(0.0, sd);
    for (auto& v : p.tensor.mutable_values()) v = static_cast<F>(d(rng));
  }
  gmlf::Tensor<F> r = randn<F>({c, h, w}, rng);
  std::vector<gmlf::Tensor<F>> leaves{r};
  for (auto& p : params) leaves.push_back(p.tensor);
  return {[g, r, seed] { return probe(gmlf::gate_modulate(r, gmlf::gate_forward(r, *g)), seed); }, leaves};
}

Verdict criterion1() {
  constexpr int kCases = 100;
  const auto t0 = Clock::now();
  std::vector<GradRow> rows;

  rows.push_back(grad_cases("conv2d", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int ci = uni(rng, 1, 4), co = uni(rng, 1, 4), k = uni(rng, 1, 3), s = uni(rng, 1, 2), pad = uni(rng, 0, 2);
    const int dil = seed % 2 ? 2 : 1;  // every other case dilated
    const int min_in = std::max(1, dil * (k - 1) + 1 - 2 * pad);
    auto x = randn<F>({ci, uni(rng, min_in, 8), uni(rng, min_in, 8)}, rng);
    gmlf::Conv2dParams<F> p{randn<F>({co, ci, k, k}, rng), randn<F>({co}, rng), s, pad, dil};
    return GradCase<F>{[x, p, seed] { return probe(gmlf::conv2d(x, p), seed); }, {x, p.kernel, p.bias}};
  }));

  rows.push_back(grad_cases("depthwise_separable", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int c = uni(rng, 1, 4), co = uni(rng, 1, 4), k = uni(rng, 1, 3), s = uni(rng, 1, 2), pad = uni(rng, 0, 1);
    const int min_in = std::max(1, k - 2 * pad);
    auto x = randn<F>({c, uni(rng, min_in, 8), uni(rng, min_in, 8)}, rng);
    gmlf::DepthwiseSeparableParams<F> p{randn<F>({c, 1, k, k}, rng), randn<F>({c}, rng), randn<F>({co, c, 1, 1}, rng),
                                        randn<F>({co}, rng), s, pad, 1};
    return GradCase<F>{[x, p, seed] { return probe(gmlf::depthwise_separable_conv(x, p), seed); },
                       {x, p.depthwise_kernel, p.depthwise_bias, p.pointwise_kernel, p.pointwise_bias}};
  }));

  rows.push_back(grad_cases("fully_connected", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int c = uni(rng, 1, 4), h = uni(rng, 1, 4), w = uni(rng, 1, 4), out = uni(rng, 1, 8);
    if (seed % 2) {
      // Row form: c rows of h * w features each.
      auto x = randn<F>({c, h * w}, rng);
      gmlf::FcParams<F> p{randn<F>({out, h * w}, rng), randn<F>({out}, rng)};
      return GradCase<F>{[x, p, seed] { return probe(gmlf::fully_connected_rows(x, p), seed); },
                         {x, p.weight, p.bias}};
    }
    auto x = randn<F>({c, h, w}, rng);
    gmlf::FcParams<F> p{randn<F>({out, c * h * w}, rng), randn<F>({out}, rng)};
    return GradCase<F>{[x, p, seed] { return probe(gmlf::fully_connected(x, p), seed); }, {x, p.weight, p.bias}};
  }));

  rows.push_back(grad_cases("relu", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = randn<F>({uni(rng, 1, 8), uni(rng, 1, 8), uni(rng, 1, 8)}, rng);
    return GradCase<F>{[x, seed] { return probe(gmlf::relu(x), seed); }, {x}};
  }));

  rows.push_back(grad_cases("sigmoid", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = randn<F>({uni(rng, 1, 8), uni(rng, 1, 8), uni(rng, 1, 8)}, rng, 2.0);
    return GradCase<F>{[x, seed] { return probe(gmlf::sigmoid(x), seed); }, {x}};
  }));

  rows.push_back(grad_cases("max_pool2d", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int k = uni(rng, 2, 3), s = uni(rng, 1, 2);
    auto x = randn<F>({uni(rng, 1, 4), uni(rng, k, 8), uni(rng, k, 8)}, rng);
    return GradCase<F>{[x, k, s, seed] { return probe(gmlf::max_pool2d(x, k, s), seed); }, {x}};
  }));

  rows.push_back(grad_cases("roi_max_pool", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int h = uni(rng, 2, 8), w = uni(rng, 2, 8), p = uni(rng, 1, 4);
    const double scale = seed % 2 ? 0.5 : 1.0;
    auto f = randn<F>({uni(rng, 1, 4), h, w}, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double iw = w / scale, ih = h / scale;
    gmlf::RoiBox roi;
    roi.x1 = u(rng) * (iw - 1);
    roi.y1 = u(rng) * (ih - 1);
    roi.x2 = roi.x1 + 0.5 + u(rng) * iw;
    roi.y2 = roi.y1 + 0.5 + u(rng) * ih;
    return GradCase<F>{[f, roi, p, scale, seed] { return probe(gmlf::roi_max_pool(f, roi, p, scale), seed); }, {f}};
  }));

  rows.push_back(grad_cases("concat_channels", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int n = uni(rng, 2, 3), h = uni(rng, 1, 8), w = uni(rng, 1, 8);
    std::vector<gmlf::Tensor<F>> parts;
    for (int i = 0; i < n; ++i) parts.push_back(randn<F>({uni(rng, 1, 3), h, w}, rng));
    return GradCase<F>{[parts, seed] { return probe(gmlf::concat_channels(parts), seed); }, parts};
  }));

  rows.push_back(grad_cases("spatial_gate", kCases,
                            []<typename F>(std::uint64_t seed) { return gate_case<F>(GateKind::spatial, seed); }));
  rows.push_back(grad_cases("channel_gate", kCases,
                            []<typename F>(std::uint64_t seed) { return gate_case<F>(GateKind::channel, seed); }));

  rows.push_back(grad_cases("detection_loss", kCases, []<typename F>(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int n = uni(rng, 1, 8);
    auto logits = randn<F>({n, 2}, rng, 2.0);
    auto deltas = randn<F>({n, 4}, rng, 1.5);
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::vector<std::array<double, 4>> targets(static_cast<std::size_t>(n));
    std::normal_distribution<double> nd(0.0, 1.5);
    for (int i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = uni(rng, 0, 1);
      for (auto& v : targets[static_cast<std::size_t>(i)]) v = nd(rng);
    }
    return GradCase<F>{[=] { return gmlf::detection_loss(logits, deltas, labels, targets).total; }, {logits, deltas}};
  }));

  const double elapsed = since(t0);
  Checks checks;
  double worst = 0;
  std::size_t checked = 0, kinks = 0;
  for (const auto& r : rows) {
    std::cout << "  " << std::left << std::setw(20) << r.layer << " max rel err " << std::setw(10) << fmt(r.worst)
              << " coords " << r.checked << " (kinks skipped " << r.kinks << ")\n";
    checks.expect(r.worst < 1e-4, r.layer + " max rel err " + fmt(r.worst));
    checks.expect(r.checked > 0, r.layer + " checked nothing");
    worst = std::max(worst, r.worst);
    checked += r.checked;
    kinks += r.kinks;
  }
  checks.expect(elapsed < 120.0, "runtime " + fmt(elapsed) + " s exceeds 120 s");
  return checks.verdict(std::to_string(rows.size()) + " layers x " + std::to_string(kCases) + " cases, max rel err " +
                        fmt(worst) + " over " + std::to_string(checked) + " coordinates (" + std::to_string(kinks) +
                        " kinks skipped), " + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------- 2

Verdict criterion2() {
  constexpr int kInstances = 10;
  constexpr double kTol = 1e-12;
  Checks checks;
  std::mt19937_64 rng(20);
  double worst = 0;
  auto compare = [&](const std::vector<double>& got, const std::vector<double>& want, const std::string& what) {
    const double d = oracle::max_abs_diff(got, want);
    worst = std::max(worst, d);
    checks.expect(d <= kTol, what + " differs by " + fmt(d));
  };

  for (int i = 0; i < kInstances; ++i) {
    const int ci = uni(rng, 1, 4), co = uni(rng, 1, 4), k = uni(rng, 1, 3), s = uni(rng, 1, 2), pad = uni(rng, 0, 2),
              dil = uni(rng, 1, 2);
    const int min_in = std::max(1, dil * (k - 1) + 1 - 2 * pad);
    T x = testutil::randn({ci, uni(rng, std::max(min_in, 5), 11), uni(rng, std::max(min_in, 5), 11)}, rng, false);
    gmlf::Conv2dParams<double> p{testutil::randn({co, ci, k, k}, rng, false), testutil::randn({co}, rng, false), s,
                                 pad, dil};
    const auto want = oracle::conv2d(testutil::as_array(x), testutil::values(p.kernel), testutil::values(p.bias), co,
                                     k, k, s, pad, dil);
    compare(testutil::values(gmlf::conv2d(x, p)), want.v, "conv2d #" + std::to_string(i));
  }

  for (int i = 0; i < kInstances; ++i) {
    const int c = uni(rng, 1, 4), co = uni(rng, 1, 4), k = uni(rng, 1, 3), s = uni(rng, 1, 2), pad = uni(rng, 0, 1);
    T x = testutil::randn({c, uni(rng, 4, 10), uni(rng, 4, 10)}, rng, false);
    gmlf::DepthwiseSeparableParams<double> p{
        testutil::randn({c, 1, k, k}, rng, false), testutil::randn({c}, rng, false),
        testutil::randn({co, c, 1, 1}, rng, false), testutil::randn({co}, rng, false), s, pad, 1};
    const auto depth = oracle::depthwise(testutil::as_array(x), testutil::values(p.depthwise_kernel),
                                         testutil::values(p.depthwise_bias), k, k, s, pad);
    const auto want = oracle::conv2d(depth, testutil::values(p.pointwise_kernel), testutil::values(p.pointwise_bias),
                                     co, 1, 1, 1, 0, 1);
    compare(testutil::values(gmlf::depthwise_separable_conv(x, p)), want.v, "depthwise separable #" + std::to_string(i));
  }

  std::uniform_real_distribution<double> pos(-10.0, 90.0), len(1.0, 60.0);
  for (int i = 0; i < kInstances;) {
    T f = testutil::randn({uni(rng, 1, 4), uni(rng, 4, 12), uni(rng, 4, 12)}, rng, false);
    gmlf::RoiBox roi{pos(rng), pos(rng), 0, 0};
    roi.x2 = roi.x1 + len(rng);
    roi.y2 = roi.y1 + len(rng);
    const double scale = i % 2 ? 1.0 / 8.0 : 1.0 / 4.0;
    if (roi.x2 * scale <= 0 || roi.y2 * scale <= 0 || roi.x1 * scale >= f.dim(2) || roi.y1 * scale >= f.dim(1)) {
      continue;
    }
    const int p = uni(rng, 1, 7);
    compare(testutil::values(gmlf::roi_max_pool(f, roi, p, scale)),
            oracle::roi_pool(testutil::as_array(f), roi, p, scale).v, "roi_max_pool #" + std::to_string(i));
    ++i;
  }

  for (int i = 0; i < kInstances; ++i) {
    const int c = uni(rng, 1, 5), h = uni(rng, 1, 6), w = uni(rng, 1, 6);
    // Alternate the two gate forms with arbitrary singleton patterns.
    gmlf::Shape bs = i % 3 == 0 ? gmlf::Shape{1, h, w} : i % 3 == 1 ? gmlf::Shape{c, 1, 1} : gmlf::Shape{1, h, 1};
    if (i == 9) bs = {c, h, w};
    T a = testutil::randn({c, h, w}, rng, false), b = testutil::randn(bs, rng, false);
    compare(testutil::values(gmlf::mul(a, b)), oracle::broadcast_mul(testutil::as_array(a), testutil::as_array(b)),
            "broadcast mul #" + std::to_string(i));
  }

  int exact = 0;
  for (int i = 0; i < kInstances; ++i) {
    const int d = 2 + i % 3, ci = uni(rng, 1, 3), co = uni(rng, 1, 3), k = uni(rng, 2, 3);
    T x = testutil::randn({ci, uni(rng, 9, 14), uni(rng, 9, 14)}, rng, false);
    gmlf::Conv2dParams<double> p{testutil::randn({co, ci, k, k}, rng, false), testutil::randn({co}, rng, false), 1, d,
                                 d};
    const int kd = d * (k - 1) + 1;
    gmlf::Conv2dParams<double> dense{T({co, ci, kd, kd}, oracle::zero_insert(testutil::values(p.kernel), co, ci, k, d)),
                                     p.bias, 1, d, 1};
    const bool same = testutil::values(gmlf::conv2d(x, p)) == testutil::values(gmlf::conv2d(x, dense));
    exact += same;
    checks.expect(same, "dilated conv #" + std::to_string(i) + " is not bit-identical to the zero-inserted kernel");
  }
  return checks.verdict("conv2d, depthwise separable, roi_max_pool, broadcast: 10 instances each, max abs diff " +
                        fmt(worst) + "; dilated conv bit-identical to zero-inserted kernel " + std::to_string(exact) +
                        "/10");
}

// ---------------------------------------------------------------- 3

Verdict criterion3() {
  constexpr int kDraws = 1000;
  Checks checks;
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> spread(0.01, 30.0);
  std::size_t gates = 0, elements = 0;
  double lo = 1, hi = 0;
  for (int draw = 0; draw < kDraws; ++draw) {
    const GateKind kind = draw % 2 ? GateKind::spatial : GateKind::channel;
    const int c = uni(rng, 1, 12), h = uni(rng, 1, 7), w = uni(rng, 1, 7);
    gmlf::Rng init(static_cast<std::uint64_t>(draw));
    const auto g = gmlf::make_gate_unit<double>(kind, c, h, w, init, spread(rng), spread(rng) - 15.0);
    // Half the draws use power-of-two features, for which the ratio
    // R_hat / R reproduces the coefficient without rounding.
    T r = testutil::randn({c, h, w}, rng, false, spread(rng));
    const bool pow2 = draw % 4 < 2;
    if (pow2) {
      for (auto& v : r.mutable_values()) v = std::copysign(std::ldexp(1.0, uni(rng, -6, 6)), v);
    }
    const T gate = gmlf::gate_forward(r, g);
    const T mod = gmlf::gate_modulate(r, gate);
    const std::string tag = std::string(gmlf::to_string(kind)) + " draw " + std::to_string(draw);
    checks.expect(gate.shape() == g.output_shape(), tag + " gate shape");
    for (double v : gate.values()) {
      checks.expect(v > 0.0 && v < 1.0, tag + " gate value " + fmt(v, 17));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    gates += gate.numel();
    bool one_coefficient = true, ratio_ok = true, bounded = true;
    for (int ci = 0; ci < c; ++ci) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = (static_cast<std::size_t>(ci) * h + y) * w + x;
          const double coef = kind == GateKind::spatial ? gate[static_cast<std::size_t>(y) * w + x]
                                                        : gate[static_cast<std::size_t>(ci)];
          one_coefficient &= mod[i] == r[i] * coef;
          if (pow2) ratio_ok &= mod[i] / r[i] == coef;
          bounded &= std::abs(mod[i]) <= std::abs(r[i]);
          ++elements;
        }
      }
    }
    checks.expect(one_coefficient, tag + ": modulation is not R times one coefficient per location/channel");
    checks.expect(ratio_ok, tag + ": ratio R_hat / R differs from the coefficient");
    checks.expect(bounded, tag + ": |R_hat| > |R|");
  }
  return checks.verdict(std::to_string(kDraws) + " draws, " + std::to_string(gates) + " gate values in [" +
                        fmt(lo, 6) + ", " + fmt(1 - hi, 6) + " below 1], " + std::to_string(elements) +
                        " modulated elements with exact per-location / per-channel scaling and |R_hat| <= |R|");
}

// ---------------------------------------------------------------- 4

Verdict criterion4() {
  Checks checks;
  std::ostringstream table;
  for (GateKind kind : {GateKind::spatial, GateKind::channel}) {
    std::uint64_t prev = 0;
    table << gmlf::to_string(kind) << ":";
    for (int r : {1, 2, 4, 8}) {
      gmlf::ModelConfig m;
      m.gate_kind = kind;
      m.squeeze_ratio = r;
      const auto cost = gmlf::count_cost(m);
      const auto w = walk::totals(m);
      const std::string tag = std::string(gmlf::to_string(kind)) + " r=" + std::to_string(r);
      checks.expect(cost.backbone_params == w.backbone, tag + " backbone");
      checks.expect(cost.squeeze_params == w.squeeze, tag + " squeeze");
      checks.expect(cost.gate_params == w.gate, tag + " gates");
      checks.expect(cost.head_params == w.head, tag + " head");
      checks.expect(cost.total_params() == w.all, tag + " total");
      const gmlf::Detector<float> model(m, 1);
      const auto params = model.parameters();
      for (const auto& e : cost.entries) {
        checks.expect(e.params == walk::count_prefix(params, e.name), tag + " entry " + e.name);
      }
      const auto sub = cost.roi_subnetwork_params();
      if (r > 1) checks.expect(sub < prev, tag + " RoI sub-network does not shrink");
      prev = sub;
      table << " r" << r << "=" << sub;
      std::cout << "  " << std::left << std::setw(8) << gmlf::to_string(kind) << " r=" << r << "  squeeze "
                << std::setw(7) << cost.squeeze_params << " gates " << std::setw(8) << cost.gate_params << " head "
                << std::setw(9) << cost.head_params << " roi-subnetwork " << sub << "\n";
    }
    table << "; ";
  }
  gmlf::ModelConfig base;
  base.gate_kind = GateKind::none;
  checks.expect(gmlf::count_cost(base).total_params() == walk::totals(base).all, "baseline total");
  return checks.verdict("count_cost equals the parameter walk for r in {1,2,4,8}; RoI sub-network params " +
                        table.str() + "strictly decreasing");
}

// ---------------------------------------------------------------- 5

Verdict criterion5() {
  Checks checks;
  const double target = std::exp((4.0 * std::log(1.0) + 5.0 * std::log(0.5)) / 9.0);

  const auto three = scenario::three_images();
  const auto curve3 = scenario::curve_of(three);
  checks.expect(curve3 == three.expected_curve, "3-image curve differs from the hand trace");
  const double mr3 = gmlf::log_average_miss_rate(curve3);
  checks.expect(std::abs(mr3 - three.expected_mr2) <= 1e-12, "3-image MR-2 " + fmt(mr3, 17));

  const auto ten = scenario::four_ones_five_halves();
  const auto curve10 = scenario::curve_of(ten);
  checks.expect(curve10 == ten.expected_curve, "4/5-split curve differs from the hand trace");
  const double mr10 = gmlf::log_average_miss_rate(curve10);
  checks.expect(std::abs(mr10 - target) <= 1e-12, "4/5-split MR-2 " + fmt(mr10, 17));

  // With three images every fppi is a multiple of 1/3, so the seven
  // references below 1/3 always sample the same point: a 4/5 split is out
  // of reach there. Confirm on random 3-image detectors.
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  bool seven_equal = true;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::vector<gmlf::Detection>> dets(3);
    for (std::size_t i = 0; i < 3; ++i) {
      for (const auto& g : three.gts[i]) {
        if (score(rng) < 0.7) dets[i].push_back(scenario::hit(g, score(rng)));
      }
      for (int k = uni(rng, 0, 3); k > 0; --k) dets[i].push_back(scenario::stray(400 + 20 * k, score(rng)));
    }
    std::vector<gmlf::ImageMatch> m;
    for (std::size_t i = 0; i < 3; ++i) m.push_back(gmlf::match_detections(dets[i], three.gts[i]));
    const auto sampled = gmlf::sampled_miss_rates(gmlf::fppi_missrate_curve(m, 3));
    seven_equal &= std::all_of(sampled.begin(), sampled.begin() + 7, [&](double v) { return v == sampled[0]; });
  }
  checks.expect(seven_equal, "a 3-image detector sampled different miss rates below fppi 1/3");

  auto gts = three.gts;
  gts[0].push_back(scenario::person(300, 0, 60, 0.9));
  gts[1].push_back(scenario::person(300, 0, 60, 0.4));
  const std::vector<std::vector<gmlf::Detection>> none(gts.size());
  for (const auto& spec : gmlf::default_subsets()) {
    checks.expect(gmlf::evaluate_subset(none, gts, spec).mr2 == 1.0, "no detections on " + spec.name);
  }

  auto kept = [](const gmlf::SubsetSpec& s, double h, double v) {
    return !gmlf::subset_filter({scenario::person(0, 0, h, v)}, s)[0].ignore;
  };
  const auto all = gmlf::subset_all(), small = gmlf::subset_small(), occ = gmlf::subset_occlusion(),
             rea = gmlf::subset_reasonable();
  const std::vector<std::tuple<gmlf::SubsetSpec, double, double, bool>> bounds{
      {all, 20, 0.2, true},       {all, 19.99, 1.0, false},  {all, 50, 0.19, false},  {small, 50, 0.65, true},
      {small, 75, 1.0, true},     {small, 49.99, 1.0, false}, {small, 75.01, 1.0, false}, {small, 60, 0.64, false},
      {occ, 50, 0.2, true},       {occ, 50, 0.65, true},     {occ, 50, 0.66, false},  {occ, 50, 0.19, false},
      {occ, 49.99, 0.3, false},   {rea, 50, 0.65, true},     {rea, 75, 1.0, true},    {rea, 49.99, 1.0, false},
      {rea, 50, 0.64, false},     {rea, 1000, 1.0, true}};
  for (const auto& [spec, h, v, want] : bounds) {
    checks.expect(kept(spec, h, v) == want, spec.name + " at height " + fmt(h, 6) + " visibility " + fmt(v));
  }

  return checks.verdict("3-image hand trace exact (MR-2 " + fmt(mr3, 12) + ", a 7/2 split); target exp((4 ln 1 + 5 ln 0.5)/9) = " +
                        fmt(target, 12) + " reproduced to 1e-12 on a 10-image scenario (3 images cannot give a 4/5 "
                        "split, verified on 500 random 3-image detectors); no detections -> 1.0 on all subsets; " +
                        std::to_string(bounds.size()) + " boundary filters");
}

// ---------------------------------------------------------------- 6

/// Longest-processing-time-first makespan of `jobs` on `workers` machines.
double lpt_makespan(std::vector<double> jobs, int workers) {
  std::sort(jobs.rbegin(), jobs.rend());
  std::vector<double> load(static_cast<std::size_t>(workers), 0.0);
  for (double j : jobs) *std::min_element(load.begin(), load.end()) += j;
  return *std::max_element(load.begin(), load.end());
}

Verdict criterion6(int threads, const std::string& report) {
  constexpr int kOverfitIterations = 200;
  Checks checks;
  const auto t_all = Clock::now();
  gmlf::ExperimentConfig cfg;
  cfg.validate();
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int workers = threads > 0 ? threads : hw;
  const std::vector<GateKind> kinds{GateKind::none, GateKind::spatial, GateKind::channel};

  auto t0 = Clock::now();
  const auto data = gmlf::load_or_synthesize(cfg);
  const double data_s = since(t0);
  std::cout << "  data: " << data.train.size() << " train / " << data.eval.size() << " eval images, "
            << cfg.synth.height << "x" << cfg.synth.width << ", " << fmt(data_s) << " s\n";

  // Overfit: one image, a fixed batch, 200 iterations at the training rate.
  std::vector<double> overfit_s;
  std::string overfit;
  for (GateKind kind : kinds) {
    t0 = Clock::now();
    gmlf::Detector<float> model(gmlf::model_for(cfg, kind), 1);
    gmlf::TrainConfig tc = cfg.train;
    tc.sgd.lr_schedule = {{kOverfitIterations, cfg.train.sgd.learning_rate(0)}};
    tc.flip = false;
    tc.resample = false;
    const auto stats = gmlf::train(model, gmlf::Dataset{data.train.front()}, tc);
    const double drop = 1.0 - stats.loss.back() / stats.loss.front();
    overfit_s.push_back(since(t0));
    std::cout << "  overfit " << std::left << std::setw(9) << gmlf::model_name(kind) << " loss " << fmt(stats.loss.front(), 4)
              << " -> " << fmt(stats.loss.back(), 4) << " (drop " << fmt(100 * drop, 4) << "%), " << fmt(overfit_s.back())
              << " s\n";
    checks.expect(drop >= 0.9, std::string("overfit ") + gmlf::model_name(kind) + " drop " + fmt(drop));
    overfit += std::string(overfit.empty() ? "" : ", ") + gmlf::model_name(kind) + " " + fmt(100 * drop, 3) + "%";
  }

  std::vector<gmlf::RunJob> jobs;
  for (auto seed : cfg.seeds) {
    for (GateKind kind : kinds) jobs.push_back({kind, seed});
  }
  t0 = Clock::now();
  const auto runs = gmlf::run_jobs(cfg, data, jobs, workers, [](const gmlf::RunResult& r) {
    std::cout << "  run " << std::left << std::setw(9) << gmlf::model_name(r.model) << " seed " << r.seed;
    for (const auto& s : r.subsets) std::cout << "  " << s.subset << " " << fmt(s.mr2, 4);
    std::cout << "  (" << fmt(r.train_seconds + r.eval_seconds, 4) << " s)" << std::endl;
  });
  const double runs_s = since(t0);

  std::map<std::pair<GateKind, std::uint64_t>, double> small;
  std::vector<double> run_s;
  std::ostringstream csv;
  csv << "model,seed,subset,mr2,train_seconds,eval_seconds\n" << std::setprecision(10);
  for (const auto& r : runs) {
    small[{r.model, r.seed}] = r.subset("Small").mr2;
    run_s.push_back(r.train_seconds + r.eval_seconds);
    for (const auto& s : r.subsets) {
      csv << gmlf::model_name(r.model) << ',' << r.seed << ',' << s.subset << ',' << s.mr2 << ',' << r.train_seconds
          << ',' << r.eval_seconds << '\n';
    }
  }
  if (!report.empty()) {
    std::ofstream out(report);
    out << csv.str();
  }

  std::string wins;
  for (GateKind kind : {GateKind::spatial, GateKind::channel}) {
    int won = 0;
    for (auto seed : cfg.seeds) won += small[{kind, seed}] <= small[{GateKind::none, seed}];
    std::cout << "  " << gmlf::model_name(kind) << " <= baseline on Small in " << won << "/" << cfg.seeds.size()
              << " seeds\n";
    checks.expect(won >= 4, std::string(gmlf::model_name(kind)) + " beats the baseline on Small in only " +
                                std::to_string(won) + "/5 seeds");
    wins += std::string(wins.empty() ? "" : ", ") + gmlf::model_name(kind) + " " + std::to_string(won) + "/5";
  }

  // Wall time on 4 cores: measured when at least 4 workers ran; otherwise
  // projected from the per-job times measured here, packed onto 4 workers.
  const double wall = since(t_all);
  std::vector<double> all_jobs = run_s;
  all_jobs.insert(all_jobs.end(), overfit_s.begin(), overfit_s.end());
  const bool measured = workers >= 4 && hw >= 4;
  const double four_core = measured ? wall : data_s + lpt_makespan(all_jobs, 4);
  std::cout << "  wall " << fmt(wall, 5) << " s with " << workers << " worker(s) on " << hw << " hardware thread(s); "
            << (measured ? "measured" : "projected") << " 4-core time " << fmt(four_core, 5) << " s (runs "
            << fmt(runs_s, 5) << " s)\n";
  checks.expect(four_core < 45 * 60, "4-core time " + fmt(four_core, 5) + " s exceeds 45 min");

  return checks.verdict("Small subset, gated <= baseline: " + wins + "; overfit drop " + overfit + "; " +
                        (measured ? "measured" : "projected") + " 4-core time " + fmt(four_core / 60, 3) + " min");
}

// ---------------------------------------------------------------- 7

template <typename F>
bool same_bits(const gmlf::ParamList<F>& a, const gmlf::ParamList<F>& b) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.numel() != b[i].tensor.numel()) return false;
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) {
      if (std::bit_cast<Bits>(a[i].tensor[j]) != std::bit_cast<Bits>(b[i].tensor[j])) return false;
    }
  }
  return true;
}

template <typename F>
bool round_trip(const gmlf::ModelConfig& mc, const fs::path& dir) {
  gmlf::Detector<F> a(mc, 3);
  const bool dbl = std::is_same_v<F, double>;
  const auto hash = gmlf::config_hash(mc, dbl);
  const std::string bytes = gmlf::encode_checkpoint(gmlf::make_checkpoint(a.parameters(), hash));
  const auto path = (dir / (std::string(gmlf::to_string(mc.gate_kind)) + (dbl ? "_f64" : "_f32") + ".ckpt")).string();
  gmlf::write_file(path, bytes);
  gmlf::Detector<F> b(mc, 4);
  auto params = b.parameters();
  gmlf::apply_checkpoint(gmlf::decode_checkpoint(gmlf::read_file(path)), params, hash);
  return same_bits(a.parameters(), params) &&
         gmlf::encode_checkpoint(gmlf::make_checkpoint(params, hash)) == bytes;
}

Verdict criterion7(const std::string& cli, const std::string& config_dir) {
  Checks checks;
  const fs::path dir = fs::temp_directory_path() / ("gmlf_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Full-size models, a short schedule on a few full-size images.
  const auto data = gmlf::synth_dataset(gmlf::SynthSpec{}, 4, 77, "det");
  gmlf::TrainConfig tc;
  tc.sgd.lr_schedule = {{8, 1e-3}};
  tc.seed = 5;
  int identical = 0;
  for (GateKind kind : {GateKind::none, GateKind::spatial, GateKind::channel}) {
    gmlf::ModelConfig mc;
    mc.gate_kind = kind;
    auto run = [&] {
      gmlf::Detector<float> model(mc, tc.seed);
      const auto stats = gmlf::train(model, data, tc);
      return std::pair{stats.loss, gmlf::encode_checkpoint(gmlf::make_checkpoint(model.parameters(), 0))};
    };
    const auto [l1, c1] = run();
    const auto [l2, c2] = run();
    const bool same = c1 == c2 && l1 == l2;
    identical += same;
    checks.expect(same, std::string(gmlf::model_name(kind)) + ": two fixed-seed trainings differ");
  }
  {
    gmlf::ModelConfig mc;
    mc.backbone.channels = {2, 4, 4, 4, 4};
    mc.roi_size = 3;
    mc.head_hidden = 8;
    gmlf::TrainConfig small = tc;
    small.sgd.roi_batch = 16;
    auto run = [&] {
      gmlf::Detector<double> model(mc, 6);
      const auto stats = gmlf::train(model, data, small);
      return std::pair{stats.loss, gmlf::encode_checkpoint(gmlf::make_checkpoint(model.parameters(), 0))};
    };
    const bool same = run() == run();
    identical += same;
    checks.expect(same, "double precision: two fixed-seed trainings differ");
  }

  int exact = 0;
  for (GateKind kind : {GateKind::none, GateKind::spatial, GateKind::channel}) {
    gmlf::ModelConfig mc;
    mc.gate_kind = kind;
    const bool f32 = round_trip<float>(mc, dir);
    const bool f64 = round_trip<double>(mc, dir);
    exact += f32 + f64;
    checks.expect(f32 && f64, std::string(gmlf::model_name(kind)) + ": save/load is not bit-exact");
  }

  const fs::path out = dir / "compare";
  const std::string cmd = "\"" + cli + "\" compare --quiet --config \"" + config_dir + "/smoke.ini\" --out \"" +
                          out.string() + "\" > \"" + (dir / "compare.log").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  checks.expect(status == 0, "compare exited with status " + std::to_string(status));
  int rows = 0;
  std::set<std::string> models, subsets;
  std::ifstream in(out / "results.csv");
  std::string line;
  std::getline(in, line);
  checks.expect(line == gmlf::kResultsSchema, "results.csv schema line '" + line + "'");
  std::getline(in, line);
  checks.expect(line == gmlf::kResultsHeader, "results.csv header '" + line + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    const auto first = line.find(',');
    models.insert(line.substr(0, first));
    subsets.insert(line.substr(first + 1, line.find(',', first + 1) - first - 1));
  }
  checks.expect(rows == 12, "compare wrote " + std::to_string(rows) + " rows");
  checks.expect(models.size() == 3 && subsets.size() == 4, "rows do not cover 3 models x 4 subsets");
  fs::remove_all(dir);
  return checks.verdict("fixed-seed trainings byte-identical " + std::to_string(identical) +
                        "/4 (3 float models, 1 double); save/load bit-exact " + std::to_string(exact) +
                        "/6; compare emitted " + std::to_string(rows) + " rows");
}

}  // namespace

int main(int argc, char** argv) {
  gmlf::tune_allocator();
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  int threads = 0;
  std::string report = "acceptance_runs.csv";
  std::string cli = GMLF_CLI_PATH;
  std::string config_dir = GMLF_CONFIG_DIR;
  app.add_option("--criterion", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 7));
  app.add_option("--threads", threads, "Concurrent training runs for criterion 6 (default: hardware threads)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--report", report, "Per-run CSV written by criterion 6");
  app.add_option("--cli", cli, "gmlf binary used by criterion 7");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7};

  bool all_pass = true;
  for (int n : selected) {
    Verdict v;
    try {
      switch (n) {
        case 1: v = criterion1(); break;
        case 2: v = criterion2(); break;
        case 3: v = criterion3(); break;
        case 4: v = criterion4(); break;
        case 5: v = criterion5(); break;
        case 6: v = criterion6(threads, report); break;
        case 7: v = criterion7(cli, config_dir); break;
      }
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "CRITERION " << n << (v.pass ? " PASS: " : " FAIL: ") << v.detail << std::endl;
    all_pass &= v.pass;
  }
  return all_pass ? 0 : 1;
}
