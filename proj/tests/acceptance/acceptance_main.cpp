// Acceptance suite: one line per criterion, exit status 0 only when all pass.
//   acceptance <path-to-cgiqa-cli> [criterion-name ...]

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "../process.hpp"
#include "../test_util.hpp"
#include "cgiqa/attributes.hpp"
#include "cgiqa/checkpoint.hpp"
#include "cgiqa/error.hpp"
#include "cgiqa/grad_check.hpp"
#include "cgiqa/metrics.hpp"
#include "cgiqa/model.hpp"
#include "cgiqa/ops.hpp"
#include "cgiqa/subjective.hpp"
#include "cgiqa/synthetic.hpp"
#include "cgiqa/train.hpp"

namespace cgiqa {
namespace {

using testing::random_tensor;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient suite

double project(const Tensor& w, const Tensor& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += w[i] * t[i];
  return acc;
}

struct GradTally {
  double worst = 0.0;
  std::size_t checks = 0;
  std::vector<std::string> failures;

  void add(const std::string& what, const GradCheckReport& r) {
    worst = std::max(worst, r.max_relative_error);
    ++checks;
    if (!r.passed) failures.push_back(what);
  }
};

void primitive_checks(std::uint64_t seed, GradTally& tally) {
  Rng rng(seed);
  GradCheckOptions opts;
  opts.tolerance = 1e-4;
  auto conv = [&](Shape xs, Shape ws, ops::Conv2dSpec spec) {
    const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng),
                 b = random_tensor({ws[0]}, rng);
    const Tensor proj = random_tensor(ops::conv2d(x, w, b, spec).shape(), rng);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) {
        auto cg = ops::conv2d_backward(in[0], in[1], proj, spec);
        *g = {cg.input, cg.weight, cg.bias};
      }
      return project(proj, ops::conv2d(in[0], in[1], in[2], spec));
    };
    tally.add("conv2d", grad_check(fn, {x, w, b}, opts));
  };
  conv({1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1});
  conv({2, 3, 8, 8}, {4, 3, 4, 4}, {4, 0});
  conv({1, 2, 6, 6}, {3, 2, 2, 2}, {2, 0});
  conv({1, 3, 5, 5}, {2, 3, 1, 1}, {1, 0});

  for (Shape xs : {Shape{2, 2, 10, 9}, Shape{1, 3, 4, 5}}) {
    const Tensor x = random_tensor(xs, rng);
    const Tensor proj = random_tensor({xs[0], xs[1], 7, 7}, rng);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = {ops::adaptive_avg_pool_backward(in[0].shape(), proj)};
      return project(proj, ops::adaptive_avg_pool(in[0], 7, 7));
    };
    tally.add("adaptive_avg_pool", grad_check(fn, {x}, opts));
  }
  {
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor proj = random_tensor({2, 3, 1, 1}, rng);
    ScalarFn avg = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = {ops::global_avg_pool_backward(in[0].shape(), proj)};
      return project(proj, ops::global_avg_pool(in[0]));
    };
    tally.add("global_avg_pool", grad_check(avg, {x}, opts));
    ScalarFn mx = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      auto r = ops::global_max_pool(in[0]);
      if (g) *g = {ops::global_max_pool_backward(in[0].shape(), r.argmax, proj)};
      return project(proj, r.output);
    };
    tally.add("global_max_pool", grad_check(mx, {x}, opts));
  }
  {
    const Tensor x = random_tensor({3, 5}, rng), w = random_tensor({5, 4}, rng),
                 b = random_tensor({4}, rng), proj = random_tensor({3, 4}, rng);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) {
        auto lg = ops::linear_backward(in[0], in[1], proj);
        *g = {lg.input, lg.weight, lg.bias};
      }
      return project(proj, ops::linear(in[0], in[1], in[2]));
    };
    tally.add("linear", grad_check(fn, {x, w, b}, opts));
  }
  {
    Tensor x = random_tensor({4, 6}, rng);
    for (double& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
    const Tensor proj = random_tensor({4, 6}, rng);
    ScalarFn relu = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = {ops::relu_backward(in[0], proj)};
      return project(proj, ops::relu(in[0]));
    };
    tally.add("relu", grad_check(relu, {x}, opts));
    ScalarFn sig = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      const Tensor y = ops::sigmoid(in[0]);
      if (g) *g = {ops::sigmoid_backward(y, proj)};
      return project(proj, y);
    };
    tally.add("sigmoid", grad_check(sig, {x}, opts));
  }
  {
    const Tensor a = random_tensor({2, 3, 1, 1}, rng), b = random_tensor({2, 3, 4, 4}, rng);
    const Tensor proj = random_tensor(b.shape(), rng);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) {
        auto mg = ops::mul_broadcast_backward(in[0], in[1], proj);
        *g = {mg.a, mg.b};
      }
      return project(proj, ops::mul_broadcast(in[0], in[1]));
    };
    tally.add("mul_broadcast", grad_check(fn, {a, b}, opts));
  }
  {
    const Tensor a = random_tensor({1, 2, 3, 3}, rng), b = random_tensor({1, 4, 3, 3}, rng);
    const Tensor proj = random_tensor({1, 6, 3, 3}, rng);
    const std::vector<std::size_t> ch{2, 4};
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = ops::split_channels(proj, ch);
      return project(proj, ops::concat_channels(in));
    };
    tally.add("concat_channels", grad_check(fn, {a, b}, opts));
  }
  {
    const Tensor a = random_tensor({2, 3, 2, 2}, rng), b = random_tensor({2, 3, 2, 2}, rng);
    const Tensor proj = random_tensor(a.shape(), rng);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = {proj, proj};
      return project(proj, ops::add(in[0], in[1]));
    };
    tally.add("add", grad_check(fn, {a, b}, opts));
  }
  {
    const Tensor pred = random_tensor({8}, rng, 0, 5), target = random_tensor({8}, rng, 0, 5);
    ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
      if (g) *g = {ops::mse_loss_backward(in[0], target)};
      return ops::mse_loss(in[0], target);
    };
    tally.add("mse_loss", grad_check(fn, {pred}, opts));
  }
}

// MFF -> MCA -> head with respect to the stage inputs and the aesthetic features.
GradCheckReport composite_input_check(std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  const std::vector<std::size_t> channels{4, 4, 8};
  Mff mff(MffConfig{}, channels, 8, store, "mff.", rng);
  Mca mca(McaConfig{4}, 8, store, "mca.", rng);
  FusionHead head(FusionHeadConfig{6, 10, 5}, 8, 5, store, "head.", rng);
  for (ParamId id = 0; id < store.size(); ++id) {
    store[id].value = random_tensor(store.value(id).shape(), rng, -0.5, 0.5);
  }
  std::vector<Tensor> inputs;
  std::size_t size = 12;
  for (std::size_t c : channels) {
    inputs.push_back(random_tensor({2, c, size, size}, rng));
    size /= 2;
  }
  inputs.push_back(random_tensor({2, 5}, rng));
  const Tensor target({2}, {1.0, 4.0});
  ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
    Mff::Cache mc;
    Mca::Cache ac;
    FusionHead::Cache hc;
    const StageFeatures stages{{in.begin(), in.end() - 1}};
    const Tensor fused = mff.forward(stages, store, &mc);
    const Tensor fd = mca.forward(fused, store, &ac);
    const Tensor q = head.forward(fd, in.back(), store, &hc);
    if (g) {
      const auto hg = head.backward(ops::mse_loss_backward(q, target), hc, store);
      *g = mff.backward(mca.backward(hg.distortion, ac, store), mc, store);
      g->push_back(hg.aesthetic);
    }
    return ops::mse_loss(q, target);
  };
  return grad_check(fn, inputs, {1e-5, 1e-3});
}

// Full two-stream model with respect to every trainable parameter.
GradCheckReport composite_param_check(std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.backbone.input_size = 32;
  cfg.aesthetic_backbone.input_size = 32;
  TwoStreamModel model(cfg, seed);
  Rng rng(seed + 1);
  const Tensor images = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  const Tensor targets({2}, {1.5, 3.5});
  ParamStore& store = model.params();
  std::vector<ParamId> ids;
  std::vector<Tensor> values;
  for (ParamId id = 0; id < store.size(); ++id) {
    if (!store[id].frozen) {
      ids.push_back(id);
      values.push_back(store.value(id));
    }
  }
  ScalarFn fn = [&](const std::vector<Tensor>& in, std::vector<Tensor>* g) {
    for (std::size_t i = 0; i < ids.size(); ++i) store[ids[i]].value = in[i];
    store.zero_grad();
    if (!g) return ops::mse_loss(model.predict(images), targets);
    const double loss = model.loss_and_backward(images, targets);
    g->clear();
    for (ParamId id : ids) g->push_back(store[id].grad);
    return loss;
  };
  GradCheckOptions opts{1e-5, 1e-3};
  opts.max_entries_per_input = 6;
  return grad_check(fn, values, opts);
}

Outcome gradient_suite() {
  GradTally prim;
  for (std::uint64_t seed = 0; seed < 5; ++seed) primitive_checks(seed, prim);
  GradTally comp;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    comp.add("mff-mca-head inputs", composite_input_check(40 + seed));
    comp.add("two-stream params", composite_param_check(60 + seed));
  }
  Outcome o;
  o.pass = prim.failures.empty() && comp.failures.empty() && prim.worst < 1e-4 && comp.worst < 1e-3;
  o.detail = std::to_string(prim.checks) + " primitive checks max rel " + fmt("%.2e", prim.worst) +
             " (<1e-4), " + std::to_string(comp.checks) + " composite checks max rel " +
             fmt("%.2e", comp.worst) + " (<1e-3)";
  for (const auto& f : prim.failures) o.detail += "; FAILED " + f;
  for (const auto& f : comp.failures) o.detail += "; FAILED " + f;
  return o;
}

// ---------------------------------------------------------------------------

Outcome paper_shapes() {
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, std::size_t got, std::size_t want) {
    if (got != want) bad.push_back(what + "=" + std::to_string(got) + " want " + std::to_string(want));
  };
  const ModelConfig cfg = ModelConfig::paper();
  if (cfg.backbone.stage_channels != std::vector<std::size_t>{96, 192, 384, 768}) {
    bad.push_back("stage channels");
  }
  const ChannelPlan plan = channel_plan(cfg);
  expect("C", plan.concat_channels, 1440);
  expect("C/4", plan.mff_hidden, 360);
  expect("C'", plan.fused_channels, 768);
  expect("MCA hidden", plan.mca_hidden, 768 / 16);
  expect("C_A", plan.aesthetic_channels, 768);
  expect("fc1", plan.fc1, 1024);
  expect("fc2", plan.fc2, 128);
  ModelConfig c720 = cfg;
  c720.mff.fused_channels = 720;
  const ChannelPlan p720 = channel_plan(c720);
  expect("C'(720)", p720.fused_channels, 720);
  expect("MCA hidden(720)", p720.mca_hidden, 720 / 16);

  // Instantiated modules agree with the plan.
  Rng rng(0);
  ParamStore store;
  Mff mff(cfg.mff, cfg.backbone.stage_channels, plan.fused_channels, store, "mff.", rng);
  Mca mca(cfg.mca, plan.fused_channels, store, "mca.", rng);
  FusionHead head(cfg.head, plan.fused_channels, plan.aesthetic_channels, store, "head.", rng);
  expect("mff hidden", mff.hidden_channels(), 360);
  expect("mff out", mff.output_channels(), 768);
  expect("mca hidden", mca.hidden_channels(), 48);
  expect("fc1 in", store.value(store.id("head.fc1.weight")).dim(0), 2 * cfg.head.align_dim);
  expect("fc1 out", store.value(store.id("head.fc1.weight")).dim(1), 1024);
  expect("fc2 out", store.value(store.id("head.fc2.weight")).dim(1), 128);
  expect("out", store.value(store.id("head.out.weight")).dim(1), 1);
  Outcome o;
  o.pass = bad.empty();
  o.detail = "C=1440, C/4=360, C'=768 -> MCA hidden 48 (C'=720 -> 45), head 1024/128";
  for (const auto& b : bad) o.detail += "; MISMATCH " + b;
  return o;
}

Outcome mca_closed_form() {
  Rng rng(3);
  ParamStore store;
  const ModelConfig cfg = ModelConfig::paper();
  Mca mca(cfg.mca, 768, store, "mca.", rng);
  for (ParamId id = 0; id < store.size(); ++id) store[id].value.fill(0.0);
  Tensor fused({2, 768, 7, 7});
  std::vector<double> c(2 * 768);
  for (double& v : c) v = uniform(rng, -10, 10);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t p = 0; p < 49; ++p) fused[i * 49 + p] = c[i];
  }
  const Tensor fd = mca.forward(fused, store);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(fd[i] - 0.5 * c[i]));
  return {worst <= 1e-12, "max |F_D - c/2| = " + fmt("%.1e", worst) + " over 1536 channels (<=1e-12)"};
}

// ---------------------------------------------------------------------------
// Metric oracles: direct O(n^2) definitions.

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> oracle_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) less += w < v[i], equal += w == v[i];
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

double oracle_kendall_b(const std::vector<double>& a, const std::vector<double>& b) {
  double concordant = 0, discordant = 0, ties_a = 0, ties_b = 0, pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      pairs += 1;
      if (da == 0) ties_a += 1;
      if (db == 0) ties_b += 1;
      if (da * db > 0) concordant += 1;
      if (da * db < 0) discordant += 1;
    }
  }
  return (concordant - discordant) / std::sqrt((pairs - ties_a) * (pairs - ties_b));
}

Outcome metric_oracles() {
  Rng rng(11);
  double worst = 0.0;
  std::size_t tied = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(uniform(rng, 0, 48));
    const bool ties = trial % 2 == 0;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = ties ? std::floor(uniform(rng, 0, 5)) : normal(rng);
      b[i] = ties ? std::floor(uniform(rng, 0, 4)) : 0.5 * a[i] + normal(rng);
    }
    if (*std::min_element(a.begin(), a.end()) == *std::max_element(a.begin(), a.end())) a[0] += 1;
    if (*std::min_element(b.begin(), b.end()) == *std::max_element(b.begin(), b.end())) b[0] += 1;
    tied += ties;
    double r = 0;
    for (std::size_t i = 0; i < n; ++i) r += (a[i] - b[i]) * (a[i] - b[i]);
    worst = std::max({worst, std::abs(plcc(a, b) - oracle_pearson(a, b)),
                      std::abs(srcc(a, b) - oracle_pearson(oracle_ranks(a), oracle_ranks(b))),
                      std::abs(krcc(a, b) - oracle_kendall_b(a, b)),
                      std::abs(rmse(a, b) - std::sqrt(r / static_cast<double>(n)))});
  }
  return {worst < 1e-9, "100 pairs (" + std::to_string(tied) + " with ties), n<=50, max diff " +
                            fmt("%.1e", worst) + " (<1e-9)"};
}

Outcome logistic_recovery() {
  const std::vector<std::array<double, 5>> truths{{4.0, 2.0, 0.5, 0.3, 2.0},
                                                  {-3.0, 1.5, -0.2, 1.0, 1.0},
                                                  {2.5, 4.0, 0.0, 0.1, 2.5},
                                                  {5.0, 0.8, 1.0, -0.2, 3.0}};
  Rng rng(5);
  double worst = 0.0;
  for (std::size_t t = 0; t < truths.size(); ++t) {
    LogisticParams truth{truths[t]};
    std::vector<double> q(60), y(60);
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = uniform(rng, -2, 3);
      y[i] = truth(q[i]);
    }
    const LogisticFit fit = logistic_fit(q, y, {8, 500, t});
    worst = std::max(worst, fit.rmse);
  }
  // beta2 = 0: the bracket is exactly 1/2, leaving beta4 * q + beta5.
  double linear_gap = 0.0;
  for (int i = 0; i < 100; ++i) {
    LogisticParams p{{uniform(rng, -5, 5), 0.0, uniform(rng, -2, 2), uniform(rng, -2, 2),
                      uniform(rng, -2, 2)}};
    const double x = uniform(rng, -10, 10);
    linear_gap = std::max(linear_gap, std::abs(p(x) - (p.beta[3] * x + p.beta[4])));
  }
  return {worst < 1e-3 && linear_gap < 1e-12,
          "4 curves, worst fitted RMSE " + fmt("%.1e", worst) + " (<1e-3); beta2=0 vs line " +
              fmt("%.1e", linear_gap)};
}

Outcome mos_recovery() {
  PanelSpec spec;
  spec.subjects = 20;
  spec.stimuli = 100;
  spec.noise_std = 0.1;
  spec.seed = 1;
  const SyntheticPanel clean = make_panel(spec);
  const RatingMatrix ratings = RatingMatrix::from_records(clean.records);
  const MosResult r = compute_mos(ratings);
  std::vector<double> mos;
  for (const MosRow& row : r.table.rows) mos.push_back(row.mos);
  const double rho = srcc(mos, clean.true_quality);

  spec.inverse_rater = true;
  const SyntheticPanel adv = make_panel(spec);
  const RatingMatrix adv_ratings = RatingMatrix::from_records(adv.records);
  const MosResult ra = compute_mos(adv_ratings);
  const std::size_t inverse = adv_ratings.subject_count() - 1;
  const bool caught = ra.report.subjects[inverse].rejected;
  const std::size_t others = ra.report.rejected.size() - (caught ? 1 : 0);
  return {rho > 0.99 && caught,
          "Spearman " + fmt("%.4f", rho) + " (>0.99); inverse rater " +
              (caught ? "rejected" : "NOT rejected") + " (P=" +
              std::to_string(ra.report.subjects[inverse].above) +
              ", Q=" + std::to_string(ra.report.subjects[inverse].below) + "), " +
              std::to_string(others) + " honest raters rejected"};
}

// ---------------------------------------------------------------------------

bool same_prefix(const ParamStore& a, const std::vector<NamedTensor>& loaded, const std::string& prefix) {
  for (const auto& t : loaded) {
    if (!(a.value(a.id(prefix + t.name)) == t.tensor)) return false;
  }
  return !loaded.empty();
}

Outcome toy_training() {
  const std::uint64_t seed = 1;
  testing::TempDir dir("acceptance_toy");
  ModelConfig cfg = ModelConfig::desk();
  cfg.backbone.input_size = 64;
  cfg.aesthetic_backbone.input_size = 64;

  // Stand-in aesthetic pretraining, then frozen.
  const AestheticSet aes = make_aesthetic_set(64, 64, seed + 7);
  AestheticRegressor reg(cfg.aesthetic_backbone, seed + 1);
  TrainProtocol ap;
  ap.epochs = 5;
  ap.batch_size = 8;
  ap.resize = 64;
  ap.crop = 64;
  ap.adam.learning_rate = 1e-3;
  ap.seed = seed;
  std::vector<std::size_t> all(aes.images.size());
  std::iota(all.begin(), all.end(), 0);
  train_aesthetic(reg, prepare_images(aes.images, 64), aes.scores, all, ap);
  reg.save_backbone(dir / "aesthetic.cgqw");
  const auto frozen = load_tensors(dir / "aesthetic.cgqw");

  BlurSetSpec spec;
  spec.count = 80;
  spec.size = 64;
  spec.seed = seed;
  const BlurSet set = make_blur_set(spec);
  const std::vector<Split> splits = make_splits(80, {}, {1, 0.8, seed});
  TrainProtocol p;
  p.epochs = 60;
  p.batch_size = 8;
  p.resize = 72;
  p.crop = 64;
  p.adam.learning_rate = 3e-4;
  p.seed = seed;
  TwoStreamModel model(cfg, seed + 2);
  model.load_aesthetic(dir / "aesthetic.cgqw");
  const PreparedImages images = prepare_images(set.images, p.resize);
  train_model(model, images, set.mos, splits[0].train, p);
  const std::vector<double> pred = predict_items(model, images, splits[0].test, p.crop);
  std::vector<double> truth;
  for (std::size_t i : splits[0].test) truth.push_back(set.mos[i]);
  const double rho = srcc(pred, truth);
  const bool intact = same_prefix(model.params(), frozen, TwoStreamModel::kAestheticPrefix);
  return {rho >= 0.9 && intact,
          "held-out SRCC " + fmt("%.4f", rho) + " (>=0.9) on " + std::to_string(truth.size()) +
              " images; frozen aesthetic weights " + (intact ? "bit-identical" : "CHANGED")};
}

Outcome sampler_baseline() {
  Rng rng(21);
  std::string detail;
  bool pass = true;
  for (int pool_id = 0; pool_id < 5; ++pool_id) {
    const std::size_t n = 120 + 40 * static_cast<std::size_t>(pool_id);
    const std::size_t k = n / 4;
    std::vector<AttributeVector> pool;
    for (std::size_t i = 0; i < n; ++i) pool.push_back(compute_attributes(random_scene(32, 32, rng)));
    SampleOptions opt;
    opt.seed = static_cast<std::uint64_t>(pool_id);
    const SampleResult r = match_sample(pool, k, opt);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> random;
    for (int t = 0; t < 100; ++t) {
      std::shuffle(order.begin(), order.end(), rng);
      random.push_back(subset_distance(pool, {order.begin(), order.begin() + static_cast<long>(k)}, opt.bins));
    }
    std::nth_element(random.begin(), random.begin() + 50, random.end());
    const double hi = random[50];
    std::nth_element(random.begin(), random.begin() + 49, random.begin() + 50);
    const double median = 0.5 * (random[49] + hi);
    pass = pass && r.distance <= median;
    detail += (pool_id ? ", " : "") + fmt("%.3f", r.distance) + "<=" + fmt("%.3f", median);
  }
  return {pass, "distance vs random median on 5 pools: " + detail};
}

// ---------------------------------------------------------------------------
// Study service: 20 raters x 300 stimuli through the CLI server, killed and
// restarted mid-run.

class ServiceUnderTest {
 public:
  ServiceUnderTest(std::string cli, std::filesystem::path dir) : cli_(std::move(cli)), dir_(std::move(dir)) {}

  void start(int port) {
    proc_ = std::make_unique<testing::Process>(
        std::vector<std::string>{cli_, "serve", "--data-dir", (dir_ / "data").string(), "--port",
                                 std::to_string(port), "--workers", "32"},
        (dir_ / ("serve" + std::to_string(starts_++) + ".err")).string());
    const std::string line = proc_->read_line(std::chrono::seconds(30));
    if (line.rfind("listening on ", 0) != 0) throw Error("server did not start: '" + line + "'");
    port_ = std::stoi(line.substr(line.rfind(':') + 1));
  }
  void kill_hard() {
    proc_->signal(SIGKILL);
    proc_->wait();
  }
  int stop() {
    proc_->signal(SIGTERM);
    return proc_->wait();
  }
  int port() const { return port_.load(); }

 private:
  std::string cli_;
  std::filesystem::path dir_;
  std::unique_ptr<testing::Process> proc_;
  std::atomic<int> port_{0};
  int starts_ = 0;
};

double rating_for(std::size_t rater, std::size_t stimulus) {
  return static_cast<double>((rater * 7 + stimulus * 13) % 51) / 10.0;
}

Outcome study_service(const std::string& cli) {
  testing::TempDir dir("acceptance_study");
  ServiceUnderTest svc(cli, dir.path());
  svc.start(0);
  const int first_port = svc.port();

  std::vector<std::string> stimuli;
  for (int i = 0; i < 300; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "stim%03d", i);
    stimuli.push_back(buf);
  }
  {
    httplib::Client c("127.0.0.1", svc.port());
    const nlohmann::json body{{"stimuli", stimuli}, {"seed", 99}, {"session_id", "study"}};
    auto res = c.Post("/sessions", body.dump(), "application/json");
    if (!res || res->status != 201) return {false, "session creation failed"};
  }

  std::atomic<std::size_t> acked{0};
  std::atomic<std::size_t> retries{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::map<std::pair<std::string, std::string>, double> acked_values;
  std::string failure;
  const auto deadline = Clock::now() + std::chrono::minutes(5);

  // Retries every transport failure; returns the first HTTP response.
  auto request = [&](auto&& send) -> httplib::Result {
    for (;;) {
      httplib::Client c("127.0.0.1", svc.port());
      c.set_connection_timeout(2);
      c.set_read_timeout(10);
      httplib::Result res = send(c);
      if (res) return res;
      if (Clock::now() > deadline) return res;
      ++retries;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  };

  std::vector<std::thread> raters;
  for (std::size_t r = 0; r < 20; ++r) {
    raters.emplace_back([&, r] {
      const std::string rater = "rater" + std::to_string(r);
      while (!failed) {
        auto nav_res = request([&](httplib::Client& c) {
          return c.Get("/sessions/study/next?rater=" + rater);
        });
        if (!nav_res || nav_res->status != 200) {
          std::lock_guard lock(mu);
          failed = true;
          failure = "next failed for " + rater;
          return;
        }
        const auto nav = nlohmann::json::parse(nav_res->body);
        if (nav["status"] == "done") return;
        const std::string stim = nav["stimulus_id"];
        const double value = rating_for(r, std::stoul(stim.substr(4)));
        const nlohmann::json body{{"session", "study"}, {"rater", rater}, {"stimulus", stim}, {"value", value}};
        auto res = request([&](httplib::Client& c) {
          return c.Post("/ratings", body.dump(), "application/json");
        });
        if (!res || res->status != 200) {
          std::lock_guard lock(mu);
          failed = true;
          failure = "rating rejected for " + rater + "/" + stim;
          return;
        }
        std::lock_guard lock(mu);
        acked_values[{rater, stim}] = value;
        ++acked;
      }
    });
  }

  // Kill once a third of the ratings are acknowledged, restart on the same port.
  while (acked < 2000 && !failed && Clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  const std::size_t at_kill = acked;
  svc.kill_hard();
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  try {
    svc.start(first_port);
  } catch (const Error&) {
    svc.start(0);
  }
  for (auto& t : raters) t.join();
  if (failed) {
    svc.stop();
    return {false, failure};
  }

  httplib::Client c("127.0.0.1", svc.port());
  auto res = c.Get("/export.csv");
  const int stop_code = svc.stop();
  if (!res || res->status != 200) return {false, "export failed"};
  std::istringstream in(res->body);
  const auto rows = read_ratings_csv(in);
  std::size_t off_grid = 0, missing = 0;
  std::map<std::pair<std::string, std::string>, double> exported;
  for (const auto& row : rows) {
    off_grid += !on_rating_grid(row.rating);
    exported[{row.subject_id, row.stimulus_id}] = row.rating;
  }
  for (const auto& [key, value] : acked_values) {
    const auto it = exported.find(key);
    missing += it == exported.end() || it->second != value;
  }
  const bool pass = rows.size() == 6000 && exported.size() == 6000 && off_grid == 0 &&
                    missing == 0 && acked_values.size() == 6000 && stop_code == 0;
  return {pass, std::to_string(rows.size()) + " rows exported (6000 expected), " +
                    std::to_string(off_grid) + " off-grid, " + std::to_string(missing) +
                    " acked ratings lost; SIGKILL after " + std::to_string(at_kill) + " acks, " +
                    std::to_string(retries.load()) + " client retries"};
}

}  // namespace
}  // namespace cgiqa

int main(int argc, char** argv) {
  using namespace cgiqa;
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <cgiqa-cli> [criterion ...]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const std::vector<std::string> only(argv + 2, argv + argc);
  const std::vector<Criterion> criteria{
      {"gradient-suite", 60, gradient_suite},
      {"paper-preset-shapes", 5, paper_shapes},
      {"mca-closed-form", 5, mca_closed_form},
      {"metric-oracles", 10, metric_oracles},
      {"logistic-recovery", 10, logistic_recovery},
      {"mos-pipeline-recovery", 10, mos_recovery},
      {"toy-end-to-end-training", 300, toy_training},
      {"sampler-baseline", 30, sampler_baseline},
      {"study-service-protocol", 300, [&] { return study_service(cli); }},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (secs > c.time_limit_s) {
      o.pass = false;
      o.detail += "; took longer than " + fmt("%.0f", c.time_limit_s) + " s";
    }
    failures += !o.pass;
    std::printf("%s  %-24s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
