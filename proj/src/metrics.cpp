#include "cgiqa/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "cgiqa/error.hpp"
#include "cgiqa/rng.hpp"

namespace cgiqa {
namespace {

void require_pair(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + ": length mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw ValidationError(std::string(what) + ": needs at least 2 values");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw ValidationError(std::string(what) + ": non-finite input");
    }
  }
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw DegenerateError(std::string(what) + " undefined: zero variance input");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// Sum over runs of equal adjacent values of t(t-1)/2.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq equal) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Sorts v in place and returns the number of inversions.
std::uint64_t merge_count(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += mid - i;
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

double median_of(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

double logistic_bracket(double beta2, double beta3, double y) {
  return 1.0 / (1.0 + std::exp(beta2 * (y - beta3)));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

double sum_squares(const LogisticParams& p, const std::vector<double>& y,
                   const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = p(y[i]) - q[i];
    s += r * r;
  }
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

LogisticParams levenberg_marquardt(LogisticParams p, const std::vector<double>& y,
                                   const std::vector<double>& q, std::size_t max_iterations) {
  using Mat = Eigen::Matrix<double, 5, 5>;
  using Vec = Eigen::Matrix<double, 5, 1>;
  double cost = sum_squares(p, y, q);
  double lambda = 1e-3;
  for (std::size_t it = 0; it < max_iterations && cost > 0.0; ++it) {
    Mat jtj = Mat::Zero();
    Vec jtr = Vec::Zero();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto& b = p.beta;
      const double s = logistic_bracket(b[1], b[2], y[i]);
      const double ds = s * (1.0 - s);
      Vec j;
      j << 0.5 - s, b[0] * ds * (y[i] - b[2]), -b[0] * ds * b[1], y[i], 1.0;
      const double r = p(y[i]) - q[i];
      jtj.noalias() += j * j.transpose();
      jtr += j * r;
    }
    bool improved = false;
    while (lambda < 1e16) {
      Mat a = jtj;
      for (int d = 0; d < 5; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Vec step = a.ldlt().solve(-jtr);
      LogisticParams trial = p;
      for (int d = 0; d < 5; ++d) trial.beta[static_cast<std::size_t>(d)] += step(d);
      const double trial_cost = sum_squares(trial, y, q);
      if (trial_cost < cost) {
        const double gain = cost - trial_cost;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (gain <= 1e-15 * cost) return p;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return p;
}

}  // namespace

double plcc(const std::vector<double>& a, const std::vector<double>& b) {
  require_pair(a, b, "PLCC");
  return pearson(a, b, "PLCC");
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start + 1;
    while (end < order.size() && v[order[end]] == v[order[start]]) ++end;
    const double r = 0.5 * static_cast<double>(start + end + 1);
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = r;
    start = end;
  }
  return ranks;
}

double srcc(const std::vector<double>& a, const std::vector<double>& b) {
  require_pair(a, b, "SRCC");
  return pearson(average_ranks(a), average_ranks(b), "SRCC");
}

double krcc(const std::vector<double>& a, const std::vector<double>& b) {
  require_pair(a, b, "KRCC");
  const std::size_t n = a.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  const std::uint64_t ties_a =
      tied_pairs(n, [&](auto i, auto j) { return a[order[i]] == a[order[j]]; });
  const std::uint64_t ties_ab = tied_pairs(n, [&](auto i, auto j) {
    return a[order[i]] == a[order[j]] && b[order[i]] == b[order[j]];
  });
  std::vector<double> bs(n);
  for (std::size_t i = 0; i < n; ++i) bs[i] = b[order[i]];
  const std::uint64_t swaps = merge_count(bs);
  const std::uint64_t ties_b = tied_pairs(n, [&](auto i, auto j) { return bs[i] == bs[j]; });
  const std::uint64_t pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  if (ties_a == pairs || ties_b == pairs) {
    throw DegenerateError("KRCC undefined: zero variance input");
  }
  const double numerator = static_cast<double>(pairs) - static_cast<double>(ties_a) -
                           static_cast<double>(ties_b) + static_cast<double>(ties_ab) -
                           2.0 * static_cast<double>(swaps);
  const double denominator = std::sqrt(static_cast<double>(pairs - ties_a)) *
                             std::sqrt(static_cast<double>(pairs - ties_b));
  return std::clamp(numerator / denominator, -1.0, 1.0);
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  require_pair(a, b, "RMSE");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double LogisticParams::operator()(double y) const {
  const auto& b = beta;
  return b[0] * (0.5 - logistic_bracket(b[1], b[2], y)) + b[3] * y + b[4];
}

bool LogisticParams::monotone_on(double lo, double hi) const {
  // s(1 - s) peaks at y = b3, so the slope is extremal there or at an end.
  auto slope = [&](double y) {
    const double s = logistic_bracket(beta[1], beta[2], y);
    return beta[0] * beta[1] * s * (1.0 - s) + beta[3];
  };
  const double mid = std::clamp(beta[2], lo, hi);
  return std::min({slope(lo), slope(hi), slope(mid)}) >= -1e-12;
}

LogisticFit logistic_fit(const std::vector<double>& predictions, const std::vector<double>& mos,
                         const LogisticFitOptions& options) {
  require_pair(predictions, mos, "logistic fit");
  if (predictions.size() < 6) throw ValidationError("logistic fit needs at least 6 points");
  const auto [lo, hi] = std::minmax_element(predictions.begin(), predictions.end());
  const double y_range = *hi - *lo;
  LogisticFit fit;
  if (y_range == 0.0) {
    fit.degenerate = true;
    fit.params.beta = {0.0, 0.0, *lo, 0.0, mean_of(mos)};
  } else {
    const auto [qlo, qhi] = std::minmax_element(mos.begin(), mos.end());
    const LinearFit lin = linear_fit(predictions, mos);
    const double y_med = median_of(predictions);
    double y_std = 0.0;
    for (double v : predictions) y_std += (v - mean_of(predictions)) * (v - mean_of(predictions));
    y_std = std::sqrt(y_std / static_cast<double>(predictions.size()));

    std::vector<LogisticParams> starts;
    starts.push_back({{*qhi - *qlo, 1.0, y_med, lin.slope, lin.intercept}});
    starts.push_back({{*qhi - *qlo, 1.0 / y_std, y_med, lin.slope, lin.intercept}});
    starts.push_back({{0.0, 1.0 / y_std, y_med, lin.slope, lin.intercept}});
    Rng rng(options.seed);
    for (std::size_t r = 0; r < options.restarts; ++r) {
      starts.push_back({{(*qhi - *qlo) * uniform(rng, -1.5, 1.5),
                         std::exp(normal(rng, 0.0, 1.0)) / y_std, uniform(rng, *lo, *hi),
                         lin.slope * uniform(rng, 0.0, 1.0), lin.intercept}});
    }
    double best = std::numeric_limits<double>::infinity();
    for (const LogisticParams& s : starts) {
      const LogisticParams p = levenberg_marquardt(s, predictions, mos, options.max_iterations);
      const double cost = sum_squares(p, predictions, mos);
      if (cost < best) {
        best = cost;
        fit.params = p;
      }
    }
  }
  fit.mapped.reserve(predictions.size());
  for (double v : predictions) fit.mapped.push_back(fit.params(v));
  fit.rmse = rmse(fit.mapped, mos);
  return fit;
}

EvalReport evaluate(const std::vector<double>& predictions, const std::vector<double>& mos,
                    const LogisticFitOptions& options) {
  EvalReport r;
  r.n = predictions.size();
  r.srcc = srcc(predictions, mos);
  r.krcc = krcc(predictions, mos);
  const LogisticFit fit = logistic_fit(predictions, mos, options);
  r.logistic = fit.params;
  const auto [lo, hi] = std::minmax_element(predictions.begin(), predictions.end());
  r.monotone_mapping = fit.params.monotone_on(*lo, *hi);
  const auto [mlo, mhi] = std::minmax_element(fit.mapped.begin(), fit.mapped.end());
  if (*mlo == *mhi) throw DegenerateError("PLCC undefined: logistic mapping is constant");
  r.plcc = plcc(fit.mapped, mos);
  r.rmse = fit.rmse;
  return r;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::a_better:
      return "a_better";
    case Verdict::b_better:
      return "b_better";
    case Verdict::indistinguishable:
      return "indistinguishable";
  }
  return "?";
}

ResidualTest residual_test(const std::vector<double>& residuals_a,
                           const std::vector<double>& residuals_b, double alpha) {
  require_pair(residuals_a, residuals_b, "residual test");
  if (residuals_a.size() < 10) throw ValidationError("residual test needs n >= 10");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  auto variance = [](const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double va = variance(residuals_a), vb = variance(residuals_b);
  const double dof = static_cast<double>(residuals_a.size() - 1);
  boost::math::fisher_f dist(dof, dof);
  ResidualTest t;
  t.critical = boost::math::quantile(dist, 1.0 - alpha / 2.0);
  if (va == 0.0 && vb == 0.0) return t;
  if (va == 0.0 || vb == 0.0) {
    t.f_ratio = std::numeric_limits<double>::infinity();
    t.p_value = 0.0;
    t.verdict = va == 0.0 ? Verdict::a_better : Verdict::b_better;
    return t;
  }
  t.f_ratio = std::max(va, vb) / std::min(va, vb);
  t.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, t.f_ratio)));
  if (t.f_ratio > t.critical) t.verdict = va < vb ? Verdict::a_better : Verdict::b_better;
  return t;
}

void SplitProtocol::validate() const {
  if (repeats == 0) throw ConfigError("protocol needs at least one repeat");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
}

std::vector<Split> make_splits(std::size_t items, const std::vector<std::string>& groups,
                               const SplitProtocol& protocol) {
  protocol.validate();
  if (!groups.empty() && groups.size() != items) {
    throw ValidationError("group labels do not match the item count");
  }
  std::vector<std::vector<std::size_t>> members;
  {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < items; ++i) {
      const std::string key = groups.empty() ? std::to_string(i) : groups[i];
      const auto it = std::find(names.begin(), names.end(), key);
      if (it == names.end()) {
        names.push_back(key);
        members.push_back({i});
      } else {
        members[static_cast<std::size_t>(it - names.begin())].push_back(i);
      }
    }
  }
  const std::size_t g = members.size();
  const std::size_t train_groups = static_cast<std::size_t>(
      std::llround(protocol.train_fraction * static_cast<double>(g)));
  if (train_groups == 0 || train_groups >= g) {
    throw ValidationError("cannot split " + std::to_string(g) + " group(s) " +
                          "into non-empty train and test sides");
  }
  // Distinct test-group subsets available: C(g, g - train_groups), capped.
  const std::size_t k = g - train_groups;
  double available = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    available = available * static_cast<double>(g - i) / static_cast<double>(i + 1);
  }
  if (available + 0.5 < static_cast<double>(protocol.repeats)) {
    throw ValidationError("only " + std::to_string(static_cast<long long>(available + 0.5)) +
                          " distinct split(s) possible, " + std::to_string(protocol.repeats) +
                          " requested");
  }
  std::vector<Split> out;
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::size_t> order(g);
  for (std::uint64_t attempt = 0; out.size() < protocol.repeats; ++attempt) {
    if (attempt > 1000 * protocol.repeats + 1000) {
      throw ValidationError("could not draw enough distinct splits");
    }
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(protocol.seed, attempt));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> test_groups(order.begin() + static_cast<std::ptrdiff_t>(train_groups),
                                         order.end());
    std::sort(test_groups.begin(), test_groups.end());
    if (!seen.insert(test_groups).second) continue;
    Split s;
    for (std::size_t gi = 0; gi < g; ++gi) {
      const bool is_test = std::binary_search(test_groups.begin(), test_groups.end(), gi);
      auto& side = is_test ? s.test : s.train;
      side.insert(side.end(), members[gi].begin(), members[gi].end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    out.push_back(std::move(s));
  }
  return out;
}

ProtocolReport repeated_protocol(const std::vector<Split>& splits, const std::vector<double>& mos,
                                 const SplitRunner& runner) {
  ProtocolReport report;
  std::vector<std::array<double, 4>> values;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    SplitOutcome outcome{k, std::nullopt, ""};
    const std::vector<double> pred = runner(splits[k], k);
    if (pred.size() != splits[k].test.size()) {
      throw ValidationError("runner returned " + std::to_string(pred.size()) +
                            " predictions for " + std::to_string(splits[k].test.size()) +
                            " test items");
    }
    std::vector<double> target;
    for (std::size_t i : splits[k].test) target.push_back(mos.at(i));
    try {
      outcome.report = evaluate(pred, target);
      values.push_back({outcome.report->srcc, outcome.report->plcc, outcome.report->krcc,
                        outcome.report->rmse});
    } catch (const DegenerateError& e) {
      outcome.error = e.what();
      ++report.degenerate;
    }
    report.splits.push_back(std::move(outcome));
  }
  CriterionSummary* summaries[4] = {&report.srcc, &report.plcc, &report.krcc, &report.rmse};
  for (std::size_t c = 0; c < 4; ++c) {
    CriterionSummary& s = *summaries[c];
    if (values.empty()) {
      s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    for (const auto& v : values) s.mean += v[c];
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      for (const auto& v : values) s.std += (v[c] - s.mean) * (v[c] - s.mean);
      s.std = std::sqrt(s.std / static_cast<double>(values.size() - 1));
    }
  }
  return report;
}

}  // namespace cgiqa
