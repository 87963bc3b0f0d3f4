#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cgiqa {

// Correlations throw DegenerateError when either input has zero variance and
// ValidationError for mismatched or too-short inputs (n < 2).
double plcc(const std::vector<double>& a, const std::vector<double>& b);
double srcc(const std::vector<double>& a, const std::vector<double>& b);
// Kendall tau-b in O(n log n).
double krcc(const std::vector<double>& a, const std::vector<double>& b);
double rmse(const std::vector<double>& a, const std::vector<double>& b);

// 1-based ranks, ties share their average rank.
std::vector<double> average_ranks(const std::vector<double>& v);

// q = b1 * (0.5 - 1 / (1 + exp(b2 * (y - b3)))) + b4 * y + b5
struct LogisticParams {
  std::array<double, 5> beta{0, 0, 0, 0, 0};

  double operator()(double y) const;
  // True when the curve is non-decreasing over [lo, hi].
  bool monotone_on(double lo, double hi) const;
};

struct LogisticFitOptions {
  std::size_t restarts = 8;
  std::size_t max_iterations = 500;
  std::uint64_t seed = 0;
};

struct LogisticFit {
  LogisticParams params;
  std::vector<double> mapped;
  double rmse = 0.0;
  // Constant predictions: the curve collapses to mean(q).
  bool degenerate = false;
};

// Levenberg-Marquardt least squares from several starts; the lowest residual
// wins. Needs n >= 6.
LogisticFit logistic_fit(const std::vector<double>& predictions, const std::vector<double>& mos,
                         const LogisticFitOptions& options = {});

struct EvalReport {
  double srcc = 0.0;
  double plcc = 0.0;
  double krcc = 0.0;
  double rmse = 0.0;
  LogisticParams logistic;
  std::size_t n = 0;
  // Whether the fitted curve is non-decreasing over the prediction range.
  bool monotone_mapping = true;
};

// SRCC and KRCC on the raw predictions, PLCC and RMSE after the logistic
// mapping. Throws DegenerateError for constant predictions or MOS.
EvalReport evaluate(const std::vector<double>& predictions, const std::vector<double>& mos,
                    const LogisticFitOptions& options = {});

enum class Verdict { a_better, b_better, indistinguishable };
std::string to_string(Verdict v);

struct ResidualTest {
  Verdict verdict = Verdict::indistinguishable;
  double f_ratio = 1.0;  // larger variance over smaller
  double critical = 0.0;
  double p_value = 1.0;  // two-sided
};

// Two-sided F-test on residual variances. Needs equal lengths, n >= 10.
ResidualTest residual_test(const std::vector<double>& residuals_a,
                           const std::vector<double>& residuals_b, double alpha = 0.05);

struct Split {
  std::vector<std::size_t> train;  // sorted
  std::vector<std::size_t> test;   // sorted
};

struct SplitProtocol {
  std::size_t repeats = 10;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Seeded random splits that keep items of one group on the same side. An
// empty `groups` makes every item its own group. Throws ValidationError when
// fewer than `repeats` distinct splits exist.
std::vector<Split> make_splits(std::size_t items, const std::vector<std::string>& groups,
                               const SplitProtocol& protocol);

struct CriterionSummary {
  double mean = 0.0;
  double std = 0.0;  // sample std across splits
};

struct SplitOutcome {
  std::size_t index = 0;
  std::optional<EvalReport> report;  // empty when degenerate
  std::string error;
};

struct ProtocolReport {
  std::vector<SplitOutcome> splits;
  CriterionSummary srcc, plcc, krcc, rmse;
  std::size_t degenerate = 0;
  // Every split degenerate: summaries are NaN.
  bool all_degenerate() const { return degenerate == splits.size(); }
};

// Runner trains on split.train and returns predictions aligned with
// split.test. DegenerateError from evaluation marks the split degenerate.
using SplitRunner = std::function<std::vector<double>(const Split&, std::size_t index)>;

ProtocolReport repeated_protocol(const std::vector<Split>& splits, const std::vector<double>& mos,
                                 const SplitRunner& runner);

}  // namespace cgiqa
