#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cgiqa {

// Ratings live on [0, 5] with a 0.1 step.
inline constexpr double kRatingMin = 0.0;
inline constexpr double kRatingMax = 5.0;
inline constexpr double kGridTolerance = 1e-9;

bool on_rating_grid(double value);
// Integer tenths for an on-grid rating; throws ValidationError otherwise.
int rating_to_tenths(double value);
// "%.1f" for on-grid values, shortest round-trip form otherwise.
std::string format_rating(double value);

struct RatingRecord {
  std::string subject_id;
  std::string stimulus_id;
  double rating = 0.0;
  std::int64_t timestamp_ms = 0;

  bool operator==(const RatingRecord&) const = default;
};

// Columns subject_id, stimulus_id, rating, timestamp (unix milliseconds).
std::vector<RatingRecord> read_ratings_csv(std::istream& in);
std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path);
void write_ratings_csv(std::ostream& out, const std::vector<RatingRecord>& records);

// Dense subject x stimulus matrix; absent ratings are NaN.
class RatingMatrix {
 public:
  RatingMatrix() = default;
  RatingMatrix(std::vector<std::string> subjects, std::vector<std::string> stimuli);

  // Subjects and stimuli in first-seen order. A repeated (subject, stimulus)
  // pair keeps the record with the latest timestamp, later rows winning ties.
  // Ratings outside [0, 5] throw ValidationError.
  static RatingMatrix from_records(const std::vector<RatingRecord>& records);

  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<std::string>& stimuli() const { return stimuli_; }
  std::size_t subject_count() const { return subjects_.size(); }
  std::size_t stimulus_count() const { return stimuli_.size(); }

  bool has(std::size_t subject, std::size_t stimulus) const;
  double at(std::size_t subject, std::size_t stimulus) const;
  void set(std::size_t subject, std::size_t stimulus, double value);
  void clear(std::size_t subject, std::size_t stimulus);
  std::size_t subject_rating_count(std::size_t subject) const;
  std::size_t stimulus_rating_count(std::size_t stimulus) const;

 private:
  std::vector<std::string> subjects_;
  std::vector<std::string> stimuli_;
  std::vector<double> values_;
};

struct SubjectStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t count = 0;
  bool degenerate = false;  // std == 0, no z-scores emitted
};

struct ZScores {
  RatingMatrix z;  // NaN rows for degenerate subjects
  std::vector<SubjectStats> stats;
};

// Per-subject standardisation. Throws ValidationError when a subject has
// fewer than two ratings.
ZScores zscore(const RatingMatrix& ratings);

struct SubjectScreening {
  std::size_t above = 0;  // P
  std::size_t below = 0;  // Q
  std::size_t count = 0;  // N_i over screened stimuli
  bool degenerate = false;
  bool rejected = false;
};

struct RejectionReport {
  std::vector<SubjectScreening> subjects;
  std::vector<bool> retained;
  std::vector<std::size_t> rejected;  // indices, excluding degenerate subjects
};

// BT.500 screening on raw ratings of the non-degenerate subjects. Throws
// ValidationError with fewer than three subjects.
RejectionReport reject_subjects(const RatingMatrix& ratings, const ZScores& z);

// z' = clamp((z - z_low) * 5 / (z_high - z_low), 0, 5)
struct RescaleConfig {
  double z_low = -3.0;
  double z_high = 3.0;

  void validate() const;
  double apply(double z) const;
};

struct MosRow {
  std::string stimulus_id;
  double mos = 0.0;
  double std = 0.0;  // sample std of rescaled scores, 0 for a single score
  std::size_t count = 0;

  bool operator==(const MosRow&) const = default;
};

struct MosTable {
  std::vector<MosRow> rows;
  std::vector<std::string> without_ratings;  // no retained score, no MOS

  bool operator==(const MosTable&) const = default;
};

MosTable rescale_and_mos(const ZScores& z, const std::vector<bool>& retained,
                         const RescaleConfig& rescale = {});

struct MosResult {
  ZScores z;
  RejectionReport report;
  MosTable table;
};

// Full pipeline. Every stimulus needs at least two raw ratings.
MosResult compute_mos(const RatingMatrix& ratings, const RescaleConfig& rescale = {});

struct MosDistribution {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double std = 0.0;  // population
};

// Histogram over [0, 5]; 5 lands in the last bin.
MosDistribution mos_distribution(const MosTable& table, std::size_t bins);

void write_mos_csv(std::ostream& out, const MosTable& table);
MosTable read_mos_csv(std::istream& in);
MosTable read_mos_csv(const std::filesystem::path& path);
nlohmann::json mos_to_json(const MosResult& result, const RatingMatrix& ratings);

}  // namespace cgiqa
