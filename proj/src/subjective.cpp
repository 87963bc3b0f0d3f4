#include "cgiqa/subjective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "cgiqa/csv.hpp"
#include "cgiqa/error.hpp"

namespace cgiqa {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

}  // namespace

bool on_rating_grid(double value) {
  if (!std::isfinite(value)) return false;
  if (value < kRatingMin - kGridTolerance || value > kRatingMax + kGridTolerance) return false;
  return std::abs(value - std::round(value * 10.0) / 10.0) <= kGridTolerance;
}

int rating_to_tenths(double value) {
  if (!on_rating_grid(value)) {
    throw ValidationError("rating " + csv::format_double(value) +
                          " is not on the 0.1 grid within [0, 5]");
  }
  return static_cast<int>(std::lround(value * 10.0));
}

std::string format_rating(double value) {
  if (!on_rating_grid(value)) return csv::format_double(value);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%d.%d", rating_to_tenths(value) / 10,
                rating_to_tenths(value) % 10);
  return buf;
}

std::vector<RatingRecord> read_ratings_csv(std::istream& in) {
  const csv::Table t = csv::read(in, "ratings CSV");
  const std::size_t cs = t.require("subject_id", "ratings CSV");
  const std::size_t cj = t.require("stimulus_id", "ratings CSV");
  const std::size_t cr = t.require("rating", "ratings CSV");
  const long ct = t.column("timestamp");
  std::vector<RatingRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    RatingRecord r;
    r.subject_id = row[cs];
    r.stimulus_id = row[cj];
    r.rating = csv::parse_double(row[cr], "rating");
    if (ct >= 0 && !row[static_cast<std::size_t>(ct)].empty()) {
      r.timestamp_ms = csv::parse_int(row[static_cast<std::size_t>(ct)], "timestamp");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_ratings_csv(in);
}

void write_ratings_csv(std::ostream& out, const std::vector<RatingRecord>& records) {
  out << "subject_id,stimulus_id,rating,timestamp\n";
  for (const auto& r : records) {
    out << csv::escape(r.subject_id) << ',' << csv::escape(r.stimulus_id) << ','
        << format_rating(r.rating) << ',' << r.timestamp_ms << '\n';
  }
}

RatingMatrix::RatingMatrix(std::vector<std::string> subjects, std::vector<std::string> stimuli)
    : subjects_(std::move(subjects)),
      stimuli_(std::move(stimuli)),
      values_(subjects_.size() * stimuli_.size(), kMissing) {}

RatingMatrix RatingMatrix::from_records(const std::vector<RatingRecord>& records) {
  std::vector<std::string> subjects, stimuli;
  std::unordered_map<std::string, std::size_t> si, ji;
  for (const auto& r : records) {
    if (!std::isfinite(r.rating) || r.rating < kRatingMin || r.rating > kRatingMax) {
      throw ValidationError("rating " + csv::format_double(r.rating) + " by " + r.subject_id +
                            " for " + r.stimulus_id + " is outside [0, 5]");
    }
    if (si.emplace(r.subject_id, subjects.size()).second) subjects.push_back(r.subject_id);
    if (ji.emplace(r.stimulus_id, stimuli.size()).second) stimuli.push_back(r.stimulus_id);
  }
  RatingMatrix m(std::move(subjects), std::move(stimuli));
  std::vector<std::int64_t> stamp(m.values_.size(), std::numeric_limits<std::int64_t>::min());
  for (const auto& r : records) {
    const std::size_t i = si[r.subject_id], j = ji[r.stimulus_id];
    const std::size_t k = i * m.stimuli_.size() + j;
    if (r.timestamp_ms >= stamp[k]) {
      stamp[k] = r.timestamp_ms;
      m.values_[k] = r.rating;
    }
  }
  return m;
}

bool RatingMatrix::has(std::size_t subject, std::size_t stimulus) const {
  return !std::isnan(at(subject, stimulus));
}

double RatingMatrix::at(std::size_t subject, std::size_t stimulus) const {
  if (subject >= subjects_.size() || stimulus >= stimuli_.size()) {
    throw DimensionError("rating index out of range");
  }
  return values_[subject * stimuli_.size() + stimulus];
}

void RatingMatrix::set(std::size_t subject, std::size_t stimulus, double value) {
  if (subject >= subjects_.size() || stimulus >= stimuli_.size()) {
    throw DimensionError("rating index out of range");
  }
  values_[subject * stimuli_.size() + stimulus] = value;
}

void RatingMatrix::clear(std::size_t subject, std::size_t stimulus) {
  set(subject, stimulus, kMissing);
}

std::size_t RatingMatrix::subject_rating_count(std::size_t subject) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < stimuli_.size(); ++j) n += has(subject, j);
  return n;
}

std::size_t RatingMatrix::stimulus_rating_count(std::size_t stimulus) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < subjects_.size(); ++i) n += has(i, stimulus);
  return n;
}

ZScores zscore(const RatingMatrix& ratings) {
  ZScores out{RatingMatrix(ratings.subjects(), ratings.stimuli()), {}};
  out.stats.resize(ratings.subject_count());
  for (std::size_t i = 0; i < ratings.subject_count(); ++i) {
    SubjectStats& s = out.stats[i];
    double sum = 0.0;
    for (std::size_t j = 0; j < ratings.stimulus_count(); ++j) {
      if (ratings.has(i, j)) {
        sum += ratings.at(i, j);
        ++s.count;
      }
    }
    if (s.count < 2) {
      throw ValidationError("subject " + ratings.subjects()[i] + " has " +
                            std::to_string(s.count) + " rating(s); z-scores need at least 2");
    }
    s.mean = sum / static_cast<double>(s.count);
    double ss = 0.0;
    for (std::size_t j = 0; j < ratings.stimulus_count(); ++j) {
      if (ratings.has(i, j)) ss += (ratings.at(i, j) - s.mean) * (ratings.at(i, j) - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
    s.degenerate = s.std == 0.0;
    if (s.degenerate) continue;
    for (std::size_t j = 0; j < ratings.stimulus_count(); ++j) {
      if (ratings.has(i, j)) out.z.set(i, j, (ratings.at(i, j) - s.mean) / s.std);
    }
  }
  return out;
}

RejectionReport reject_subjects(const RatingMatrix& ratings, const ZScores& z) {
  const std::size_t S = ratings.subject_count();
  if (S < 3) {
    throw ValidationError("subject screening needs at least 3 subjects, got " +
                          std::to_string(S));
  }
  if (z.stats.size() != S) throw DimensionError("z-scores do not match the rating matrix");
  RejectionReport report;
  report.subjects.resize(S);
  report.retained.assign(S, false);
  std::vector<double> u;
  std::vector<std::size_t> who;
  for (std::size_t j = 0; j < ratings.stimulus_count(); ++j) {
    u.clear();
    who.clear();
    for (std::size_t i = 0; i < S; ++i) {
      if (!z.stats[i].degenerate && ratings.has(i, j)) {
        u.push_back(ratings.at(i, j));
        who.push_back(i);
      }
    }
    if (u.size() < 2) continue;
    const double n = static_cast<double>(u.size());
    double mean = 0.0;
    for (double v : u) mean += v;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : u) {
      const double d2 = (v - mean) * (v - mean);
      m2 += d2;
      m4 += d2 * d2;
    }
    const double sd = std::sqrt(m2 / (n - 1.0));
    m2 /= n;
    m4 /= n;
    const double beta2 = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
    const double k = (beta2 >= 2.0 && beta2 <= 4.0) ? 2.0 : std::sqrt(20.0);
    for (std::size_t t = 0; t < u.size(); ++t) {
      SubjectScreening& s = report.subjects[who[t]];
      ++s.count;
      if (u[t] > mean + k * sd) ++s.above;
      if (u[t] < mean - k * sd) ++s.below;
    }
  }
  for (std::size_t i = 0; i < S; ++i) {
    SubjectScreening& s = report.subjects[i];
    s.degenerate = z.stats[i].degenerate;
    if (s.degenerate) continue;
    const double pq = static_cast<double>(s.above + s.below);
    s.rejected = s.count > 0 && pq / static_cast<double>(s.count) > 0.05 &&
                 std::abs(static_cast<double>(s.above) - static_cast<double>(s.below)) / pq < 0.3;
    report.retained[i] = !s.rejected;
    if (s.rejected) report.rejected.push_back(i);
  }
  return report;
}

void RescaleConfig::validate() const {
  if (!std::isfinite(z_low) || !std::isfinite(z_high) || !(z_high > z_low)) {
    throw ConfigError("rescale range must satisfy z_low < z_high");
  }
}

double RescaleConfig::apply(double z) const {
  return std::clamp((z - z_low) * 5.0 / (z_high - z_low), 0.0, 5.0);
}

MosTable rescale_and_mos(const ZScores& z, const std::vector<bool>& retained,
                         const RescaleConfig& rescale) {
  rescale.validate();
  const RatingMatrix& m = z.z;
  if (retained.size() != m.subject_count()) {
    throw DimensionError("retained mask does not match the subject count");
  }
  MosTable table;
  std::vector<double> scores;
  for (std::size_t j = 0; j < m.stimulus_count(); ++j) {
    scores.clear();
    for (std::size_t i = 0; i < m.subject_count(); ++i) {
      if (retained[i] && m.has(i, j)) scores.push_back(rescale.apply(m.at(i, j)));
    }
    if (scores.empty()) {
      table.without_ratings.push_back(m.stimuli()[j]);
      continue;
    }
    MosRow row{m.stimuli()[j], 0.0, 0.0, scores.size()};
    for (double s : scores) row.mos += s;
    row.mos /= static_cast<double>(scores.size());
    if (scores.size() > 1) {
      double ss = 0.0;
      for (double s : scores) ss += (s - row.mos) * (s - row.mos);
      row.std = std::sqrt(ss / static_cast<double>(scores.size() - 1));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

MosResult compute_mos(const RatingMatrix& ratings, const RescaleConfig& rescale) {
  for (std::size_t j = 0; j < ratings.stimulus_count(); ++j) {
    const std::size_t n = ratings.stimulus_rating_count(j);
    if (n < 2) {
      throw ValidationError("stimulus " + ratings.stimuli()[j] + " has " + std::to_string(n) +
                            " rating(s); MOS needs at least 2");
    }
  }
  MosResult r;
  r.z = zscore(ratings);
  r.report = reject_subjects(ratings, r.z);
  r.table = rescale_and_mos(r.z, r.report.retained, rescale);
  return r;
}

MosDistribution mos_distribution(const MosTable& table, std::size_t bins) {
  if (bins < 1) throw ValidationError("MOS histogram needs at least one bin");
  if (table.rows.empty()) throw ValidationError("MOS table is empty");
  MosDistribution d;
  d.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) {
    d.edges.push_back(kRatingMax * static_cast<double>(b) / static_cast<double>(bins));
  }
  for (const MosRow& r : table.rows) {
    const double t = r.mos / kRatingMax * static_cast<double>(bins);
    const std::size_t b = t > 0.0 ? std::min(static_cast<std::size_t>(t), bins - 1) : 0;
    ++d.counts[b];
    d.mean += r.mos;
  }
  const double n = static_cast<double>(table.rows.size());
  d.mean /= n;
  for (const MosRow& r : table.rows) d.std += (r.mos - d.mean) * (r.mos - d.mean);
  d.std = std::sqrt(d.std / n);
  return d;
}

void write_mos_csv(std::ostream& out, const MosTable& table) {
  out << "stimulus_id,mos,std,count\n";
  for (const MosRow& r : table.rows) {
    out << csv::escape(r.stimulus_id) << ',' << csv::format_double(r.mos) << ','
        << csv::format_double(r.std) << ',' << r.count << '\n';
  }
}

MosTable read_mos_csv(std::istream& in) {
  const csv::Table t = csv::read(in, "MOS CSV");
  const std::size_t cj = t.require("stimulus_id", "MOS CSV");
  const std::size_t cm = t.require("mos", "MOS CSV");
  const long cs = t.column("std");
  const long cn = t.column("count");
  MosTable table;
  for (const auto& row : t.rows) {
    MosRow r;
    r.stimulus_id = row[cj];
    r.mos = csv::parse_double(row[cm], "mos");
    if (cs >= 0) r.std = csv::parse_double(row[static_cast<std::size_t>(cs)], "std");
    if (cn >= 0) {
      r.count = static_cast<std::size_t>(csv::parse_int(row[static_cast<std::size_t>(cn)], "count"));
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

MosTable read_mos_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_mos_csv(in);
}

nlohmann::json mos_to_json(const MosResult& result, const RatingMatrix& ratings) {
  nlohmann::json j;
  j["mos"] = nlohmann::json::array();
  for (const MosRow& r : result.table.rows) {
    j["mos"].push_back({{"stimulus_id", r.stimulus_id},
                        {"mos", r.mos},
                        {"std", r.std},
                        {"count", r.count}});
  }
  j["without_ratings"] = result.table.without_ratings;
  j["subjects"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ratings.subject_count(); ++i) {
    const SubjectScreening& s = result.report.subjects[i];
    const SubjectStats& st = result.z.stats[i];
    j["subjects"].push_back({{"subject_id", ratings.subjects()[i]},
                             {"mean", st.mean},
                             {"std", st.std},
                             {"count", st.count},
                             {"degenerate", st.degenerate},
                             {"above", s.above},
                             {"below", s.below},
                             {"rejected", s.rejected}});
  }
  return j;
}

}  // namespace cgiqa
