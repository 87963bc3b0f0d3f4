#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgiqa/subjective.hpp"

namespace cgiqa {

struct StudyConfig {
  std::filesystem::path data_dir;     // holds study.log
  std::filesystem::path stimuli_dir;  // files served by GET /stimuli/{id}
  std::size_t max_stimuli = 300;
  // Rewrite the log once this many records were appended since the last
  // compaction; 0 disables.
  std::size_t compact_after = 50000;
  bool sync_writes = true;
};

struct CreateSessionRequest {
  std::vector<std::string> stimuli;
  std::uint64_t seed = 0;
  std::optional<std::vector<std::string>> raters;  // empty optional: open enrollment
  std::optional<std::string> session_id;
};

struct SessionInfo {
  std::string session_id;
  std::vector<std::string> order;  // presentation order
  std::optional<std::vector<std::string>> raters;
  std::uint64_t seed = 0;
};

struct Navigation {
  bool done = false;
  bool at_start = false;
  long index = -1;
  std::size_t total = 0;
  std::size_t rated = 0;
  std::string stimulus_id;
  std::optional<double> rating;
};

nlohmann::json to_json(const SessionInfo& s);
nlohmann::json to_json(const Navigation& n, const std::string& session, const std::string& rater);

// Seeded Fisher-Yates order of the stimuli; identical for identical input.
std::vector<std::string> session_order(const std::vector<std::string>& stimuli, std::uint64_t seed);

// Session state with an append-only JSON-lines log. Ratings and sessions are
// flushed to disk before a call returns; the constructor replays the log and
// drops a torn final line. All methods are thread-safe.
class StudyStore {
 public:
  explicit StudyStore(StudyConfig cfg);
  ~StudyStore();
  StudyStore(const StudyStore&) = delete;
  StudyStore& operator=(const StudyStore&) = delete;

  const StudyConfig& config() const { return cfg_; }

  SessionInfo create_session(const CreateSessionRequest& req);
  SessionInfo session(const std::string& id) const;
  std::vector<std::string> session_ids() const;

  Navigation next(const std::string& session, const std::string& rater);
  Navigation prev(const std::string& session, const std::string& rater);
  Navigation current(const std::string& session, const std::string& rater);

  // Returns the stored value. Throws ValidationError for off-grid values,
  // NotFoundError for unknown sessions or stimuli, ConflictError for raters
  // outside a closed roster.
  double submit(const std::string& session, const std::string& rater,
                const std::string& stimulus, double value);

  // Session creation order, then rater enrollment order, then presentation order.
  std::vector<RatingRecord> export_records() const;
  std::size_t rating_count() const;

  // Rewrites the log as a snapshot (temp file + rename).
  void compact();

  // Resolves a stimulus id to a file under stimuli_dir; NotFoundError when
  // missing or when the id would escape the directory.
  std::filesystem::path stimulus_path(const std::string& id) const;

 private:
  struct RaterState {
    long cursor = -1;
    std::map<std::size_t, std::pair<int, std::int64_t>> ratings;  // position -> (tenths, ms)
  };
  struct Session {
    SessionInfo info;
    std::map<std::string, std::size_t> position;
    std::vector<std::string> rater_order;
    std::map<std::string, RaterState> raters;
  };

  Session& find(const std::string& id);
  const Session& find(const std::string& id) const;
  RaterState& enroll(Session& s, const std::string& rater, bool log);
  Navigation describe(const Session& s, const RaterState& r, bool at_start) const;
  void apply(const nlohmann::json& record);
  void append(const nlohmann::json& record, bool durable);
  void replay();
  void open_log();
  nlohmann::json session_record(const Session& s) const;
  void compact_locked();
  void maybe_compact();

  StudyConfig cfg_;
  mutable std::mutex mu_;
  std::vector<std::string> session_order_;
  std::map<std::string, Session> sessions_;
  int log_fd_ = -1;
  std::size_t appended_since_compaction_ = 0;
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t worker_threads = 32;
};

// HTTP front end over a StudyStore. start() binds and serves on a background
// thread; stop() joins it.
class StudyServer {
 public:
  StudyServer(StudyStore& store, ServerConfig cfg);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds without serving; returns the port.
  int bind();
  int start();  // returns the bound port
  void stop();
  // Binds if needed and serves on the calling thread until stop().
  void run();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  StudyStore& store_;
  ServerConfig cfg_;
  int port_ = 0;
};

}  // namespace cgiqa
