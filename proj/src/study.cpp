#include "cgiqa/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "cgiqa/error.hpp"
#include "cgiqa/rng.hpp"

namespace cgiqa {
namespace {

using json = nlohmann::json;

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void write_all(int fd, const std::string& data, const std::string& what) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write to " + what + " failed: " + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

void sync_fd(int fd, const std::string& what) {
  if (::fdatasync(fd) != 0) throw IoError("fdatasync " + what + ": " + std::strerror(errno));
}

void sync_dir(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

void require_id(const std::string& id, const char* what) {
  if (id.empty()) throw ValidationError(std::string(what) + " id must not be empty");
}

}  // namespace

std::vector<std::string> session_order(const std::vector<std::string>& stimuli,
                                       std::uint64_t seed) {
  std::vector<std::string> order(stimuli);
  Rng rng(derive_seed(seed, 0x5e55));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

json to_json(const SessionInfo& s) {
  json j{{"session_id", s.session_id}, {"stimuli", s.order}, {"seed", s.seed}};
  j["raters"] = s.raters ? json(*s.raters) : json(nullptr);
  return j;
}

json to_json(const Navigation& n, const std::string& session, const std::string& rater) {
  json j{{"session_id", session}, {"rater", rater},   {"status", n.done ? "done" : "stimulus"},
         {"total", n.total},      {"rated", n.rated}, {"at_start", n.at_start},
         {"index", n.index}};
  if (!n.done) {
    j["stimulus_id"] = n.stimulus_id;
    j["url"] = "/stimuli/" + n.stimulus_id;
    j["rating"] = n.rating ? json(*n.rating) : json(nullptr);
  }
  return j;
}

StudyStore::StudyStore(StudyConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.data_dir.empty()) throw ConfigError("study data directory is not set");
  if (cfg_.max_stimuli == 0) throw ConfigError("max_stimuli must be positive");
  std::error_code ec;
  std::filesystem::create_directories(cfg_.data_dir, ec);
  if (ec) throw IoError("cannot create " + cfg_.data_dir.string() + ": " + ec.message());
  replay();
  open_log();
}

StudyStore::~StudyStore() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

void StudyStore::open_log() {
  const auto path = cfg_.data_dir / "study.log";
  log_fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (log_fd_ < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
}

void StudyStore::replay() {
  const auto path = cfg_.data_dir / "study.log";
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::size_t pos = 0, good = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    const std::string line = text.substr(pos, nl - pos);
    try {
      if (!line.empty()) apply(json::parse(line));
    } catch (const std::exception& e) {
      if (text.find('\n', nl + 1) != std::string::npos) {
        throw IoError(path.string() + ": corrupt record at byte " + std::to_string(pos) + ": " +
                      e.what());
      }
      break;  // torn final record
    }
    pos = nl + 1;
    good = pos;
  }
  if (good < text.size()) std::filesystem::resize_file(path, good);
}

void StudyStore::apply(const json& r) {
  const std::string type = r.at("t");
  if (type == "session") {
    Session s;
    s.info.session_id = r.at("id");
    s.info.order = r.at("order").get<std::vector<std::string>>();
    s.info.seed = r.at("seed");
    if (!r.at("raters").is_null()) s.info.raters = r.at("raters").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < s.info.order.size(); ++i) s.position[s.info.order[i]] = i;
    const std::string id = s.info.session_id;
    if (!sessions_.count(id)) session_order_.push_back(id);
    sessions_[id] = std::move(s);
    if (sessions_[id].info.raters) {
      for (const auto& rater : *sessions_[id].info.raters) enroll(sessions_[id], rater, false);
    }
  } else if (type == "enroll") {
    enroll(find(r.at("session")), r.at("rater"), false);
  } else if (type == "cursor") {
    enroll(find(r.at("session")), r.at("rater"), false).cursor = r.at("cursor");
  } else if (type == "rating") {
    Session& s = find(r.at("session"));
    RaterState& st = enroll(s, r.at("rater"), false);
    st.ratings[s.position.at(r.at("stimulus"))] = {r.at("tenths").get<int>(),
                                                   r.at("ms").get<std::int64_t>()};
  } else {
    throw IoError("unknown log record type " + type);
  }
}

void StudyStore::append(const json& record, bool durable) {
  if (log_fd_ < 0) return;  // replaying
  write_all(log_fd_, record.dump() + "\n", "study log");
  if (durable && cfg_.sync_writes) sync_fd(log_fd_, "study log");
  ++appended_since_compaction_;
}

void StudyStore::maybe_compact() {
  if (cfg_.compact_after > 0 && appended_since_compaction_ >= cfg_.compact_after) compact_locked();
}

StudyStore::Session& StudyStore::find(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

const StudyStore::Session& StudyStore::find(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

StudyStore::RaterState& StudyStore::enroll(Session& s, const std::string& rater, bool log) {
  require_id(rater, "rater");
  const auto it = s.raters.find(rater);
  if (it != s.raters.end()) return it->second;
  if (log && s.info.raters &&
      std::find(s.info.raters->begin(), s.info.raters->end(), rater) == s.info.raters->end()) {
    throw ConflictError("rater '" + rater + "' is not enrolled in session '" +
                        s.info.session_id + "'");
  }
  s.rater_order.push_back(rater);
  RaterState& st = s.raters[rater];
  if (log) append({{"t", "enroll"}, {"session", s.info.session_id}, {"rater", rater}}, false);
  return st;
}

SessionInfo StudyStore::create_session(const CreateSessionRequest& req) {
  if (req.stimuli.empty()) throw ValidationError("a session needs at least one stimulus");
  if (req.stimuli.size() > cfg_.max_stimuli) {
    throw ValidationError("a session holds at most " + std::to_string(cfg_.max_stimuli) +
                          " stimuli, got " + std::to_string(req.stimuli.size()));
  }
  std::set<std::string> unique;
  for (const auto& id : req.stimuli) {
    require_id(id, "stimulus");
    if (!unique.insert(id).second) throw ValidationError("duplicate stimulus '" + id + "'");
  }
  if (req.raters) {
    std::set<std::string> roster;
    for (const auto& r : *req.raters) {
      require_id(r, "rater");
      if (!roster.insert(r).second) throw ValidationError("duplicate rater '" + r + "'");
    }
  }
  std::lock_guard lock(mu_);
  std::string id;
  if (req.session_id) {
    id = *req.session_id;
    require_id(id, "session");
    if (sessions_.count(id)) throw ConflictError("session '" + id + "' already exists");
  } else {
    for (std::size_t k = sessions_.size() + 1;; ++k) {
      id = "session-" + std::to_string(k);
      if (!sessions_.count(id)) break;
    }
  }
  Session s;
  s.info = {id, session_order(req.stimuli, req.seed), req.raters, req.seed};
  json record{{"t", "session"}, {"id", id}, {"order", s.info.order}, {"seed", req.seed}};
  record["raters"] = req.raters ? json(*req.raters) : json(nullptr);
  append(record, true);
  apply(record);
  maybe_compact();
  return sessions_.at(id).info;
}

SessionInfo StudyStore::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  return find(id).info;
}

std::vector<std::string> StudyStore::session_ids() const {
  std::lock_guard lock(mu_);
  return session_order_;
}

Navigation StudyStore::describe(const Session& s, const RaterState& r, bool at_start) const {
  Navigation n;
  n.total = s.info.order.size();
  n.rated = r.ratings.size();
  n.index = r.cursor;
  n.at_start = at_start;
  if (r.cursor >= 0) {
    const auto pos = static_cast<std::size_t>(r.cursor);
    n.stimulus_id = s.info.order[pos];
    const auto it = r.ratings.find(pos);
    if (it != r.ratings.end()) n.rating = it->second.first / 10.0;
  }
  return n;
}

Navigation StudyStore::next(const std::string& session, const std::string& rater) {
  std::lock_guard lock(mu_);
  Session& s = find(session);
  RaterState& r = enroll(s, rater, true);
  const long total = static_cast<long>(s.info.order.size());
  if (r.ratings.size() == s.info.order.size()) {
    Navigation n = describe(s, r, false);
    n.done = true;
    return n;
  }
  long target = r.cursor + 1;
  if (target >= total) {
    target = 0;
    while (r.ratings.count(static_cast<std::size_t>(target))) ++target;
  }
  r.cursor = target;
  append({{"t", "cursor"}, {"session", session}, {"rater", rater}, {"cursor", target}}, false);
  maybe_compact();
  return describe(s, r, false);
}

Navigation StudyStore::prev(const std::string& session, const std::string& rater) {
  std::lock_guard lock(mu_);
  Session& s = find(session);
  RaterState& r = enroll(s, rater, true);
  const bool at_start = r.cursor <= 0;
  const long target = at_start ? 0 : r.cursor - 1;
  if (target != r.cursor) {
    r.cursor = target;
    append({{"t", "cursor"}, {"session", session}, {"rater", rater}, {"cursor", target}}, false);
  }
  maybe_compact();
  return describe(s, r, at_start);
}

Navigation StudyStore::current(const std::string& session, const std::string& rater) {
  std::lock_guard lock(mu_);
  Session& s = find(session);
  return describe(s, enroll(s, rater, true), false);
}

double StudyStore::submit(const std::string& session, const std::string& rater,
                          const std::string& stimulus, double value) {
  const int tenths = rating_to_tenths(value);
  std::lock_guard lock(mu_);
  Session& s = find(session);
  const auto pos = s.position.find(stimulus);
  if (pos == s.position.end()) {
    throw NotFoundError("stimulus '" + stimulus + "' is not part of session '" + session + "'");
  }
  RaterState& r = enroll(s, rater, true);
  const std::int64_t ms = now_ms();
  append({{"t", "rating"},
          {"session", session},
          {"rater", rater},
          {"stimulus", stimulus},
          {"tenths", tenths},
          {"ms", ms}},
         true);
  r.ratings[pos->second] = {tenths, ms};
  maybe_compact();
  return tenths / 10.0;
}

std::vector<RatingRecord> StudyStore::export_records() const {
  std::lock_guard lock(mu_);
  std::vector<RatingRecord> out;
  for (const auto& sid : session_order_) {
    const Session& s = sessions_.at(sid);
    for (const auto& rater : s.rater_order) {
      for (const auto& [pos, rating] : s.raters.at(rater).ratings) {
        out.push_back({rater, s.info.order[pos], rating.first / 10.0, rating.second});
      }
    }
  }
  return out;
}

std::size_t StudyStore::rating_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, s] : sessions_) {
    for (const auto& [rater, st] : s.raters) n += st.ratings.size();
  }
  return n;
}

void StudyStore::compact() {
  std::lock_guard lock(mu_);
  compact_locked();
}

void StudyStore::compact_locked() {
  const auto path = cfg_.data_dir / "study.log";
  const auto tmp = cfg_.data_dir / "study.log.tmp";
  std::string snapshot;
  for (const auto& sid : session_order_) {
    const Session& s = sessions_.at(sid);
    json rec{{"t", "session"}, {"id", sid}, {"order", s.info.order}, {"seed", s.info.seed}};
    rec["raters"] = s.info.raters ? json(*s.info.raters) : json(nullptr);
    snapshot += rec.dump() + "\n";
    for (const auto& rater : s.rater_order) {
      const RaterState& st = s.raters.at(rater);
      snapshot += json{{"t", "enroll"}, {"session", sid}, {"rater", rater}}.dump() + "\n";
      for (const auto& [pos, rating] : st.ratings) {
        snapshot += json{{"t", "rating"},     {"session", sid},         {"rater", rater},
                         {"stimulus", s.info.order[pos]}, {"tenths", rating.first},
                         {"ms", rating.second}}
                        .dump() +
                    "\n";
      }
      if (st.cursor >= 0) {
        snapshot +=
            json{{"t", "cursor"}, {"session", sid}, {"rater", rater}, {"cursor", st.cursor}}
                .dump() +
            "\n";
      }
    }
  }
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + tmp.string() + ": " + std::strerror(errno));
  try {
    write_all(fd, snapshot, tmp.string());
    sync_fd(fd, tmp.string());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
  sync_dir(cfg_.data_dir);
  if (log_fd_ >= 0) ::close(log_fd_);
  log_fd_ = -1;
  open_log();
  appended_since_compaction_ = 0;
}

std::filesystem::path StudyStore::stimulus_path(const std::string& id) const {
  if (id.empty() || id == "." || id == ".." || id.find('/') != std::string::npos ||
      id.find('\\') != std::string::npos || cfg_.stimuli_dir.empty()) {
    throw NotFoundError("no stimulus file for '" + id + "'");
  }
  const auto path = cfg_.stimuli_dir / id;
  if (!std::filesystem::is_regular_file(path)) {
    throw NotFoundError("no stimulus file for '" + id + "'");
  }
  return path;
}

}  // namespace cgiqa
