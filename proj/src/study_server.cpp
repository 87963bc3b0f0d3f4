#include <httplib.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "cgiqa/error.hpp"
#include "cgiqa/image.hpp"
#include "cgiqa/study.hpp"

namespace cgiqa {
namespace {

using json = nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& type,
                const std::string& message) {
  send_json(res, status, {{"error", {{"type", type}, {"message", message}}}});
}

std::string required_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw ValidationError(std::string("missing query parameter '") + name + "'");
  return req.get_param_value(name);
}

json parse_body(const httplib::Request& req) {
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

// Maps library errors onto HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct StudyServer::Impl {
  httplib::Server http;
  std::thread worker;
};

StudyServer::StudyServer(StudyStore& store, ServerConfig cfg)
    : impl_(std::make_unique<Impl>()), store_(store), cfg_(std::move(cfg)) {
  auto& http = impl_->http;
  const std::size_t threads = std::max<std::size_t>(cfg_.worker_threads, 1);
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  http.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  http.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    CreateSessionRequest r;
    r.stimuli = body.at("stimuli").get<std::vector<std::string>>();
    r.seed = body.value("seed", std::uint64_t{0});
    if (body.contains("raters") && !body.at("raters").is_null()) {
      r.raters = body.at("raters").get<std::vector<std::string>>();
    }
    if (body.contains("session_id") && !body.at("session_id").is_null()) {
      r.session_id = body.at("session_id").get<std::string>();
    }
    send_json(res, 201, to_json(store_.create_session(r)));
  }));

  http.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"sessions", store_.session_ids()}});
  }));

  http.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req,
                                                 httplib::Response& res) {
    send_json(res, 200, to_json(store_.session(req.matches[1])));
  }));

  auto navigate = [this](const char* dir) {
    return guarded([this, dir](const httplib::Request& req, httplib::Response& res) {
      const std::string session = req.matches[1];
      const std::string rater = required_param(req, "rater");
      const std::string d = dir;
      const Navigation n = d == "next"   ? store_.next(session, rater)
                           : d == "prev" ? store_.prev(session, rater)
                                         : store_.current(session, rater);
      send_json(res, 200, to_json(n, session, rater));
    });
  };
  http.Get(R"(/sessions/([^/]+)/next)", navigate("next"));
  http.Get(R"(/sessions/([^/]+)/prev)", navigate("prev"));
  http.Get(R"(/sessions/([^/]+)/current)", navigate("current"));

  http.Post("/ratings", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    if (!body.contains("value") || !body.at("value").is_number()) {
      throw ValidationError("'value' must be a number");
    }
    const std::string session = body.at("session").get<std::string>();
    const std::string rater = body.at("rater").get<std::string>();
    const std::string stimulus = body.at("stimulus").get<std::string>();
    const double stored = store_.submit(session, rater, stimulus, body.at("value").get<double>());
    send_json(res, 200, {{"ok", true},
                         {"session", session},
                         {"rater", rater},
                         {"stimulus", stimulus},
                         {"value", stored}});
  }));

  http.Get("/export.csv", guarded([this](const httplib::Request&, httplib::Response& res) {
    std::ostringstream out;
    write_ratings_csv(out, store_.export_records());
    res.set_content(out.str(), "text/csv");
  }));

  http.Get(R"(/stimuli/([^/]+))", guarded([this](const httplib::Request& req,
                                                httplib::Response& res) {
    const auto path = store_.stimulus_path(req.matches[1]);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read stimulus " + path.filename().string());
    std::ostringstream bytes;
    bytes << in.rdbuf();
    std::string type = image_content_type(path);
    if (type.empty()) type = "application/octet-stream";
    res.set_content(bytes.str(), type);
  }));
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind() {
  if (port_ > 0) return port_;
  auto& http = impl_->http;
  if (cfg_.port == 0) {
    port_ = http.bind_to_any_port(cfg_.host);
  } else {
    port_ = http.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
  }
  if (port_ <= 0) {
    port_ = 0;
    throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
  return port_;
}

int StudyServer::start() {
  bind();
  auto& http = impl_->http;
  impl_->worker = std::thread([&http] { http.listen_after_bind(); });
  http.wait_until_ready();
  return port_;
}

void StudyServer::run() {
  bind();
  impl_->http.listen_after_bind();
}

void StudyServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace cgiqa
