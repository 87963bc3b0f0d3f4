#include <csignal>
#include <cstdlib>
#include <iostream>

#include <pthread.h>

#include "cgiqa/study.hpp"
#include "cli.hpp"

namespace cgiqa::cli {

namespace {

struct ServeArgs {
  std::string data_dir;
  std::string stimuli;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 32;
  std::size_t max_stimuli = 300;
  std::size_t compact_after = 50000;
  bool no_sync = false;
};

void run_serve(Context& ctx, const ServeArgs& a, const CLI::App& sub) {
  const json s = ctx.section("serve", {"data_dir", "stimuli_dir", "host", "port", "workers",
                                       "max_stimuli", "compact_after", "sync_writes"});
  StudyConfig cfg;
  std::string data_dir = setting<std::string>(nullptr, "", s, "data_dir", "study-data");
  if (const char* env = std::getenv("CGIQA_DATA_DIR"); env != nullptr && *env != '\0') data_dir = env;
  if (sub.get_option("--data-dir")->count()) data_dir = a.data_dir;
  cfg.data_dir = data_dir;
  cfg.stimuli_dir = setting<std::string>(sub.get_option("--stimuli"), a.stimuli, s, "stimuli_dir",
                                         (cfg.data_dir / "stimuli").string());
  cfg.max_stimuli =
      setting<std::size_t>(sub.get_option("--max-stimuli"), a.max_stimuli, s, "max_stimuli", 300);
  cfg.compact_after = setting<std::size_t>(sub.get_option("--compact-after"), a.compact_after, s,
                                           "compact_after", 50000);
  cfg.sync_writes = !a.no_sync && setting<bool>(nullptr, true, s, "sync_writes", true);
  ServerConfig server_cfg;
  server_cfg.host = setting<std::string>(sub.get_option("--host"), a.host, s, "host", "127.0.0.1");
  server_cfg.port = setting<int>(sub.get_option("--port"), a.port, s, "port", 8080);
  server_cfg.worker_threads = setting<std::size_t>(sub.get_option("--workers"), a.workers, s, "workers", 32);
  if (server_cfg.port < 0 || server_cfg.port > 65535) throw ConfigError("port out of range");
  if (server_cfg.worker_threads == 0) throw ConfigError("workers must be positive");

  RunManifest m = ctx.manifest("serve", s);
  m.config = {{"data_dir", cfg.data_dir.string()},  {"stimuli_dir", cfg.stimuli_dir.string()},
              {"host", server_cfg.host},            {"port", server_cfg.port},
              {"workers", server_cfg.worker_threads}, {"max_stimuli", cfg.max_stimuli},
              {"compact_after", cfg.compact_after}, {"sync_writes", cfg.sync_writes}};

  // Signals are taken synchronously on this thread; workers inherit the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  StudyStore store(cfg);
  StudyServer server(store, server_cfg);
  const int port = server.start();
  std::cout << "listening on http://" << server_cfg.host << ':' << port << std::endl;
  log("serve", std::to_string(store.rating_count()) + " ratings restored from " +
                   (cfg.data_dir / "study.log").string());

  int received = 0;
  sigwait(&signals, &received);
  log("serve", std::string("stopping on ") + (received == SIGINT ? "SIGINT" : "SIGTERM"));
  server.stop();

  m.summary = {{"port", port}, {"ratings", store.rating_count()},
               {"sessions", store.session_ids().size()}};
  ctx.finish(m, cfg.data_dir);
}

}  // namespace

void add_serve(CLI::App& app, Context& ctx) {
  auto args = std::make_shared<ServeArgs>();
  CLI::App* sub = app.add_subcommand("serve", "Run the rating-study HTTP service");
  sub->add_option("--data-dir", args->data_dir, "directory for the study log (env CGIQA_DATA_DIR)");
  sub->add_option("--stimuli", args->stimuli, "directory of stimulus images");
  sub->add_option("--host", args->host, "bind address");
  sub->add_option("--port", args->port, "TCP port, 0 for any free port");
  sub->add_option("--workers", args->workers, "HTTP worker threads");
  sub->add_option("--max-stimuli", args->max_stimuli, "largest accepted session");
  sub->add_option("--compact-after", args->compact_after, "log records between compactions (0: never)");
  sub->add_flag("--no-sync", args->no_sync, "skip fdatasync before acknowledging writes");
  sub->callback([&ctx, args, sub] { run_serve(ctx, *args, *sub); });
}

}  // namespace cgiqa::cli
