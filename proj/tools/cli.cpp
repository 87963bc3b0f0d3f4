#include "cli.hpp"

#include <fstream>
#include <iostream>

#include "cgiqa/config.hpp"

namespace cgiqa::cli {

void Context::load() {
  if (!config_path.empty()) doc = load_config(config_path);
}

json Context::section(const std::string& name, std::initializer_list<const char*> allowed) const {
  json s = config_section(doc, name);
  for (const auto& [key, value] : s.items()) {
    bool known = key == "seed" || key == "threads" || key == "out";
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("config section '" + name + "': unknown key '" + key + "'");
  }
  return s;
}

std::uint64_t Context::seed(const json& s) const {
  return setting<std::uint64_t>(seed_opt, seed_flag, s, "seed",
                                setting<std::uint64_t>(nullptr, 0, doc, "seed", 0));
}

std::size_t Context::threads(const json& s) const {
  const auto n = setting<std::size_t>(threads_opt, threads_flag, s, "threads",
                                      setting<std::size_t>(nullptr, 0, doc, "threads", 1));
  if (n == 0) throw ConfigError("threads must be positive");
  return n;
}

fs::path Context::out(const json& s) const {
  const auto path = setting<std::string>(out_opt, out_flag, s, "out", "");
  if (path.empty()) throw UsageError("--out is required");
  return path;
}

RunManifest Context::manifest(const std::string& command, const json& s) const {
  RunManifest m;
  m.command = command;
  m.argv = argv;
  m.seed = seed(s);
  m.threads = threads(s);
  return m;
}

void Context::finish(RunManifest& m, const fs::path& out) const {
  m.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  fs::path path = manifest_flag;
  if (path.empty()) {
    path = fs::is_directory(out) ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
  }
  prepare_output(path);
  m.write(path);
}

void prepare_output(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  prepare_output(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

void log(const std::string& command, const std::string& message) {
  std::cerr << "[" << command << "] " << message << std::endl;
}

}  // namespace cgiqa::cli
