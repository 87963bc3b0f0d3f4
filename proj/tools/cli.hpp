#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cgiqa/error.hpp"
#include "cgiqa/run_manifest.hpp"

namespace cgiqa::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIo = 3,
  kConfig = 4,
  kValidation = 5,
};

// Missing or contradictory command-line input.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Options shared by every subcommand plus the parsed config document.
struct Context {
  std::vector<std::string> argv;
  std::string config_path;
  std::uint64_t seed_flag = 0;
  std::size_t threads_flag = 1;
  std::string out_flag;
  std::string manifest_flag;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  json doc = json::object();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void load();
  // Config section for a subcommand; keys outside `allowed` are rejected.
  // "seed", "threads" and "out" are always allowed.
  json section(const std::string& name, std::initializer_list<const char*> allowed) const;
  std::uint64_t seed(const json& section) const;
  std::size_t threads(const json& section) const;
  fs::path out(const json& section) const;

  RunManifest manifest(const std::string& command, const json& section) const;
  // Stamps wall time and writes the manifest to --manifest, or to
  // `<out>.manifest.json` (`<out>/manifest.json` for a directory).
  void finish(RunManifest& m, const fs::path& out) const;
};

// Flag value when given on the command line, else `section[key]`, else `fallback`.
template <class T>
T setting(const CLI::Option* flag, const T& flag_value, const json& section, const char* key,
          T fallback) {
  if (flag != nullptr && flag->count() > 0) return flag_value;
  const auto it = section.find(key);
  if (it == section.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

// Creates the parent directory of a file output.
void prepare_output(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
void log(const std::string& command, const std::string& message);

void add_attributes(CLI::App& app, Context& ctx);
void add_sample(CLI::App& app, Context& ctx);
void add_mos(CLI::App& app, Context& ctx);
void add_plotdata(CLI::App& app, Context& ctx);
void add_train(CLI::App& app, Context& ctx);
void add_eval(CLI::App& app, Context& ctx);
void add_stats_test(CLI::App& app, Context& ctx);
void add_serve(CLI::App& app, Context& ctx);

}  // namespace cgiqa::cli
