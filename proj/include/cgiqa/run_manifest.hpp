#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cgiqa {

// Lower-case hex SHA-256 of a file's bytes. Throws IoError.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

struct ArtifactHash {
  std::string path;
  std::string sha256;
};

// Record of one CLI invocation.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();  // effective settings
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<ArtifactHash> inputs;
  std::vector<ArtifactHash> outputs;
  nlohmann::json summary = nlohmann::json::object();
  double wall_time_s = 0.0;

  // A directory contributes one entry per regular file beneath it, sorted.
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace cgiqa
