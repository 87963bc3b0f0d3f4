#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cgiqa/model.hpp"
#include "cgiqa/train.hpp"

namespace cgiqa {

// Run configuration document: one JSON object whose top-level keys are
// per-subcommand sections ("train", "sample", ...) plus shared "seed",
// "threads" and "model". Unknown keys inside a known section are rejected.

// Throws IoError when the file cannot be read, ConfigError when it is not a
// JSON object.
nlohmann::json load_config(const std::filesystem::path& path);

// Section `name` of `doc`, or an empty object. Throws ConfigError when present
// but not an object.
nlohmann::json config_section(const nlohmann::json& doc, const std::string& name);

// {"preset": "desk"|"paper", "backbone": {...}, "aesthetic_backbone": {...},
//  "mff": {...}, "mca": {...}, "head": {...}}; fields override the preset.
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);

// Fields of TrainProtocol (adam fields flattened: learning_rate, beta1, ...)
// override `base`.
TrainProtocol train_protocol_from_json(const nlohmann::json& j, TrainProtocol base = {});
nlohmann::json to_json(const TrainProtocol& p);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& where);

}  // namespace cgiqa
