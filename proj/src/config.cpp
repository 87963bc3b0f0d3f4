#include "cgiqa/config.hpp"

#include <fstream>

#include "cgiqa/error.hpp"

namespace cgiqa {

using nlohmann::json;

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

json object_at(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return json::object();
  if (!it->is_object()) throw ConfigError(where + "." + key + ": expected an object");
  return *it;
}

BackboneConfig backbone_from_json(const json& j, BackboneConfig base, const std::string& where) {
  check_keys(j, {"stage_channels", "blocks_per_stage", "input_size"}, where);
  read_field(j, "stage_channels", base.stage_channels, where);
  read_field(j, "blocks_per_stage", base.blocks_per_stage, where);
  read_field(j, "input_size", base.input_size, where);
  return base;
}

json backbone_to_json(const BackboneConfig& b) {
  return {{"stage_channels", b.stage_channels},
          {"blocks_per_stage", b.blocks_per_stage},
          {"input_size", b.input_size}};
}

}  // namespace

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config " + path.string() + " must be a JSON object");
  return doc;
}

json config_section(const json& doc, const std::string& name) {
  return object_at(doc, name.c_str(), "config");
}

ModelConfig model_config_from_json(const json& j) {
  const std::string where = "model";
  check_keys(j, {"preset", "backbone", "aesthetic_backbone", "mff", "mca", "head"}, where);
  std::string preset = "desk";
  read_field(j, "preset", preset, where);
  ModelConfig cfg;
  if (preset == "desk") {
    cfg = ModelConfig::desk();
  } else if (preset == "paper") {
    cfg = ModelConfig::paper();
  } else {
    throw ConfigError("model.preset must be 'desk' or 'paper'");
  }
  cfg.backbone = backbone_from_json(object_at(j, "backbone", where), cfg.backbone,
                                    where + ".backbone");
  cfg.aesthetic_backbone = backbone_from_json(object_at(j, "aesthetic_backbone", where),
                                              cfg.aesthetic_backbone, where + ".aesthetic_backbone");
  const json mff = object_at(j, "mff", where);
  check_keys(mff, {"pool_size", "fused_channels"}, where + ".mff");
  read_field(mff, "pool_size", cfg.mff.pool_size, where + ".mff");
  read_field(mff, "fused_channels", cfg.mff.fused_channels, where + ".mff");
  const json mca = object_at(j, "mca", where);
  check_keys(mca, {"reduction_ratio"}, where + ".mca");
  read_field(mca, "reduction_ratio", cfg.mca.reduction_ratio, where + ".mca");
  const json head = object_at(j, "head", where);
  check_keys(head, {"align_dim", "fc1", "fc2"}, where + ".head");
  read_field(head, "align_dim", cfg.head.align_dim, where + ".head");
  read_field(head, "fc1", cfg.head.fc1, where + ".head");
  read_field(head, "fc2", cfg.head.fc2, where + ".head");
  channel_plan(cfg);
  return cfg;
}

json to_json(const ModelConfig& cfg) {
  return {{"backbone", backbone_to_json(cfg.backbone)},
          {"aesthetic_backbone", backbone_to_json(cfg.aesthetic_backbone)},
          {"mff", {{"pool_size", cfg.mff.pool_size}, {"fused_channels", cfg.mff.fused_channels}}},
          {"mca", {{"reduction_ratio", cfg.mca.reduction_ratio}}},
          {"head", {{"align_dim", cfg.head.align_dim}, {"fc1", cfg.head.fc1}, {"fc2", cfg.head.fc2}}}};
}

TrainProtocol train_protocol_from_json(const json& j, TrainProtocol p) {
  const std::string where = "train";
  check_keys(j,
             {"train_fraction", "repeats", "epochs", "batch_size", "resize", "crop",
              "learning_rate", "beta1", "beta2", "epsilon", "seed"},
             where);
  read_field(j, "train_fraction", p.train_fraction, where);
  read_field(j, "repeats", p.repeats, where);
  read_field(j, "epochs", p.epochs, where);
  read_field(j, "batch_size", p.batch_size, where);
  read_field(j, "resize", p.resize, where);
  read_field(j, "crop", p.crop, where);
  read_field(j, "learning_rate", p.adam.learning_rate, where);
  read_field(j, "beta1", p.adam.beta1, where);
  read_field(j, "beta2", p.adam.beta2, where);
  read_field(j, "epsilon", p.adam.epsilon, where);
  read_field(j, "seed", p.seed, where);
  p.validate();
  return p;
}

json to_json(const TrainProtocol& p) {
  return {{"train_fraction", p.train_fraction}, {"repeats", p.repeats},
          {"epochs", p.epochs},                 {"batch_size", p.batch_size},
          {"resize", p.resize},                 {"crop", p.crop},
          {"learning_rate", p.adam.learning_rate}, {"beta1", p.adam.beta1},
          {"beta2", p.adam.beta2},              {"epsilon", p.adam.epsilon},
          {"seed", p.seed}};
}

}  // namespace cgiqa
