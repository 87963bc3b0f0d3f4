#include <gtest/gtest.h>

#include <fstream>

#include "cgiqa/config.hpp"
#include "cgiqa/error.hpp"
#include "cgiqa/run_manifest.hpp"
#include "test_util.hpp"

namespace cgiqa {
namespace {

using json = nlohmann::json;

TEST(ModelConfigJson, PresetsAndOverrides) {
  const ModelConfig desk = model_config_from_json(json::object());
  EXPECT_EQ(desk.backbone.stage_channels, ModelConfig::desk().backbone.stage_channels);
  const ModelConfig paper = model_config_from_json({{"preset", "paper"}});
  EXPECT_EQ(paper.backbone.stage_channels, (std::vector<std::size_t>{96, 192, 384, 768}));
  EXPECT_EQ(paper.head.fc1, 1024u);
  const ModelConfig custom = model_config_from_json(
      {{"backbone", {{"input_size", 32}, {"stage_channels", {4, 8}}}}, {"head", {{"fc2", 7}}}});
  EXPECT_EQ(custom.backbone.input_size, 32u);
  EXPECT_EQ(custom.backbone.stage_channels, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(custom.head.fc2, 7u);
  EXPECT_EQ(custom.head.fc1, ModelConfig::desk().head.fc1);
}

TEST(ModelConfigJson, RoundTrip) {
  const ModelConfig paper = ModelConfig::paper();
  const ModelConfig back = model_config_from_json(to_json(paper));
  EXPECT_EQ(to_json(back), to_json(paper));
}

TEST(ModelConfigJson, Rejections) {
  EXPECT_THROW(model_config_from_json({{"preset", "huge"}}), ConfigError);
  EXPECT_THROW(model_config_from_json({{"backbone", {{"chanels", {1}}}}}), ConfigError);
  EXPECT_THROW(model_config_from_json({{"head", {{"fc1", "many"}}}}), ConfigError);
  EXPECT_THROW(model_config_from_json({{"mca", 3}}), ConfigError);
  EXPECT_THROW(model_config_from_json({{"backbone", {{"stage_channels", json::array()}}}}),
               ConfigError);
}

TEST(TrainProtocolJson, OverridesAndValidation) {
  const TrainProtocol p = train_protocol_from_json({{"epochs", 3}, {"learning_rate", 0.01}});
  EXPECT_EQ(p.epochs, 3u);
  EXPECT_EQ(p.adam.learning_rate, 0.01);
  EXPECT_EQ(p.batch_size, TrainProtocol{}.batch_size);
  EXPECT_EQ(train_protocol_from_json(to_json(p)).adam.learning_rate, 0.01);
  EXPECT_THROW(train_protocol_from_json({{"epoch", 3}}), ConfigError);
  EXPECT_THROW(train_protocol_from_json({{"crop", 300}}), ConfigError);
  EXPECT_THROW(train_protocol_from_json({{"learning_rate", -1}}), ConfigError);
}

TEST(ConfigFile, LoadErrors) {
  testing::TempDir dir("config");
  EXPECT_THROW(load_config(dir / "absent.json"), IoError);
  std::ofstream(dir / "array.json") << "[1, 2]";
  EXPECT_THROW(load_config(dir / "array.json"), ConfigError);
  std::ofstream(dir / "ok.json") << R"({"train": {"epochs": 2}, "seed": 1})";
  const json doc = load_config(dir / "ok.json");
  EXPECT_EQ(config_section(doc, "train")["epochs"], 2);
  EXPECT_TRUE(config_section(doc, "mos").empty());
  EXPECT_THROW(config_section(doc, "seed"), ConfigError);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  testing::TempDir dir("sha");
  std::string big(200000, 'x');
  std::ofstream(dir / "big.bin", std::ios::binary) << big;
  EXPECT_EQ(sha256_file(dir / "big.bin"), sha256_hex(big));
  EXPECT_THROW(sha256_file(dir / "none"), IoError);
}

TEST(RunManifestJson, DirectoryOutputsExpandSorted) {
  testing::TempDir dir("manifest");
  std::filesystem::create_directories(dir / "out" / "sub");
  std::ofstream(dir / "out" / "b.txt") << "b";
  std::ofstream(dir / "out" / "a.txt") << "a";
  std::ofstream(dir / "out" / "sub" / "c.txt") << "c";
  RunManifest m;
  m.command = "x";
  m.add_output(dir / "out");
  ASSERT_EQ(m.outputs.size(), 3u);
  EXPECT_EQ(m.outputs[0].path, (dir / "out" / "a.txt").string());
  EXPECT_EQ(m.outputs[0].sha256, sha256_hex("a"));
  EXPECT_EQ(m.outputs[2].path, (dir / "out" / "sub" / "c.txt").string());
  m.write(dir / "m.json");
  std::ifstream in(dir / "m.json");
  const json j = json::parse(in);
  EXPECT_EQ(j["outputs"].size(), 3u);
  EXPECT_EQ(j["command"], "x");
}

}  // namespace
}  // namespace cgiqa
