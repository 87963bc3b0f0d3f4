#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cgiqa/image.hpp"
#include "cgiqa/model.hpp"
#include "cgiqa/param.hpp"
#include "cgiqa/tensor.hpp"

namespace cgiqa {

struct TrainProtocol {
  double train_fraction = 0.8;
  std::size_t repeats = 10;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  std::size_t resize = 256;
  std::size_t crop = 224;
  AdamConfig adam;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

struct DatasetItem {
  std::string id;
  std::filesystem::path image;
  double mos = 0.0;
  std::string content_id;  // empty: the item is its own content group
};

struct Dataset {
  std::vector<DatasetItem> items;

  std::vector<double> mos() const;
  // Content groups for split construction; empty when no item names one.
  std::vector<std::string> groups() const;
};

// CSV with columns image_path, mos and optional stimulus_id, content_id; or
// JSON lines with the same keys. Relative image paths resolve against the
// manifest's directory. MOS must lie on [0, 5].
Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

// [3, size, size] tensors, one per image.
using PreparedImages = std::vector<Tensor>;

PreparedImages prepare_images(const std::vector<Image>& images, std::size_t resize);
PreparedImages load_and_prepare(const Dataset& dataset, std::size_t resize, std::size_t threads);

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Mini-batch Adam on the listed items with random crops. Deterministic for a
// fixed protocol seed.
TrainResult train_model(TwoStreamModel& model, const PreparedImages& images,
                        const std::vector<double>& targets, const std::vector<std::size_t>& items,
                        const TrainProtocol& protocol, const EpochCallback& on_epoch = {});
TrainResult train_aesthetic(AestheticRegressor& model, const PreparedImages& images,
                            const std::vector<double>& targets,
                            const std::vector<std::size_t>& items, const TrainProtocol& protocol,
                            const EpochCallback& on_epoch = {});

// Center-crop predictions in item order.
std::vector<double> predict_items(const TwoStreamModel& model, const PreparedImages& images,
                                  const std::vector<std::size_t>& items, std::size_t crop,
                                  std::size_t batch_size = 32);

}  // namespace cgiqa
