#pragma once

#include <string>
#include <vector>

#include "cgiqa/ops.hpp"
#include "cgiqa/param.hpp"
#include "cgiqa/rng.hpp"
#include "cgiqa/tensor.hpp"

namespace cgiqa {

struct BackboneConfig {
  std::vector<std::size_t> stage_channels{8, 16, 32, 64};
  std::size_t blocks_per_stage = 1;
  std::size_t input_size = 224;

  static BackboneConfig desk() { return {}; }
  static BackboneConfig paper() { return {{96, 192, 384, 768}, 1, 224}; }

  std::size_t stages() const { return stage_channels.size(); }
  std::size_t last_channels() const { return stage_channels.back(); }
  // Total downsampling factor between the input and the last stage.
  std::size_t reduction() const { return std::size_t{1} << (stages() + 1); }
  void validate() const;
};

// One feature map per stage, highest resolution first.
struct StageFeatures {
  std::vector<Tensor> maps;
};

// Shapes the backbone emits for an [n,3,h,w] batch.
std::vector<Shape> stage_shapes(const BackboneConfig& cfg, std::size_t n, std::size_t h,
                                std::size_t w);

// Plain convolutional stage stack: a stride-4 patchify stem, then per stage an
// optional stride-2 downsampling conv and `blocks_per_stage` 3x3 convs. Every
// conv is followed by a rectifier.
class Backbone {
 public:
  struct Cache {
    std::vector<Tensor> inputs;
    std::vector<Tensor> pre_activations;
  };

  Backbone(BackboneConfig cfg, ParamStore& store, const std::string& prefix, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  StageFeatures forward(const Tensor& images, const ParamStore& store,
                        Cache* cache = nullptr) const;
  // `stage_grads[i]` is dLoss/dmaps[i]; an empty tensor means zero. Parameter
  // gradients are accumulated into `store`.
  void backward(const std::vector<Tensor>& stage_grads, const Cache& cache,
                ParamStore& store) const;

 private:
  struct ConvLayer {
    ParamId weight;
    ParamId bias;
    ops::Conv2dSpec spec;
    // Stage whose output this layer produces, or -1 for an inner layer.
    int emits_stage;
  };

  BackboneConfig cfg_;
  std::string prefix_;
  std::vector<ConvLayer> layers_;
};

}  // namespace cgiqa
