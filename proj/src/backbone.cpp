#include "cgiqa/backbone.hpp"

#include "cgiqa/error.hpp"

namespace cgiqa {

void BackboneConfig::validate() const {
  if (stage_channels.size() < 2) {
    throw ConfigError("backbone: at least two stages are required");
  }
  for (std::size_t c : stage_channels) {
    if (c == 0) throw ConfigError("backbone: stage channels must be positive");
  }
  if (input_size == 0 || input_size % reduction() != 0) {
    throw ConfigError("backbone: input_size " + std::to_string(input_size) +
                      " must be a positive multiple of " + std::to_string(reduction()));
  }
}

std::vector<Shape> stage_shapes(const BackboneConfig& cfg, std::size_t n, std::size_t h,
                                std::size_t w) {
  if (h == 0 || w == 0 || h % cfg.reduction() != 0 || w % cfg.reduction() != 0) {
    throw DimensionError("backbone: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not divisible by " + std::to_string(cfg.reduction()));
  }
  std::vector<Shape> shapes;
  std::size_t sh = h / 4, sw = w / 4;
  for (std::size_t i = 0; i < cfg.stages(); ++i) {
    if (i > 0) {
      sh /= 2;
      sw /= 2;
    }
    shapes.push_back({n, cfg.stage_channels[i], sh, sw});
  }
  return shapes;
}

Backbone::Backbone(BackboneConfig cfg, ParamStore& store, const std::string& prefix, Rng& rng)
    : cfg_(std::move(cfg)), prefix_(prefix) {
  cfg_.validate();
  auto add_conv = [&](const std::string& name, std::size_t in, std::size_t out,
                      std::size_t k, ops::Conv2dSpec spec, int emits) {
    const ParamId w = store.add(prefix_ + name + ".weight", he_uniform({out, in, k, k}, in * k * k, rng));
    const ParamId b = store.add(prefix_ + name + ".bias", Tensor({out}));
    layers_.push_back({w, b, spec, emits});
  };
  const auto& ch = cfg_.stage_channels;
  for (std::size_t s = 0; s < ch.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s);
    const bool no_blocks = cfg_.blocks_per_stage == 0;
    if (s == 0) {
      add_conv("stem", 3, ch[0], 4, {4, 0}, no_blocks ? 0 : -1);
    } else {
      add_conv(stage + ".down", ch[s - 1], ch[s], 2, {2, 0}, no_blocks ? static_cast<int>(s) : -1);
    }
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const bool last = b + 1 == cfg_.blocks_per_stage;
      add_conv(stage + ".block" + std::to_string(b), ch[s], ch[s], 3, {1, 1},
               last ? static_cast<int>(s) : -1);
    }
  }
}

StageFeatures Backbone::forward(const Tensor& images, const ParamStore& store,
                                Cache* cache) const {
  require_rank(images, 4, "backbone input");
  if (images.dim(1) != 3) throw DimensionError("backbone: expected 3 input channels");
  stage_shapes(cfg_, images.dim(0), images.dim(2), images.dim(3));  // validates size

  StageFeatures out;
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Tensor x = images;
  for (const ConvLayer& layer : layers_) {
    Tensor z = ops::conv2d(x, store.value(layer.weight), store.value(layer.bias), layer.spec);
    Tensor y = ops::relu(z);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activations.push_back(std::move(z));
    }
    if (layer.emits_stage >= 0) out.maps.push_back(y);
    x = std::move(y);
  }
  return out;
}

void Backbone::backward(const std::vector<Tensor>& stage_grads, const Cache& cache,
                        ParamStore& store) const {
  if (stage_grads.size() != cfg_.stages()) {
    throw DimensionError("backbone backward: expected one gradient per stage");
  }
  if (cache.inputs.size() != layers_.size()) {
    throw DimensionError("backbone backward: cache does not match this backbone");
  }
  Tensor grad;  // dLoss / (output of the current layer)
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const ConvLayer& layer = layers_[li];
    const Tensor& z = cache.pre_activations[li];
    if (grad.empty()) grad = Tensor(z.shape());
    if (layer.emits_stage >= 0) {
      const Tensor& sg = stage_grads[static_cast<std::size_t>(layer.emits_stage)];
      if (!sg.empty()) grad += sg;
    }
    const Tensor dz = ops::relu_backward(z, grad);
    auto g = ops::conv2d_backward(cache.inputs[li], store.value(layer.weight), dz, layer.spec);
    store.accumulate(layer.weight, g.weight);
    store.accumulate(layer.bias, g.bias);
    grad = std::move(g.input);
  }
}

}  // namespace cgiqa
