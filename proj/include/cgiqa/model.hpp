#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cgiqa/backbone.hpp"
#include "cgiqa/ops.hpp"
#include "cgiqa/param.hpp"
#include "cgiqa/rng.hpp"
#include "cgiqa/tensor.hpp"

namespace cgiqa {

struct MffConfig {
  std::size_t pool_size = 7;
  // C'; 0 means "same as the last backbone stage".
  std::size_t fused_channels = 0;
};

struct McaConfig {
  std::size_t reduction_ratio = 4;
};

struct FusionHeadConfig {
  std::size_t align_dim = 64;
  std::size_t fc1 = 128;
  std::size_t fc2 = 32;
};

struct ModelConfig {
  BackboneConfig backbone;
  BackboneConfig aesthetic_backbone;
  MffConfig mff;
  McaConfig mca;
  FusionHeadConfig head;

  static ModelConfig desk();
  static ModelConfig paper();
};

// Channel plan derived from a ModelConfig.
struct ChannelPlan {
  std::size_t concat_channels = 0;   // C, sum of stage channels
  std::size_t mff_hidden = 0;        // floor(C / 4)
  std::size_t fused_channels = 0;    // C'
  std::size_t mca_hidden = 0;        // floor(C' / r)
  std::size_t aesthetic_channels = 0;  // C_A
  std::size_t head_concat = 0;       // 2 * align_dim
  std::size_t fc1 = 0;
  std::size_t fc2 = 0;
};

// Throws ConfigError when any derived width is zero.
ChannelPlan channel_plan(const ModelConfig& cfg);

// Multi-stage feature fusion: pool every stage to pool_size^2, concatenate,
// then 1x1 (C -> C/4), 3x3 (C/4 -> C/4), 1x1 (C/4 -> C').
class Mff {
 public:
  struct Cache {
    std::vector<Shape> stage_shapes;
    Tensor concat;
    Tensor reduced;
    Tensor mixed;
  };

  Mff(const MffConfig& cfg, std::vector<std::size_t> stage_channels,
      std::size_t fused_channels, ParamStore& store, const std::string& prefix, Rng& rng);

  Tensor forward(const StageFeatures& stages, const ParamStore& store,
                 Cache* cache = nullptr) const;
  std::vector<Tensor> backward(const Tensor& grad_fused, const Cache& cache,
                               ParamStore& store) const;

  std::size_t hidden_channels() const { return hidden_; }
  std::size_t output_channels() const { return out_; }
  ParamId reduce_weight() const { return reduce_w_; }

 private:
  std::size_t pool_;
  std::vector<std::size_t> stage_channels_;
  std::size_t hidden_;
  std::size_t out_;
  ParamId reduce_w_, reduce_b_, mix_w_, mix_b_, expand_w_, expand_b_;
};

// Multi-stage channel attention: avg/max squeeze, shared C'->C'/r->C' MLP,
// sigmoid gate over the summed descriptors, then gated global average.
class Mca {
 public:
  struct Cache {
    Tensor fused;
    Tensor avg;       // [N, C']
    Tensor max;       // [N, C']
    std::vector<std::size_t> argmax;
    Tensor hidden_avg_pre, hidden_max_pre;
    Tensor mlp_avg, mlp_max;  // MLP outputs per path
    Tensor gate;              // [N, C', 1, 1]
  };

  Mca(const McaConfig& cfg, std::size_t channels, ParamStore& store,
      const std::string& prefix, Rng& rng);

  // Returns F_D with shape [N, C'].
  Tensor forward(const Tensor& fused, const ParamStore& store, Cache* cache = nullptr) const;
  Tensor backward(const Tensor& grad_features, const Cache& cache, ParamStore& store) const;

  std::size_t hidden_channels() const { return hidden_; }
  std::vector<ParamId> params() const { return {fc1_w_, fc1_b_, fc2_w_, fc2_b_}; }

 private:
  Tensor mlp(const Tensor& x, const ParamStore& store, Tensor* hidden_pre) const;
  Tensor mlp_backward(const Tensor& x, const Tensor& hidden_pre, const Tensor& grad,
                      ParamStore& store) const;

  std::size_t channels_;
  std::size_t hidden_;
  ParamId fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// Frozen stream: F_A = global average of the last backbone stage.
class AestheticStream {
 public:
  AestheticStream(const BackboneConfig& cfg, ParamStore& store, const std::string& prefix,
                  Rng& rng);

  Tensor forward(const Tensor& images, const ParamStore& store) const;
  std::size_t channels() const { return backbone_.config().last_channels(); }
  const Backbone& backbone() const { return backbone_; }

 private:
  Backbone backbone_;
};

// Alignment MLPs per stream, concatenation, FC1 -> FC2 (rectified) and a final
// scalar projection.
class FusionHead {
 public:
  struct Cache {
    Tensor distortion, aesthetic;
    Tensor d_hidden_pre, a_hidden_pre;
    Tensor joined;
    Tensor fc1_pre, fc1_out, fc2_pre, fc2_out;
  };
  struct Grads {
    Tensor distortion;
    Tensor aesthetic;
  };

  FusionHead(const FusionHeadConfig& cfg, std::size_t distortion_dim, std::size_t aesthetic_dim,
             ParamStore& store, const std::string& prefix, Rng& rng);

  // Returns one score per batch row, shape [N].
  Tensor forward(const Tensor& distortion, const Tensor& aesthetic, const ParamStore& store,
                 Cache* cache = nullptr) const;
  Grads backward(const Tensor& grad_scores, const Cache& cache, ParamStore& store) const;

  ParamId output_bias() const { return out_b_; }

 private:
  struct Dense {
    ParamId w, b;
  };
  Dense dense(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
              Rng& rng);
  Tensor apply(const Dense& d, const Tensor& x, const ParamStore& store) const;
  Tensor apply_backward(const Dense& d, const Tensor& x, const Tensor& grad,
                        ParamStore& store) const;

  std::string prefix_;
  std::size_t align_;
  Dense d_in_, d_out_, a_in_, a_out_, fc1_, fc2_;
  ParamId out_w_, out_b_;
};

// Distortion stream (backbone -> MFF -> MCA) plus frozen aesthetic stream
// feeding the fusion head. Owns its parameter store.
class TwoStreamModel {
 public:
  static constexpr const char* kAestheticPrefix = "aesthetic.";

  TwoStreamModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ChannelPlan& plan() const { return plan_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  Tensor predict(const Tensor& images) const;
  // Forward + backward of the batch MSE; gradients accumulate into params().
  double loss_and_backward(const Tensor& images, const Tensor& targets);

  // Loads aesthetic backbone weights (checkpoint written by the aesthetic
  // pretraining, names "backbone.*") and freezes them.
  void load_aesthetic(const std::filesystem::path& checkpoint);

  const Backbone& distortion_backbone() const { return backbone_; }
  const Mff& mff() const { return mff_; }
  const Mca& mca() const { return mca_; }
  const AestheticStream& aesthetic() const { return aesthetic_; }
  const FusionHead& head() const { return head_; }

 private:
  ModelConfig cfg_;
  ChannelPlan plan_;
  ParamStore store_;
  Rng init_rng_;
  Backbone backbone_;
  Mff mff_;
  Mca mca_;
  AestheticStream aesthetic_;
  FusionHead head_;
};

// Backbone + global pooling + linear regressor, used to produce the frozen
// aesthetic weights from any labelled aesthetic-score data.
class AestheticRegressor {
 public:
  AestheticRegressor(const BackboneConfig& cfg, std::uint64_t seed);

  ParamStore& params() { return store_; }
  Tensor predict(const Tensor& images) const;
  double loss_and_backward(const Tensor& images, const Tensor& targets);
  // Saves only the backbone parameters ("backbone.*").
  void save_backbone(const std::filesystem::path& path) const;

 private:
  ParamStore store_;
  Rng init_rng_;
  Backbone backbone_;
  ParamId w_, b_;
};

}  // namespace cgiqa
