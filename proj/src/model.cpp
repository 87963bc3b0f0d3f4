#include "cgiqa/model.hpp"

#include "cgiqa/checkpoint.hpp"
#include "cgiqa/error.hpp"

namespace cgiqa {

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::desk();
  cfg.aesthetic_backbone = BackboneConfig::desk();
  cfg.mca.reduction_ratio = 4;
  cfg.head = {64, 128, 32};
  return cfg;
}

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::paper();
  cfg.aesthetic_backbone = BackboneConfig::paper();
  cfg.mca.reduction_ratio = 16;
  cfg.head = {768, 1024, 128};
  return cfg;
}

ChannelPlan channel_plan(const ModelConfig& cfg) {
  cfg.backbone.validate();
  cfg.aesthetic_backbone.validate();
  ChannelPlan plan;
  for (std::size_t c : cfg.backbone.stage_channels) plan.concat_channels += c;
  plan.mff_hidden = plan.concat_channels / 4;
  if (plan.mff_hidden == 0) {
    throw ConfigError("mff: floor(C/4) is zero for C = " + std::to_string(plan.concat_channels));
  }
  if (cfg.mff.pool_size == 0) throw ConfigError("mff: pool_size must be positive");
  plan.fused_channels =
      cfg.mff.fused_channels ? cfg.mff.fused_channels : cfg.backbone.last_channels();
  if (cfg.mca.reduction_ratio == 0) throw ConfigError("mca: reduction ratio must be positive");
  plan.mca_hidden = plan.fused_channels / cfg.mca.reduction_ratio;
  if (plan.mca_hidden == 0) {
    throw ConfigError("mca: floor(C'/r) is zero for C' = " +
                      std::to_string(plan.fused_channels) +
                      ", r = " + std::to_string(cfg.mca.reduction_ratio));
  }
  plan.aesthetic_channels = cfg.aesthetic_backbone.last_channels();
  if (cfg.head.align_dim == 0 || cfg.head.fc1 == 0 || cfg.head.fc2 == 0) {
    throw ConfigError("fusion head: layer widths must be positive");
  }
  plan.head_concat = 2 * cfg.head.align_dim;
  plan.fc1 = cfg.head.fc1;
  plan.fc2 = cfg.head.fc2;
  return plan;
}

// ---------------------------------------------------------------------------
// MFF

Mff::Mff(const MffConfig& cfg, std::vector<std::size_t> stage_channels,
         std::size_t fused_channels, ParamStore& store, const std::string& prefix, Rng& rng)
    : pool_(cfg.pool_size), stage_channels_(std::move(stage_channels)), out_(fused_channels) {
  std::size_t c = 0;
  for (std::size_t s : stage_channels_) c += s;
  hidden_ = c / 4;
  if (hidden_ == 0 || out_ == 0 || pool_ == 0) {
    throw ConfigError("mff: degenerate channel plan (C=" + std::to_string(c) + ")");
  }
  reduce_w_ = store.add(prefix + "reduce.weight", he_uniform({hidden_, c, 1, 1}, c, rng));
  reduce_b_ = store.add(prefix + "reduce.bias", Tensor({hidden_}));
  mix_w_ = store.add(prefix + "mix.weight", he_uniform({hidden_, hidden_, 3, 3}, hidden_ * 9, rng));
  mix_b_ = store.add(prefix + "mix.bias", Tensor({hidden_}));
  expand_w_ = store.add(prefix + "expand.weight", he_uniform({out_, hidden_, 1, 1}, hidden_, rng));
  expand_b_ = store.add(prefix + "expand.bias", Tensor({out_}));
}

Tensor Mff::forward(const StageFeatures& stages, const ParamStore& store, Cache* cache) const {
  if (stages.maps.size() != stage_channels_.size()) {
    throw DimensionError("mff: expected " + std::to_string(stage_channels_.size()) +
                         " stage maps, got " + std::to_string(stages.maps.size()));
  }
  std::vector<Tensor> pooled;
  pooled.reserve(stages.maps.size());
  for (std::size_t i = 0; i < stages.maps.size(); ++i) {
    if (stages.maps[i].rank() != 4 || stages.maps[i].dim(1) != stage_channels_[i]) {
      throw DimensionError("mff: stage " + std::to_string(i) + " has shape " +
                           shape_string(stages.maps[i].shape()));
    }
    pooled.push_back(ops::adaptive_avg_pool(stages.maps[i], pool_, pool_));
  }
  Tensor concat = ops::concat_channels(pooled);
  Tensor reduced = ops::conv2d(concat, store.value(reduce_w_), store.value(reduce_b_));
  Tensor mixed = ops::conv2d(reduced, store.value(mix_w_), store.value(mix_b_), {1, 1});
  Tensor fused = ops::conv2d(mixed, store.value(expand_w_), store.value(expand_b_));
  if (cache) {
    cache->stage_shapes.clear();
    for (const Tensor& m : stages.maps) cache->stage_shapes.push_back(m.shape());
    cache->concat = std::move(concat);
    cache->reduced = std::move(reduced);
    cache->mixed = std::move(mixed);
  }
  return fused;
}

std::vector<Tensor> Mff::backward(const Tensor& grad_fused, const Cache& cache,
                                  ParamStore& store) const {
  auto g3 = ops::conv2d_backward(cache.mixed, store.value(expand_w_), grad_fused);
  store.accumulate(expand_w_, g3.weight);
  store.accumulate(expand_b_, g3.bias);
  auto g2 = ops::conv2d_backward(cache.reduced, store.value(mix_w_), g3.input, {1, 1});
  store.accumulate(mix_w_, g2.weight);
  store.accumulate(mix_b_, g2.bias);
  auto g1 = ops::conv2d_backward(cache.concat, store.value(reduce_w_), g2.input);
  store.accumulate(reduce_w_, g1.weight);
  store.accumulate(reduce_b_, g1.bias);

  auto parts = ops::split_channels(g1.input, stage_channels_);
  std::vector<Tensor> grads;
  grads.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    grads.push_back(ops::adaptive_avg_pool_backward(cache.stage_shapes[i], parts[i]));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// MCA

Mca::Mca(const McaConfig& cfg, std::size_t channels, ParamStore& store,
         const std::string& prefix, Rng& rng)
    : channels_(channels) {
  if (cfg.reduction_ratio == 0) throw ConfigError("mca: reduction ratio must be positive");
  hidden_ = channels / cfg.reduction_ratio;
  if (hidden_ == 0) throw ConfigError("mca: hidden width floor(C'/r) is zero");
  fc1_w_ = store.add(prefix + "fc1.weight", he_uniform({channels_, hidden_}, channels_, rng));
  fc1_b_ = store.add(prefix + "fc1.bias", Tensor({hidden_}));
  fc2_w_ = store.add(prefix + "fc2.weight", he_uniform({hidden_, channels_}, hidden_, rng));
  fc2_b_ = store.add(prefix + "fc2.bias", Tensor({channels_}));
}

Tensor Mca::mlp(const Tensor& x, const ParamStore& store, Tensor* hidden_pre) const {
  Tensor h = ops::linear(x, store.value(fc1_w_), store.value(fc1_b_));
  Tensor out = ops::linear(ops::relu(h), store.value(fc2_w_), store.value(fc2_b_));
  if (hidden_pre) *hidden_pre = std::move(h);
  return out;
}

Tensor Mca::mlp_backward(const Tensor& x, const Tensor& hidden_pre, const Tensor& grad,
                         ParamStore& store) const {
  auto g2 = ops::linear_backward(ops::relu(hidden_pre), store.value(fc2_w_), grad);
  store.accumulate(fc2_w_, g2.weight);
  store.accumulate(fc2_b_, g2.bias);
  auto g1 = ops::linear_backward(x, store.value(fc1_w_), ops::relu_backward(hidden_pre, g2.input));
  store.accumulate(fc1_w_, g1.weight);
  store.accumulate(fc1_b_, g1.bias);
  return g1.input;
}

Tensor Mca::forward(const Tensor& fused, const ParamStore& store, Cache* cache) const {
  require_rank(fused, 4, "mca input");
  if (fused.dim(1) != channels_) {
    throw DimensionError("mca: expected " + std::to_string(channels_) + " channels, got " +
                         shape_string(fused.shape()));
  }
  const std::size_t n = fused.dim(0);
  Tensor avg = ops::global_avg_pool(fused).reshaped({n, channels_});
  auto max_res = ops::global_max_pool(fused);
  Tensor max = max_res.output.reshaped({n, channels_});

  Tensor h_avg, h_max;
  Tensor m_avg = mlp(avg, store, &h_avg);
  Tensor m_max = mlp(max, store, &h_max);
  Tensor gate = ops::sigmoid(ops::add(m_avg, m_max)).reshaped({n, channels_, 1, 1});
  Tensor features =
      ops::global_avg_pool(ops::mul_broadcast(gate, fused)).reshaped({n, channels_});
  if (cache) {
    cache->fused = fused;
    cache->avg = std::move(avg);
    cache->max = std::move(max);
    cache->argmax = std::move(max_res.argmax);
    cache->hidden_avg_pre = std::move(h_avg);
    cache->hidden_max_pre = std::move(h_max);
    cache->mlp_avg = std::move(m_avg);
    cache->mlp_max = std::move(m_max);
    cache->gate = std::move(gate);
  }
  return features;
}

Tensor Mca::backward(const Tensor& grad_features, const Cache& cache, ParamStore& store) const {
  const Shape& fs = cache.fused.shape();
  const std::size_t n = fs[0];
  if (grad_features.size() != n * channels_) {
    throw DimensionError("mca backward: gradient shape " + shape_string(grad_features.shape()));
  }
  const Tensor g_gated =
      ops::global_avg_pool_backward(fs, grad_features.reshaped({n, channels_, 1, 1}));
  auto gm = ops::mul_broadcast_backward(cache.gate, cache.fused, g_gated);
  Tensor d_fused = std::move(gm.b);

  const Tensor d_logits =
      ops::sigmoid_backward(cache.gate, gm.a).reshaped({n, channels_});
  const Tensor d_avg = mlp_backward(cache.avg, cache.hidden_avg_pre, d_logits, store);
  const Tensor d_max = mlp_backward(cache.max, cache.hidden_max_pre, d_logits, store);

  d_fused += ops::global_avg_pool_backward(fs, d_avg.reshaped({n, channels_, 1, 1}));
  d_fused += ops::global_max_pool_backward(fs, cache.argmax, d_max);
  return d_fused;
}

// ---------------------------------------------------------------------------
// Aesthetic stream

AestheticStream::AestheticStream(const BackboneConfig& cfg, ParamStore& store,
                                 const std::string& prefix, Rng& rng)
    : backbone_(cfg, store, prefix, rng) {}

Tensor AestheticStream::forward(const Tensor& images, const ParamStore& store) const {
  const StageFeatures stages = backbone_.forward(images, store);
  const Tensor& last = stages.maps.back();
  return ops::global_avg_pool(last).reshaped({last.dim(0), last.dim(1)});
}

// ---------------------------------------------------------------------------
// Fusion head

FusionHead::Dense FusionHead::dense(ParamStore& store, const std::string& name, std::size_t in,
                                    std::size_t out, Rng& rng) {
  return {store.add(prefix_ + name + ".weight", he_uniform({in, out}, in, rng)),
          store.add(prefix_ + name + ".bias", Tensor({out}))};
}

Tensor FusionHead::apply(const Dense& d, const Tensor& x, const ParamStore& store) const {
  return ops::linear(x, store.value(d.w), store.value(d.b));
}

Tensor FusionHead::apply_backward(const Dense& d, const Tensor& x, const Tensor& grad,
                                  ParamStore& store) const {
  auto g = ops::linear_backward(x, store.value(d.w), grad);
  store.accumulate(d.w, g.weight);
  store.accumulate(d.b, g.bias);
  return g.input;
}

FusionHead::FusionHead(const FusionHeadConfig& cfg, std::size_t distortion_dim,
                       std::size_t aesthetic_dim, ParamStore& store, const std::string& prefix,
                       Rng& rng)
    : prefix_(prefix), align_(cfg.align_dim) {
  if (cfg.align_dim == 0 || cfg.fc1 == 0 || cfg.fc2 == 0) {
    throw ConfigError("fusion head: layer widths must be positive");
  }
  d_in_ = dense(store, "align_distortion.fc1", distortion_dim, align_, rng);
  d_out_ = dense(store, "align_distortion.fc2", align_, align_, rng);
  a_in_ = dense(store, "align_aesthetic.fc1", aesthetic_dim, align_, rng);
  a_out_ = dense(store, "align_aesthetic.fc2", align_, align_, rng);
  fc1_ = dense(store, "fc1", 2 * align_, cfg.fc1, rng);
  fc2_ = dense(store, "fc2", cfg.fc1, cfg.fc2, rng);
  const Dense out = dense(store, "out", cfg.fc2, 1, rng);
  out_w_ = out.w;
  out_b_ = out.b;
}

Tensor FusionHead::forward(const Tensor& distortion, const Tensor& aesthetic,
                           const ParamStore& store, Cache* cache) const {
  require_rank(distortion, 2, "fusion head distortion input");
  require_rank(aesthetic, 2, "fusion head aesthetic input");
  const std::size_t n = distortion.dim(0);
  if (aesthetic.dim(0) != n) throw DimensionError("fusion head: batch sizes differ");

  Tensor dh = apply(d_in_, distortion, store);
  Tensor ah = apply(a_in_, aesthetic, store);
  const Tensor da = apply(d_out_, ops::relu(dh), store);
  const Tensor aa = apply(a_out_, ops::relu(ah), store);
  const std::vector<Tensor> parts{da.reshaped({n, align_, 1, 1}), aa.reshaped({n, align_, 1, 1})};
  Tensor joined = ops::concat_channels(parts).reshaped({n, 2 * align_});
  Tensor z1 = apply(fc1_, joined, store);
  Tensor h1 = ops::relu(z1);
  Tensor z2 = apply(fc2_, h1, store);
  Tensor h2 = ops::relu(z2);
  Tensor scores = ops::linear(h2, store.value(out_w_), store.value(out_b_)).reshaped({n});
  if (cache) {
    cache->distortion = distortion;
    cache->aesthetic = aesthetic;
    cache->d_hidden_pre = std::move(dh);
    cache->a_hidden_pre = std::move(ah);
    cache->joined = std::move(joined);
    cache->fc1_pre = std::move(z1);
    cache->fc1_out = std::move(h1);
    cache->fc2_pre = std::move(z2);
    cache->fc2_out = std::move(h2);
  }
  return scores;
}

FusionHead::Grads FusionHead::backward(const Tensor& grad_scores, const Cache& cache,
                                       ParamStore& store) const {
  const std::size_t n = cache.distortion.dim(0);
  const Tensor g_out = grad_scores.reshaped({n, 1});
  const Tensor g_h2 = apply_backward({out_w_, out_b_}, cache.fc2_out, g_out, store);
  const Tensor g_h1 =
      apply_backward(fc2_, cache.fc1_out, ops::relu_backward(cache.fc2_pre, g_h2), store);
  const Tensor g_joined =
      apply_backward(fc1_, cache.joined, ops::relu_backward(cache.fc1_pre, g_h1), store);
  const std::vector<std::size_t> widths{align_, align_};
  const auto parts = ops::split_channels(g_joined.reshaped({n, 2 * align_, 1, 1}), widths);

  Grads grads;
  const Tensor g_da = parts[0].reshaped({n, align_});
  const Tensor g_dh = apply_backward(d_out_, ops::relu(cache.d_hidden_pre), g_da, store);
  grads.distortion =
      apply_backward(d_in_, cache.distortion, ops::relu_backward(cache.d_hidden_pre, g_dh), store);
  const Tensor g_aa = parts[1].reshaped({n, align_});
  const Tensor g_ah = apply_backward(a_out_, ops::relu(cache.a_hidden_pre), g_aa, store);
  grads.aesthetic =
      apply_backward(a_in_, cache.aesthetic, ops::relu_backward(cache.a_hidden_pre, g_ah), store);
  return grads;
}

// ---------------------------------------------------------------------------
// Full model

TwoStreamModel::TwoStreamModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      plan_(channel_plan(cfg)),
      init_rng_(seed),
      backbone_(cfg.backbone, store_, "distortion.backbone.", init_rng_),
      mff_(cfg.mff, cfg.backbone.stage_channels, plan_.fused_channels, store_, "distortion.mff.",
           init_rng_),
      mca_(cfg.mca, plan_.fused_channels, store_, "distortion.mca.", init_rng_),
      aesthetic_(cfg.aesthetic_backbone, store_, std::string(kAestheticPrefix) + "backbone.",
                 init_rng_),
      head_(cfg.head, plan_.fused_channels, plan_.aesthetic_channels, store_, "head.", init_rng_) {
  // The aesthetic backbone never trains.
  store_.set_frozen(std::string(kAestheticPrefix) + "backbone.", true);
  if (mff_.hidden_channels() != plan_.mff_hidden || mca_.hidden_channels() != plan_.mca_hidden) {
    throw ConfigError("model: channel bookkeeping mismatch");
  }
}

Tensor TwoStreamModel::predict(const Tensor& images) const {
  const StageFeatures stages = backbone_.forward(images, store_);
  const Tensor fused = mff_.forward(stages, store_);
  const Tensor fd = mca_.forward(fused, store_);
  const Tensor fa = aesthetic_.forward(images, store_);
  return head_.forward(fd, fa, store_);
}

double TwoStreamModel::loss_and_backward(const Tensor& images, const Tensor& targets) {
  Backbone::Cache bc;
  Mff::Cache mc;
  Mca::Cache ac;
  FusionHead::Cache hc;
  const StageFeatures stages = backbone_.forward(images, store_, &bc);
  const Tensor fused = mff_.forward(stages, store_, &mc);
  const Tensor fd = mca_.forward(fused, store_, &ac);
  const Tensor fa = aesthetic_.forward(images, store_);
  const Tensor scores = head_.forward(fd, fa, store_, &hc);
  const double loss = ops::mse_loss(scores, targets);

  const Tensor g_scores = ops::mse_loss_backward(scores, targets);
  const auto hg = head_.backward(g_scores, hc, store_);
  const Tensor g_fused = mca_.backward(hg.distortion, ac, store_);
  const auto g_stages = mff_.backward(g_fused, mc, store_);
  backbone_.backward(g_stages, bc, store_);
  return loss;
}

void TwoStreamModel::load_aesthetic(const std::filesystem::path& checkpoint) {
  const std::string prefix = std::string(kAestheticPrefix) + "backbone.";
  load_params(checkpoint, store_, prefix, "backbone.");
  store_.set_frozen(prefix, true);
}

// ---------------------------------------------------------------------------
// Aesthetic pretraining regressor

AestheticRegressor::AestheticRegressor(const BackboneConfig& cfg, std::uint64_t seed)
    : init_rng_(seed), backbone_(cfg, store_, "backbone.", init_rng_) {
  const std::size_t c = cfg.last_channels();
  w_ = store_.add("regressor.weight", he_uniform({c, 1}, c, init_rng_));
  b_ = store_.add("regressor.bias", Tensor({1}));
}

Tensor AestheticRegressor::predict(const Tensor& images) const {
  const StageFeatures stages = backbone_.forward(images, store_);
  const Tensor& last = stages.maps.back();
  const Tensor pooled = ops::global_avg_pool(last).reshaped({last.dim(0), last.dim(1)});
  return ops::linear(pooled, store_.value(w_), store_.value(b_)).reshaped({last.dim(0)});
}

double AestheticRegressor::loss_and_backward(const Tensor& images, const Tensor& targets) {
  Backbone::Cache cache;
  const StageFeatures stages = backbone_.forward(images, store_, &cache);
  const Tensor& last = stages.maps.back();
  const std::size_t n = last.dim(0), c = last.dim(1);
  const Tensor pooled = ops::global_avg_pool(last).reshaped({n, c});
  const Tensor scores = ops::linear(pooled, store_.value(w_), store_.value(b_)).reshaped({n});
  const double loss = ops::mse_loss(scores, targets);
  auto g = ops::linear_backward(pooled, store_.value(w_),
                                ops::mse_loss_backward(scores, targets).reshaped({n, 1}));
  store_.accumulate(w_, g.weight);
  store_.accumulate(b_, g.bias);
  std::vector<Tensor> stage_grads(stages.maps.size());
  stage_grads.back() = ops::global_avg_pool_backward(last.shape(), g.input.reshaped({n, c, 1, 1}));
  backbone_.backward(stage_grads, cache, store_);
  return loss;
}

void AestheticRegressor::save_backbone(const std::filesystem::path& path) const {
  std::vector<NamedTensor> tensors;
  for (ParamId id = 0; id < store_.size(); ++id) {
    if (store_.name(id).rfind("backbone.", 0) == 0) {
      tensors.push_back({store_.name(id), store_.value(id)});
    }
  }
  save_tensors(path, tensors);
}

}  // namespace cgiqa
