#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "cgiqa/tensor.hpp"

namespace cgiqa {

struct ParamTensor {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  bool frozen = false;

  explicit ParamTensor(Tensor initial);
};

using ParamId = std::size_t;

// Ordered, name-addressed parameter collection. Modules keep ParamIds into it.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor initial);

  ParamTensor& operator[](ParamId id) { return params_.at(id); }
  const ParamTensor& operator[](ParamId id) const { return params_.at(id); }
  const Tensor& value(ParamId id) const { return params_.at(id).value; }
  // Adds `g` into the gradient of a non-frozen parameter.
  void accumulate(ParamId id, const Tensor& g);

  std::size_t size() const { return params_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamId id(const std::string& name) const;

  // Freezes every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);
  void zero_grad();
  std::size_t scalar_count() const;

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }

 private:
  std::vector<ParamTensor> params_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, ParamId> index_;
};

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  // Throws ConfigError. A zero learning rate is accepted and makes every step a no-op.
  void validate() const;
};

// Bias-corrected Adam update of every non-frozen parameter; zeroes all grads.
// `step` is the 1-based update count.
void adam_step(ParamStore& store, const AdamConfig& cfg, std::size_t step);

}  // namespace cgiqa
