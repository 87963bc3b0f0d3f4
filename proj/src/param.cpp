#include "cgiqa/param.hpp"

#include <cmath>

#include "cgiqa/error.hpp"

namespace cgiqa {

ParamTensor::ParamTensor(Tensor initial)
    : value(std::move(initial)),
      grad(value.shape()),
      adam_m(value.shape()),
      adam_v(value.shape()) {}

ParamId ParamStore::add(std::string name, Tensor initial) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  const ParamId id = params_.size();
  params_.emplace_back(std::move(initial));
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  return id;
}

void ParamStore::accumulate(ParamId id, const Tensor& g) {
  ParamTensor& p = params_.at(id);
  if (p.frozen) return;
  p.grad += g;
}

ParamId ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::set_frozen(const std::string& prefix, bool frozen) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (names_[i].rfind(prefix, 0) == 0) params_[i].frozen = frozen;
  }
}

void ParamStore::zero_grad() {
  for (ParamTensor& p : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const ParamTensor& p : params_) n += p.value.size();
  return n;
}

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("adam: learning_rate must be a finite value >= 0");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

void adam_step(ParamStore& store, const AdamConfig& cfg, std::size_t step) {
  if (step == 0) throw ConfigError("adam: step index is 1-based");
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (ParamTensor& p : store.params()) {
    if (!p.frozen && cfg.learning_rate > 0.0) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
        p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = p.adam_m[i] / bc1;
        const double v_hat = p.adam_v[i] / bc2;
        p.value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      }
    }
    p.grad.fill(0.0);
  }
}

}  // namespace cgiqa
