#include <cmath>

#include "dan/training.hpp"

namespace dan {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train: " + msg); };
  if (!(lr > 0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lr_decay > 0) || lr_decay > 1) fail("lr_decay must be in (0, 1]");
  if (lr_decay_every < 0) fail("lr_decay_every must be >= 0");
  if (batch < 1) fail("batch must be >= 1");
  if (patch < 1) fail("patch must be >= 1");
  if (seq_len < 3) fail("seq_len must be >= 3");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
  if (max_iters < 0) fail("max_iters must be >= 0");
  if (bptt_window < 0) fail("bptt must be >= 0");
  if (noise_variance < 0) fail("noise_variance must be >= 0");
}

int64_t decay_boundary(const TrainConfig& config) {
  if (config.lr_decay_every > 0) return config.lr_decay_every;
  return std::max<int64_t>(1, config.max_iters * 2 / 5);
}

double scheduled_lr(const TrainConfig& config, int64_t iteration) {
  double lr = config.lr;
  const int64_t boundary = decay_boundary(config);
  for (int64_t k = iteration / boundary; k > 0; --k) lr *= config.lr_decay;
  return lr;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double beta1, double beta2, double epsilon)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.mutable_grad() = Tensor();
}

void Adam::step(double lr) {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    const Tensor g = p.grad();
    if (!g.defined()) continue;
    m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
    v_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    const Tensor denom = (v_[i] / c2).sqrt_().add_(epsilon_);
    p.addcdiv_(m_[i], denom, -lr / c1);
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < params_.size(); ++i) out.emplace_back("adam.m." + params_[i].first, m_[i]);
  for (size_t i = 0; i < params_.size(); ++i) out.emplace_back("adam.v." + params_[i].first, v_[i]);
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& tensors) {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < params_.size(); ++i) {
    for (auto [prefix, slot] : {std::pair{"adam.m.", &m_[i]}, std::pair{"adam.v.", &v_[i]}}) {
      const std::string key = prefix + params_[i].first;
      auto it = tensors.find(key);
      if (it == tensors.end()) throw IncompatibleCheckpointError("checkpoint lacks optimiser tensor " + key);
      if (it->second.sizes() != slot->sizes()) {
        throw IncompatibleCheckpointError("optimiser tensor " + key + " has shape " + shape_string(it->second));
      }
      slot->copy_(it->second);
    }
  }
}

}  // namespace dan
