#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dan/common.hpp"

namespace dan::test {

struct GradSample {
  std::string name;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  double rel_error() const {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    return std::abs(analytic - numeric) / scale;
  }
};

/// Central finite differences against autograd for `per_group` random
/// entries drawn from each parameter group. `loss` must be a deterministic
/// double-precision scalar of the parameters.
inline std::vector<GradSample> check_gradients(
    const std::vector<std::vector<std::pair<std::string, Tensor>>>& groups, const std::function<Tensor()>& loss,
    int per_group, uint64_t seed, double step = 1e-6) {
  for (const auto& group : groups) {
    for (const auto& [name, p] : group) p.mutable_grad() = Tensor();
  }
  loss().backward();

  std::mt19937_64 rng(seed);
  std::vector<GradSample> samples;
  for (const auto& group : groups) {
    int64_t total = 0;
    for (const auto& [name, p] : group) total += p.numel();
    for (int s = 0; s < per_group; ++s) {
      int64_t flat = std::uniform_int_distribution<int64_t>(0, total - 1)(rng);
      size_t which = 0;
      while (flat >= group[which].second.numel()) flat -= group[which++].second.numel();
      const auto& [name, p] = group[which];
      GradSample sample{name, flat};
      const Tensor grad = p.grad();
      sample.analytic = grad.defined() ? grad.reshape(-1)[flat].item<double>() : 0.0;

      torch::NoGradGuard no_grad;
      auto entry = p.view(-1)[flat];
      const double original = entry.item<double>();
      entry.fill_(original + step);
      const double up = loss().item<double>();
      entry.fill_(original - step);
      const double down = loss().item<double>();
      entry.fill_(original);
      sample.numeric = (up - down) / (2.0 * step);
      samples.push_back(sample);
    }
  }
  return samples;
}

inline std::vector<std::pair<std::string, Tensor>> params_with_prefix(const torch::nn::Module& module,
                                                                      const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& item : module.named_parameters()) {
    if (item.key().rfind(prefix, 0) == 0) out.emplace_back(item.key(), item.value());
  }
  return out;
}

}  // namespace dan::test
