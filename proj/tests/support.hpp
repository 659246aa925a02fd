#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dan/common.hpp"

namespace dan::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dan_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor uniform(std::vector<int64_t> shape, uint64_t seed, double lo = 0.0, double hi = 1.0,
                      torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::empty(shape, torch::dtype(torch::kFloat64)).uniform_(lo, hi, gen).to(dtype);
}

inline Tensor constant(std::vector<int64_t> shape, double value) {
  return torch::full(shape, value, torch::kFloat32);
}

/// Smooth multi-frequency texture, good for flow estimation.
inline Tensor texture(int64_t h, int64_t w, double phase = 0.0) {
  auto ys = torch::arange(h, torch::kFloat64).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat64).view({1, w}).expand({h, w});
  auto r = 0.5 + 0.2 * torch::sin(0.45 * xs + phase) * torch::cos(0.31 * ys) + 0.15 * torch::sin(0.23 * (xs + ys) + 1.3);
  auto g = 0.5 + 0.25 * torch::cos(0.37 * xs - 0.29 * ys + phase);
  auto b = 0.5 + 0.2 * torch::sin(0.19 * xs + 0.41 * ys);
  return torch::stack({r, g, b}).unsqueeze(0).to(torch::kFloat32).clamp(0, 1);
}

inline double max_abs(const Tensor& a, const Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline double mean_abs(const Tensor& a, const Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().mean().item<double>();
}

inline bool same(const Tensor& a, const Tensor& b) { return a.sizes() == b.sizes() && torch::equal(a, b); }

}  // namespace dan::test
