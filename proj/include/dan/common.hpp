#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dan {

using Tensor = torch::Tensor;

// Frames are [N, 3, H, W] float tensors with values in [0, 1]; a single
// image is N == 1. Flow fields are [N, 2, H, W] (dx, dy) in pixels and
// occlusion maps are [N, 1, H, W] holding exactly 0 or 1.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IncompatibleCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

enum class FlowDirection { kForward, kBackward };

struct FlowField {
  Tensor vectors;  // [N, 2, H, W]
  FlowDirection direction = FlowDirection::kForward;

  int64_t height() const { return vectors.size(2); }
  int64_t width() const { return vectors.size(3); }
};

struct OcclusionMap {
  Tensor mask;  // [N, 1, H, W], 1 = visible in the neighbour, 0 = occluded
};

std::string shape_string(const Tensor& t);

/// Throws DimensionError unless `t` is a 4-D tensor with `channels` planes
/// (any channel count when `channels` < 0).
void require_image(const Tensor& t, int64_t channels, const char* what);

/// Throws DimensionError unless batch and spatial sizes of `a` and `b` agree.
void require_same_grid(const Tensor& a, const Tensor& b, const char* what);

}  // namespace dan
