#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dan/pipeline.hpp"
#include "dan/training.hpp"

namespace dan {

struct DataSection {
  std::string root = "data/toy";
  int videos = 4;
  int frames = 20;
  int64_t height = 64;
  int64_t width = 64;
  int accumulate = 7;
  std::string motion = "objects";
};

struct ModelSection {
  int64_t ppn_width = 32;
  int nlb_blocks = 3;
  int64_t nlb_subsample_above = 4096;
  std::string abdn_preset = "light";
  std::optional<int64_t> abdn_width;  // overrides the preset when set
  std::optional<int> abdn_depth;
  int64_t fan_width = 32;
  int64_t fan_flow_width = 16;
  double fan_flow_scale = 0.25;
  std::string flow_backend = "builtin-pyramid";
  double occ_alpha1 = 0.01;
  double occ_alpha2 = 0.5;

  DanConfig dan() const;
};

struct TrainSection {
  TrainConfig params;
  std::string dataset;  // empty: data.root
  std::string out_dir = "runs/toy";
  std::string init = "default";  // default | identity
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  int64_t val_every = 0;         // 0: no validation pass
};

struct EvalSection {
  std::string dataset;  // empty: data.root
  std::string modes = "ppn,ppn+abdn,full";
  double psnr_cap = 99.0;
  bool quantized = false;
  std::string out_dir = "reports";
};

/// Sections [run] [data] [model] [train] [eval]; every key is addressable as
/// "section.key" for overrides and snapshots.
struct RunConfig {
  uint64_t seed = 0;
  bool deterministic = false;
  std::string device = "cpu";
  DataSection data;
  ModelSection model;
  TrainSection train;
  EvalSection eval;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_snapshot(const std::vector<std::pair<std::string, std::string>>& entries);

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Accepts "section.key=value".
  void apply_override(const std::string& assignment);
  std::string get(const std::string& key) const;

  std::vector<std::pair<std::string, std::string>> snapshot() const;
  std::string to_ini() const;
  std::string fingerprint() const;

  /// Value ranges and cross-field constraints (patch vs network strides).
  void validate() const;

  /// TrainConfig with the run seed applied.
  TrainConfig train_config() const;
  std::vector<std::string> ablation_modes() const;
};

std::vector<std::string> config_keys();

}  // namespace dan
