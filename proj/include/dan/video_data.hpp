#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dan/common.hpp"

namespace dan {

struct SharpSequence {
  std::vector<Tensor> frames;  // each [1, 3, H, W]
  int fps_tag = 240;
};

struct BlurSharpPair {
  Tensor blurry;
  Tensor sharp;
};

struct TrainingSequence {
  std::string video_id;
  std::vector<BlurSharpPair> pairs;

  int64_t length() const { return static_cast<int64_t>(pairs.size()); }
  int64_t height() const { return pairs.front().sharp.size(2); }
  int64_t width() const { return pairs.front().sharp.size(3); }
  std::vector<Tensor> blurry_frames() const;
  std::vector<Tensor> sharp_frames() const;
};

/// Averages an exposure window of sharp frames into one blurry frame.
Tensor synthesize_blur(std::span<const Tensor> sharp_window, int n_accumulate);

/// Toy motion descriptor, parsed from strings such as "static",
/// "translate", "translate dx=2 dy=0" or "objects".
struct MotionSpec {
  enum class Kind { kStatic, kTranslate, kObjects };
  Kind kind = Kind::kObjects;
  std::optional<double> dx;
  std::optional<double> dy;

  static MotionSpec parse(std::string_view text);
  std::string to_string() const;
};

struct ToySceneOptions {
  int64_t height = 64;
  int64_t width = 64;
};

/// Renders a procedural sharp video: textured shapes over a textured
/// background, evaluated at continuous coordinates so motion can be
/// sub-pixel. Pure function of its arguments.
SharpSequence make_toy_sequence(uint64_t seed, int length, const MotionSpec& motion,
                                const ToySceneOptions& options = {});

/// Renders `length + n_accumulate - 1` sharp frames and pairs frame i with the
/// mean of the `n_accumulate` frames centred on it.
TrainingSequence make_toy_training_sequence(uint64_t seed, int length, const MotionSpec& motion,
                                            int n_accumulate, const ToySceneOptions& options = {},
                                            std::string video_id = "toy");

struct AugmentOptions {
  int64_t crop = 256;
  bool random_flips = true;
  bool color_jitter = true;
  double noise_variance = 0.01;
  // Forces a flip regardless of the coin toss when random_flips is off.
  bool force_hflip = false;
  bool force_vflip = false;
};

/// Crop, flips and colour jitter shared by every frame of the sequence;
/// Gaussian noise on the blurry frames only.
TrainingSequence augment(const TrainingSequence& seq, uint64_t seed,
                         const AugmentOptions& options = {});

/// Consecutive sub-sequence [start, start + length).
TrainingSequence slice_sequence(const TrainingSequence& seq, int64_t start, int64_t length);

enum class DatasetLayout {
  kVideo,    // <dir>/{blur,sharp}/NNNNN.png
  kDataset,  // <dir>/manifest.txt listing video ids, each a kVideo directory
};

std::vector<TrainingSequence> ingest_directory(const std::filesystem::path& path,
                                               DatasetLayout layout);

/// Sorted NNNNN.png files directly inside `dir`.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);

std::string frame_file_name(int64_t index);

void write_video_directory(const std::filesystem::path& video_dir, const TrainingSequence& seq);

std::vector<std::string> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& video_ids);

}  // namespace dan
