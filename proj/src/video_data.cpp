#include "dan/video_data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>

#include "dan/image_io.hpp"

namespace fs = std::filesystem;

namespace dan {

std::vector<Tensor> TrainingSequence::blurry_frames() const {
  std::vector<Tensor> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.blurry);
  return out;
}

std::vector<Tensor> TrainingSequence::sharp_frames() const {
  std::vector<Tensor> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.sharp);
  return out;
}

Tensor synthesize_blur(std::span<const Tensor> sharp_window, int n_accumulate) {
  if (sharp_window.empty()) throw ArgumentError("synthesize_blur: empty window");
  if (n_accumulate < 1) throw ArgumentError("synthesize_blur: n_accumulate must be >= 1");
  if (static_cast<int>(sharp_window.size()) != n_accumulate) {
    throw ArgumentError("synthesize_blur: window holds " + std::to_string(sharp_window.size()) +
                        " frames, expected " + std::to_string(n_accumulate));
  }
  const Tensor& first = sharp_window.front();
  require_image(first, 3, "synthesize_blur");
  // Double accumulation keeps the mean of identical frames bit-exact.
  auto sum = torch::zeros_like(first, torch::kFloat64);
  for (const Tensor& f : sharp_window) {
    require_image(f, 3, "synthesize_blur");
    require_same_grid(first, f, "synthesize_blur");
    sum += f.to(torch::kFloat64);
  }
  return sum.div(static_cast<double>(n_accumulate)).clamp(0.0, 1.0).to(torch::kFloat32);
}

TrainingSequence augment(const TrainingSequence& seq, uint64_t seed, const AugmentOptions& options) {
  if (seq.pairs.empty()) throw ArgumentError("augment: empty sequence");
  const int64_t h = seq.height();
  const int64_t w = seq.width();
  if (options.crop < 1 || options.crop > h || options.crop > w) {
    throw ArgumentError("augment: crop " + std::to_string(options.crop) + " exceeds frame " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  if (options.noise_variance < 0.0) throw ArgumentError("augment: negative noise variance");

  // Every parameter is drawn unconditionally so toggling one option leaves
  // the others unchanged for a given seed.
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };
  const int64_t y0 = std::uniform_int_distribution<int64_t>(0, h - options.crop)(rng);
  const int64_t x0 = std::uniform_int_distribution<int64_t>(0, w - options.crop)(rng);
  const bool coin_h = uniform(0.0, 1.0) < 0.5;
  const bool coin_v = uniform(0.0, 1.0) < 0.5;
  std::array<double, 3> gain{}, bias{};
  for (int c = 0; c < 3; ++c) {
    gain[c] = uniform(0.9, 1.1);
    bias[c] = uniform(-0.05, 0.05);
  }
  const bool hflip = options.random_flips ? coin_h : options.force_hflip;
  const bool vflip = options.random_flips ? coin_v : options.force_vflip;
  auto noise_gen = at::detail::createCPUGenerator(seed * 0x9E3779B97F4A7C15ULL + 0x51ED);

  auto gain_t = torch::tensor({gain[0], gain[1], gain[2]}, torch::kFloat32).view({1, 3, 1, 1});
  auto bias_t = torch::tensor({bias[0], bias[1], bias[2]}, torch::kFloat32).view({1, 3, 1, 1});
  auto geometric = [&](const Tensor& f) {
    Tensor out = f.slice(2, y0, y0 + options.crop).slice(3, x0, x0 + options.crop);
    if (hflip) out = out.flip({3});
    if (vflip) out = out.flip({2});
    if (options.color_jitter) out = (out * gain_t + bias_t).clamp(0.0, 1.0);
    return out.contiguous();
  };

  TrainingSequence result;
  result.video_id = seq.video_id;
  result.pairs.reserve(seq.pairs.size());
  const double sigma = std::sqrt(options.noise_variance);
  for (const auto& pair : seq.pairs) {
    require_same_grid(pair.blurry, pair.sharp, "augment");
    Tensor blurry = geometric(pair.blurry);
    // Drawn even at zero variance to keep the stream position seed-stable.
    Tensor noise = torch::randn(blurry.sizes(), noise_gen, torch::kFloat32);
    if (sigma > 0.0) blurry = (blurry + noise * sigma).clamp(0.0, 1.0);
    result.pairs.push_back({blurry, geometric(pair.sharp)});
  }
  return result;
}

TrainingSequence slice_sequence(const TrainingSequence& seq, int64_t start, int64_t length) {
  if (start < 0 || length < 1 || start + length > seq.length()) {
    throw ArgumentError("slice_sequence: range [" + std::to_string(start) + ", " +
                        std::to_string(start + length) + ") outside sequence of length " +
                        std::to_string(seq.length()));
  }
  TrainingSequence out;
  out.video_id = seq.video_id;
  out.pairs.assign(seq.pairs.begin() + start, seq.pairs.begin() + start + length);
  return out;
}

std::string frame_file_name(int64_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return digits + ".png";
}

namespace {

bool is_frame_file(const fs::path& p) {
  const std::string name = p.filename().string();
  if (name.size() < 9 || p.extension() != ".png") return false;
  const std::string stem = p.stem().string();
  return stem.size() >= 5 && std::all_of(stem.begin(), stem.end(), [](unsigned char c) { return std::isdigit(c); });
}

TrainingSequence ingest_video(const fs::path& dir) {
  const fs::path blur_dir = dir / "blur";
  const fs::path sharp_dir = dir / "sharp";
  if (!fs::is_directory(blur_dir)) throw IngestionError("missing directory " + blur_dir.string());
  if (!fs::is_directory(sharp_dir)) throw IngestionError("missing directory " + sharp_dir.string());

  const auto blur_files = list_frame_files(blur_dir);
  const auto sharp_files = list_frame_files(sharp_dir);
  std::set<std::string> sharp_names;
  for (const auto& f : sharp_files) sharp_names.insert(f.filename().string());
  std::set<std::string> blur_names;
  for (const auto& f : blur_files) {
    blur_names.insert(f.filename().string());
    if (!sharp_names.count(f.filename().string())) {
      throw IngestionError("missing sharp counterpart for " + f.string() + ": expected " +
                           (sharp_dir / f.filename()).string());
    }
  }
  for (const auto& f : sharp_files) {
    if (!blur_names.count(f.filename().string())) {
      throw IngestionError("missing blur counterpart for " + f.string() + ": expected " +
                           (blur_dir / f.filename()).string());
    }
  }
  if (blur_files.empty()) throw IngestionError("no frames in " + blur_dir.string());

  TrainingSequence seq;
  seq.video_id = dir.filename().string();
  for (const auto& f : blur_files) {
    Tensor blurry = read_png(f);
    Tensor sharp = read_png(sharp_dir / f.filename());
    if (!seq.pairs.empty() && (blurry.sizes() != seq.pairs.front().blurry.sizes())) {
      throw IngestionError("frame size changes within video at " + f.string());
    }
    if (blurry.sizes() != sharp.sizes()) {
      throw IngestionError("blur/sharp size mismatch at " + f.string());
    }
    seq.pairs.push_back({blurry, sharp});
  }
  return seq;
}

}  // namespace

std::vector<fs::path> list_frame_files(const fs::path& dir) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && is_frame_file(entry.path())) files.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto sa = a.stem().string();
    const auto sb = b.stem().string();
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    return sa < sb;
  });
  return files;
}

std::vector<TrainingSequence> ingest_directory(const fs::path& path, DatasetLayout layout) {
  if (!fs::is_directory(path)) throw IngestionError("not a directory: " + path.string());
  if (layout == DatasetLayout::kVideo) return {ingest_video(path)};

  std::vector<std::string> ids;
  if (fs::exists(path / "manifest.txt")) {
    ids = read_manifest(path / "manifest.txt");
  } else {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_directory() && fs::is_directory(entry.path() / "blur")) {
        ids.push_back(entry.path().filename().string());
      }
    }
    std::sort(ids.begin(), ids.end());
  }
  if (ids.empty()) throw IngestionError("no videos found under " + path.string());
  std::vector<TrainingSequence> videos;
  for (const auto& id : ids) {
    if (!fs::is_directory(path / id)) throw IngestionError("manifest lists missing video " + (path / id).string());
    videos.push_back(ingest_video(path / id));
  }
  return videos;
}

void write_video_directory(const fs::path& video_dir, const TrainingSequence& seq) {
  std::error_code ec;
  fs::create_directories(video_dir / "blur", ec);
  fs::create_directories(video_dir / "sharp", ec);
  if (ec) throw IoError("cannot create " + video_dir.string() + ": " + ec.message());
  for (int64_t i = 0; i < seq.length(); ++i) {
    write_png(video_dir / "blur" / frame_file_name(i), seq.pairs[i].blurry);
    write_png(video_dir / "sharp" / frame_file_name(i), seq.pairs[i].sharp);
  }
}

std::vector<std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    size_t start = 0;
    while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
    line = line.substr(start);
    if (!line.empty() && line[0] != '#') ids.push_back(line);
  }
  return ids;
}

void write_manifest(const fs::path& path, const std::vector<std::string>& video_ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& id : video_ids) out << id << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

}  // namespace dan
