#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dan/video_data.hpp"

namespace dan {
namespace {

struct Wave {
  double amplitude;
  double fx;
  double fy;
  double phase;
};

struct Texture {
  std::array<double, 3> base{};
  std::array<std::vector<Wave>, 3> waves;

  double sample(double x, double y, int channel) const {
    double v = base[channel];
    for (const Wave& w : waves[channel]) v += w.amplitude * std::sin(w.fx * x + w.fy * y + w.phase);
    return v;
  }
};

// Time warp giving a speed factor of 1 + amount * cos(2 pi t / period + phase).
struct SpeedProfile {
  double amount = 0.0;
  double period = 10.0;
  double phase = 0.0;

  double travel(double t) const {
    if (amount == 0.0) return t;
    const double k = 2.0 * std::numbers::pi / period;
    return t + amount / k * (std::sin(k * t + phase) - std::sin(phase));
  }
};

struct Shape {
  bool disk = true;
  double cx = 0, cy = 0;
  double rx = 1, ry = 1;
  double vx = 0, vy = 0;
  SpeedProfile speed;
  Texture texture;
};

struct Patch {
  double x0, y0, x1, y1;
  std::array<double, 3> offset;
};

struct Scene {
  Texture background;
  std::vector<Patch> patches;
  std::vector<Shape> shapes;
  double cam_vx = 0, cam_vy = 0;
  SpeedProfile cam_speed;
};

class Sampler {
 public:
  explicit Sampler(uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

 private:
  std::mt19937_64 rng_;
};

Texture random_texture(Sampler& s, double amp_scale) {
  Texture t;
  for (int c = 0; c < 3; ++c) {
    t.base[c] = s.uniform(0.25, 0.75);
  }
  // Shared orientations across channels keep the texture mostly luminance.
  const int n = 4;
  std::array<std::pair<double, double>, n> freqs{};
  for (auto& f : freqs) {
    const double wavelength = s.uniform(4.0, 14.0);
    const double angle = s.uniform(0.0, std::numbers::pi);
    const double k = 2.0 * std::numbers::pi / wavelength;
    f = {k * std::cos(angle), k * std::sin(angle)};
  }
  for (int c = 0; c < 3; ++c) {
    for (const auto& [fx, fy] : freqs) {
      t.waves[c].push_back({amp_scale * s.uniform(0.5, 1.0), fx, fy, s.uniform(0.0, 6.2832)});
    }
  }
  return t;
}

Scene build_scene(uint64_t seed, const MotionSpec& motion, const ToySceneOptions& opt) {
  Sampler s(seed * 0x9E3779B97F4A7C15ULL + 17);
  Scene scene;
  scene.background = random_texture(s, 0.08);
  const double h = static_cast<double>(opt.height);
  const double w = static_cast<double>(opt.width);
  const double extent = std::max(h, w);

  const int n_patches = 6;
  for (int i = 0; i < n_patches; ++i) {
    const double px = s.uniform(-0.5 * extent, w + 0.5 * extent);
    const double py = s.uniform(-0.5 * extent, h + 0.5 * extent);
    const double pw = s.uniform(0.15, 0.45) * extent;
    const double ph = s.uniform(0.15, 0.45) * extent;
    Patch p{px, py, px + pw, py + ph, {}};
    const double shade = s.uniform(-0.25, 0.25);
    for (int c = 0; c < 3; ++c) p.offset[c] = shade + s.uniform(-0.05, 0.05);
    scene.patches.push_back(p);
  }

  const double min_dim = std::min(h, w);
  const int n_shapes = 3;
  for (int i = 0; i < n_shapes; ++i) {
    Shape shape;
    shape.disk = s.integer(0, 1) == 1;
    shape.cx = s.uniform(0.2 * w, 0.8 * w);
    shape.cy = s.uniform(0.2 * h, 0.8 * h);
    shape.rx = s.uniform(0.1, 0.22) * min_dim;
    shape.ry = s.uniform(0.1, 0.22) * min_dim;
    shape.texture = random_texture(s, 0.12);
    const double speed = s.uniform(0.5, 1.2);
    const double dir = s.uniform(0.0, 2.0 * std::numbers::pi);
    shape.vx = speed * std::cos(dir);
    shape.vy = speed * std::sin(dir);
    shape.speed = {0.7, s.uniform(6.0, 14.0), s.uniform(0.0, 2.0 * std::numbers::pi)};
    scene.shapes.push_back(shape);
  }

  switch (motion.kind) {
    case MotionSpec::Kind::kStatic:
      for (auto& shape : scene.shapes) shape.vx = shape.vy = 0.0;
      break;
    case MotionSpec::Kind::kTranslate: {
      // Rigid pan: shapes stay fixed in the world and the camera moves at a
      // constant rate, so integer rates give exact integer shifts.
      const double rx = s.uniform(-1.5, 1.5);
      const double ry = s.uniform(-1.5, 1.5);
      const bool given = motion.dx || motion.dy;
      scene.cam_vx = given ? motion.dx.value_or(0.0) : rx;
      scene.cam_vy = given ? motion.dy.value_or(0.0) : ry;
      for (auto& shape : scene.shapes) shape.vx = shape.vy = 0.0;
      break;
    }
    case MotionSpec::Kind::kObjects: {
      const double rx = s.uniform(-0.5, 0.5);
      const double ry = s.uniform(-0.5, 0.5);
      const bool given = motion.dx || motion.dy;
      scene.cam_vx = given ? motion.dx.value_or(0.0) : rx;
      scene.cam_vy = given ? motion.dy.value_or(0.0) : ry;
      scene.cam_speed = {0.5, s.uniform(8.0, 16.0), s.uniform(0.0, 2.0 * std::numbers::pi)};
      break;
    }
  }
  return scene;
}

bool inside(const Shape& shape, double lx, double ly) {
  const double nx = lx / shape.rx;
  const double ny = ly / shape.ry;
  if (shape.disk) return nx * nx + ny * ny <= 1.0;
  return std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0;
}

// World position seen by pixel coordinate (x, y) at time t is (x - cam_x(t), y - cam_y(t)).
Tensor render_frame(const Scene& scene, double t, const ToySceneOptions& opt) {
  const int64_t h = opt.height;
  const int64_t w = opt.width;
  auto frame = torch::empty({1, 3, h, w}, torch::kFloat32);
  auto acc = frame.accessor<float, 4>();

  const double cam_travel = scene.cam_speed.travel(t);
  const double cam_x = scene.cam_vx * cam_travel;
  const double cam_y = scene.cam_vy * cam_travel;
  std::vector<std::pair<double, double>> shape_pos;
  for (const Shape& shape : scene.shapes) {
    const double travel = shape.speed.travel(t);
    shape_pos.emplace_back(shape.cx + shape.vx * travel, shape.cy + shape.vy * travel);
  }

  static constexpr std::array<double, 2> kSub = {-0.25, 0.25};
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      std::array<double, 3> sum{};
      for (double oy : kSub) {
        for (double ox : kSub) {
          const double wx = (static_cast<double>(x) + ox) - cam_x;
          const double wy = (static_cast<double>(y) + oy) - cam_y;
          std::array<double, 3> rgb{};
          for (int c = 0; c < 3; ++c) rgb[c] = scene.background.sample(wx, wy, c);
          for (const Patch& p : scene.patches) {
            if (wx >= p.x0 && wx < p.x1 && wy >= p.y0 && wy < p.y1) {
              for (int c = 0; c < 3; ++c) rgb[c] += p.offset[c];
            }
          }
          for (size_t i = 0; i < scene.shapes.size(); ++i) {
            const Shape& shape = scene.shapes[i];
            const double lx = wx - shape_pos[i].first;
            const double ly = wy - shape_pos[i].second;
            if (inside(shape, lx, ly)) {
              for (int c = 0; c < 3; ++c) rgb[c] = shape.texture.sample(lx, ly, c);
            }
          }
          for (int c = 0; c < 3; ++c) sum[c] += std::clamp(rgb[c], 0.0, 1.0);
        }
      }
      for (int c = 0; c < 3; ++c) acc[0][c][y][x] = static_cast<float>(sum[c] * 0.25);
    }
  }
  return frame;
}

double parse_number(std::string_view text, std::string_view key) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ArgumentError("motion spec: bad value for " + std::string(key) + ": '" +
                        std::string(text) + "'");
  }
  return value;
}

}  // namespace

MotionSpec MotionSpec::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string token;
  MotionSpec spec;
  if (!(in >> token)) throw ArgumentError("motion spec: empty descriptor");
  if (token == "static") {
    spec.kind = Kind::kStatic;
  } else if (token == "translate") {
    spec.kind = Kind::kTranslate;
  } else if (token == "objects") {
    spec.kind = Kind::kObjects;
  } else {
    throw ArgumentError("motion spec: unknown kind '" + token + "'");
  }
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ArgumentError("motion spec: expected key=value, got '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string_view value = std::string_view(token).substr(eq + 1);
    if (key == "dx") {
      spec.dx = parse_number(value, key);
    } else if (key == "dy") {
      spec.dy = parse_number(value, key);
    } else {
      throw ArgumentError("motion spec: unknown key '" + key + "'");
    }
  }
  if (spec.kind == Kind::kStatic && (spec.dx || spec.dy)) {
    throw ArgumentError("motion spec: 'static' takes no parameters");
  }
  return spec;
}

std::string MotionSpec::to_string() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::kStatic: out << "static"; break;
    case Kind::kTranslate: out << "translate"; break;
    case Kind::kObjects: out << "objects"; break;
  }
  if (dx) out << " dx=" << *dx;
  if (dy) out << " dy=" << *dy;
  return out.str();
}

SharpSequence make_toy_sequence(uint64_t seed, int length, const MotionSpec& motion,
                                const ToySceneOptions& options) {
  if (length < 3) throw ArgumentError("make_toy_sequence: length must be >= 3");
  if (options.height < 1 || options.width < 1) throw ArgumentError("make_toy_sequence: empty frame size");
  const Scene scene = build_scene(seed, motion, options);
  SharpSequence seq;
  seq.frames.reserve(length);
  for (int i = 0; i < length; ++i) seq.frames.push_back(render_frame(scene, i, options));
  return seq;
}

TrainingSequence make_toy_training_sequence(uint64_t seed, int length, const MotionSpec& motion,
                                            int n_accumulate, const ToySceneOptions& options,
                                            std::string video_id) {
  if (length < 3) throw ArgumentError("make_toy_training_sequence: length must be >= 3");
  if (n_accumulate < 1) throw ArgumentError("make_toy_training_sequence: n_accumulate must be >= 1");
  const Scene scene = build_scene(seed, motion, options);
  const int before = (n_accumulate - 1) / 2;
  const int after = n_accumulate / 2;
  std::vector<Tensor> rendered;
  for (int t = -before; t < length + after; ++t) rendered.push_back(render_frame(scene, t, options));

  TrainingSequence seq;
  seq.video_id = std::move(video_id);
  for (int i = 0; i < length; ++i) {
    std::span<const Tensor> window(rendered.data() + i, static_cast<size_t>(n_accumulate));
    seq.pairs.push_back({synthesize_blur(window, n_accumulate), rendered[i + before]});
  }
  return seq;
}

}  // namespace dan
