#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dan/flow_align.hpp"

namespace dan {
namespace {

struct Plane {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Plane() = default;
  Plane(int height, int width, float fill = 0.0f) : h(height), w(width), v(static_cast<size_t>(height) * width, fill) {}

  float& operator()(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float operator()(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  float clamped(int y, int x) const { return (*this)(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); }

  float bilinear(float x, float y) const {
    x = std::clamp(x, 0.0f, static_cast<float>(w - 1));
    y = std::clamp(y, 0.0f, static_cast<float>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const float ax = x - x0;
    const float ay = y - y0;
    const float top = (1 - ax) * (*this)(y0, x0) + ax * (*this)(y0, x1);
    const float bot = (1 - ax) * (*this)(y1, x0) + ax * (*this)(y1, x1);
    return (1 - ay) * top + ay * bot;
  }
};

Plane gray_plane(const Tensor& image, int64_t index) {
  const auto img = image[index].to(torch::kFloat32).contiguous();
  const int c = static_cast<int>(img.size(0));
  Plane p(static_cast<int>(img.size(1)), static_cast<int>(img.size(2)));
  const float* data = img.data_ptr<float>();
  const size_t plane = p.v.size();
  for (size_t i = 0; i < plane; ++i) {
    if (c == 3) {
      p.v[i] = 0.299f * data[i] + 0.587f * data[plane + i] + 0.114f * data[2 * plane + i];
    } else {
      float s = 0.0f;
      for (int k = 0; k < c; ++k) s += data[k * plane + i];
      p.v[i] = s / static_cast<float>(c);
    }
  }
  return p;
}

Plane blur5(const Plane& in) {
  static constexpr std::array<float, 5> k = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};
  Plane tmp(in.h, in.w);
  Plane out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float s = 0.0f;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * in.clamped(y, x + i);
      tmp(y, x) = s;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float s = 0.0f;
      for (int i = -2; i <= 2; ++i) s += k[i + 2] * tmp.clamped(y + i, x);
      out(y, x) = s;
    }
  return out;
}

Plane downsample(const Plane& in) {
  const Plane b = blur5(in);
  Plane out((in.h + 1) / 2, (in.w + 1) / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out(y, x) = b.clamped(2 * y, 2 * x);
  return out;
}

Plane resize_flow(const Plane& in, int h, int w, float scale) {
  Plane out(h, w);
  const float sy = static_cast<float>(in.h) / h;
  const float sx = static_cast<float>(in.w) / w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Pixel-centre aligned resampling.
      out(y, x) = scale * in.bilinear((x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
    }
  return out;
}

void median3(Plane& p) {
  Plane out(p.h, p.w);
  std::array<float, 9> buf{};
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) buf[n++] = p.clamped(y + dy, x + dx);
      std::nth_element(buf.begin(), buf.begin() + 4, buf.end());
      out(y, x) = buf[4];
    }
  p = std::move(out);
}

// Integer SSD search; a displacement replaces zero only on a clear win so
// flat regions keep zero motion.
void block_match(const Plane& src, const Plane& dst, int radius, int patch, Plane& u, Plane& v) {
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      auto cost = [&](int dx, int dy) {
        float s = 0.0f;
        for (int py = -patch; py <= patch; ++py)
          for (int px = -patch; px <= patch; ++px) {
            const float d = src.clamped(y + py, x + px) - dst.clamped(y + py + dy, x + px + dx);
            s += d * d;
          }
        return s;
      };
      const float zero_cost = cost(0, 0);
      float best = zero_cost;
      int bx = 0, by = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const float c = cost(dx, dy);
          if (c < best) {
            best = c;
            bx = dx;
            by = dy;
          }
        }
      if (best < 0.8f * zero_cost && zero_cost > 1e-8f) {
        u(y, x) = static_cast<float>(bx);
        v(y, x) = static_cast<float>(by);
      }
    }
  median3(u);
  median3(v);
}

void refine_level(const Plane& src, const Plane& dst, const PyramidFlowOptions& opt, Plane& u, Plane& v) {
  const int h = src.h;
  const int w = src.w;
  const float alpha = static_cast<float>(opt.smoothness);
  Plane ix(h, w), iy(h, w), it(h, w), avg(h, w);
  Plane du(h, w), dv(h, w), du_next(h, w), dv_next(h, w);
  for (int warp = 0; warp < opt.warps; ++warp) {
    Plane warped(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) warped(y, x) = dst.bilinear(x + u(y, x), y + v(y, x));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) avg(y, x) = 0.5f * (warped(y, x) + src(y, x));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        ix(y, x) = 0.5f * (avg.clamped(y, x + 1) - avg.clamped(y, x - 1));
        iy(y, x) = 0.5f * (avg.clamped(y + 1, x) - avg.clamped(y - 1, x));
        it(y, x) = warped(y, x) - src(y, x);
      }
    std::fill(du.v.begin(), du.v.end(), 0.0f);
    std::fill(dv.v.begin(), dv.v.end(), 0.0f);
    for (int iter = 0; iter < opt.iterations; ++iter) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          auto total_u = [&](int yy, int xx) {
            yy = std::clamp(yy, 0, h - 1);
            xx = std::clamp(xx, 0, w - 1);
            return u(yy, xx) + du(yy, xx);
          };
          auto total_v = [&](int yy, int xx) {
            yy = std::clamp(yy, 0, h - 1);
            xx = std::clamp(xx, 0, w - 1);
            return v(yy, xx) + dv(yy, xx);
          };
          const float ubar = 0.25f * (total_u(y - 1, x) + total_u(y + 1, x) + total_u(y, x - 1) + total_u(y, x + 1)) - u(y, x);
          const float vbar = 0.25f * (total_v(y - 1, x) + total_v(y + 1, x) + total_v(y, x - 1) + total_v(y, x + 1)) - v(y, x);
          const float gx = ix(y, x);
          const float gy = iy(y, x);
          const float residual = gx * ubar + gy * vbar + it(y, x);
          const float scale = residual / (alpha + gx * gx + gy * gy);
          du_next(y, x) = ubar - gx * scale;
          dv_next(y, x) = vbar - gy * scale;
        }
      std::swap(du.v, du_next.v);
      std::swap(dv.v, dv_next.v);
    }
    for (size_t i = 0; i < u.v.size(); ++i) {
      u.v[i] += du.v[i];
      v.v[i] += dv.v[i];
    }
    median3(u);
    median3(v);
  }
}

}  // namespace

FlowField PyramidFlowBackend::estimate(const Tensor& src, const Tensor& dst) {
  require_image(src, -1, "builtin-pyramid");
  require_same_grid(src, dst, "builtin-pyramid");
  const int64_t n = src.size(0);
  const int h = static_cast<int>(src.size(2));
  const int w = static_cast<int>(src.size(3));
  auto out = torch::zeros({n, 2, h, w}, torch::kFloat32);
  auto acc = out.accessor<float, 4>();

  for (int64_t b = 0; b < n; ++b) {
    std::vector<Plane> src_pyr{gray_plane(src, b)};
    std::vector<Plane> dst_pyr{gray_plane(dst, b)};
    while (static_cast<int>(src_pyr.size()) < options_.levels && std::min(src_pyr.back().h, src_pyr.back().w) >= 16) {
      src_pyr.push_back(downsample(src_pyr.back()));
      dst_pyr.push_back(downsample(dst_pyr.back()));
    }
    const int coarsest = static_cast<int>(src_pyr.size()) - 1;
    Plane u(src_pyr[coarsest].h, src_pyr[coarsest].w);
    Plane v(u.h, u.w);
    if (options_.search_radius > 0) {
      block_match(src_pyr[coarsest], dst_pyr[coarsest], options_.search_radius, options_.patch_radius, u, v);
    }
    for (int level = coarsest; level >= 0; --level) {
      if (level != coarsest) {
        const Plane& s = src_pyr[level];
        const float fx = static_cast<float>(s.w) / u.w;
        const float fy = static_cast<float>(s.h) / v.h;
        u = resize_flow(u, s.h, s.w, fx);
        v = resize_flow(v, s.h, s.w, fy);
      }
      refine_level(src_pyr[level], dst_pyr[level], options_, u, v);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        acc[b][0][y][x] = u(y, x);
        acc[b][1][y][x] = v(y, x);
      }
  }
  return {out, FlowDirection::kForward};
}

}  // namespace dan
