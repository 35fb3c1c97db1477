#pragma once

// Brute-force reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "pseudoseg/image.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/nn.hpp"
#include "pseudoseg/rng.hpp"

namespace oracle {

using pseudoseg::BinaryMask;
using pseudoseg::ScoreMap;

// Level of v: how many of the 255 cut points (k + 0.5) / 255 lie strictly below v.
inline int level(double v) {
  int q = 0;
  for (int k = 0; k < 255; ++k)
    if (v > (k + 0.5) / 255.0) ++q;
  return q;
}

// Exhaustive between-class-variance argmax over all 255 cuts, compared as
// exact fractions (s0*n1 - s1*n0)^2 / (n0*n1). Lowest cut wins ties; 1.0
// when no cut separates two nonempty classes with distinct means.
inline double otsu(const ScoreMap& map) {
  std::vector<int> levels;
  for (float v : map.values) levels.push_back(level(v));
  __int128 best_num = 0, best_den = 1;
  int best = -1;
  for (int k = 0; k < 255; ++k) {
    __int128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int q : levels) {
      if (q <= k) {
        ++n0;
        s0 += q;
      } else {
        ++n1;
        s1 += q;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const __int128 d = s0 * n1 - s1 * n0;
    if (d == 0) continue;
    const __int128 num = d * d;
    const __int128 den = n0 * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best_num = num;
      best_den = den;
      best = k;
    }
  }
  return best < 0 ? 1.0 : (best + 0.5) / 255.0;
}

// Square structuring element of odd side s, pixels outside the image are background.
inline bool inside(const BinaryMask& m, int y, int x) { return y >= 0 && x >= 0 && y < m.height() && x < m.width(); }

inline BinaryMask erode(const BinaryMask& m, int s) {
  BinaryMask out(m.height(), m.width());
  const int r = s / 2;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      bool all = true;
      for (int dy = -r; dy <= r && all; ++dy)
        for (int dx = -r; dx <= r && all; ++dx) all = inside(m, y + dy, x + dx) && m(y + dy, x + dx);
      out.set(static_cast<std::size_t>(y) * m.width() + x, all);
    }
  return out;
}

inline BinaryMask dilate(const BinaryMask& m, int s) {
  BinaryMask out(m.height(), m.width());
  const int r = s / 2;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      bool any = false;
      for (int dy = -r; dy <= r && !any; ++dy)
        for (int dx = -r; dx <= r && !any; ++dx) any = inside(m, y + dy, x + dx) && m(y + dy, x + dx);
      out.set(static_cast<std::size_t>(y) * m.width() + x, any);
    }
  return out;
}

// Union of every SE placement that fits inside the set.
inline BinaryMask opening(const BinaryMask& m, int s) {
  BinaryMask out(m.height(), m.width());
  const int r = s / 2;
  for (int cy = 0; cy < m.height(); ++cy)
    for (int cx = 0; cx < m.width(); ++cx) {
      bool fits = true;
      for (int dy = -r; dy <= r && fits; ++dy)
        for (int dx = -r; dx <= r && fits; ++dx) fits = inside(m, cy + dy, cx + dx) && m(cy + dy, cx + dx);
      if (!fits) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) out.set(static_cast<std::size_t>(cy + dy) * m.width() + cx + dx, true);
    }
  return out;
}

inline pseudoseg::Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
  pseudoseg::Confusion c;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      const bool p = pred(y, x), g = gt(y, x);
      c.tp += p && g;
      c.tn += !p && !g;
      c.fp += p && !g;
      c.fn += !p && g;
    }
  return c;
}

// Midpoint-free trapezoid rule written as a sum of rectangles plus triangles.
inline double trapezoid(const std::vector<std::pair<double, double>>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double w = pts[i].first - pts[i - 1].first;
    const double lo = std::min(pts[i].second, pts[i - 1].second);
    const double hi = std::max(pts[i].second, pts[i - 1].second);
    area += w * lo + 0.5 * w * (hi - lo);
  }
  return area;
}

// Direct bilinear sample with pixel-centre alignment and edge clamping.
inline double bilinear(const ScoreMap& m, int th, int tw, int y, int x) {
  const double sy = std::clamp((y + 0.5) * m.height / th - 0.5, 0.0, m.height - 1.0);
  const double sx = std::clamp((x + 0.5) * m.width / tw - 0.5, 0.0, m.width - 1.0);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, m.height - 1), x1 = std::min(x0 + 1, m.width - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int yy, int xx) { return static_cast<double>(m.values[static_cast<std::size_t>(yy) * m.width + xx]); };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// Direct 'same' convolution, weight (out, in, k, k).
inline pseudoseg::Tensor conv2d(const pseudoseg::Tensor& x, const std::vector<float>& w, const std::vector<float>& b,
                                int out_channels, int k) {
  pseudoseg::Tensor y(out_channels, x.height, x.width);
  const int r = k / 2;
  for (int o = 0; o < out_channels; ++o)
    for (int yy = 0; yy < x.height; ++yy)
      for (int xx = 0; xx < x.width; ++xx) {
        double acc = b[o];
        for (int i = 0; i < x.channels; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = yy + ky - r, sx = xx + kx - r;
              if (sy < 0 || sx < 0 || sy >= x.height || sx >= x.width) continue;
              acc += static_cast<double>(w[((static_cast<std::size_t>(o) * x.channels + i) * k + ky) * k + kx]) *
                     x.at(i, sy, sx);
            }
        y.at(o, yy, xx) = static_cast<float>(acc);
      }
  return y;
}

// Transpose convolution by scattering each input pixel: out(2y-1+ky, 2x-1+kx) += w * in(y, x);
// weight (in, out, 3, 3), output 2H x 2W.
inline pseudoseg::Tensor conv_transpose(const pseudoseg::Tensor& x, const std::vector<float>& w,
                                        const std::vector<float>& b, int out_channels) {
  pseudoseg::Tensor y(out_channels, 2 * x.height, 2 * x.width);
  for (int o = 0; o < out_channels; ++o)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) y.at(o, yy, xx) = b[o];
  for (int i = 0; i < x.channels; ++i)
    for (int sy = 0; sy < x.height; ++sy)
      for (int sx = 0; sx < x.width; ++sx)
        for (int o = 0; o < out_channels; ++o)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int ty = 2 * sy - 1 + ky, tx = 2 * sx - 1 + kx;
              if (ty < 0 || tx < 0 || ty >= y.height || tx >= y.width) continue;
              y.at(o, ty, tx) += w[((static_cast<std::size_t>(i) * out_channels + o) * 3 + ky) * 3 + kx] * x.at(i, sy, sx);
            }
  return y;
}

// Central difference of f with respect to *p.
inline double central_difference(const std::function<double()>& f, float* p, double eps) {
  const float saved = *p;
  *p = static_cast<float>(saved + eps);
  const double up = f();
  *p = static_cast<float>(saved - eps);
  const double down = f();
  *p = saved;
  return (up - down) / (2.0 * eps);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

inline ScoreMap random_map(pseudoseg::Rng& rng, int h, int w) {
  ScoreMap m;
  m.height = h;
  m.width = w;
  m.values.resize(static_cast<std::size_t>(h) * w);
  const int kind = static_cast<int>(rng.uniform_int(0, 3));
  const double a = rng.uniform(), b = rng.uniform();
  for (float& v : m.values) {
    switch (kind) {
      case 0: v = static_cast<float>(rng.uniform()); break;
      case 1: v = static_cast<float>(rng.uniform_int(0, 255) / 255.0); break;  // exact levels, many ties
      case 2: v = static_cast<float>(rng.bernoulli(0.3) ? a : b); break;       // two values
      default: v = static_cast<float>(std::pow(rng.uniform(), 3.0)); break;    // skewed
    }
  }
  return m;
}

inline BinaryMask random_mask(pseudoseg::Rng& rng, int h, int w) {
  BinaryMask m(h, w);
  const double p = rng.uniform(0.2, 0.8);
  // Blobby masks: random rectangles over noise.
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.bernoulli(p * 0.3));
  const int rects = static_cast<int>(rng.uniform_int(1, 6));
  for (int r = 0; r < rects; ++r) {
    const int y0 = static_cast<int>(rng.uniform_int(0, h - 1)), x0 = static_cast<int>(rng.uniform_int(0, w - 1));
    const int rh = static_cast<int>(rng.uniform_int(1, h / 2)), rw = static_cast<int>(rng.uniform_int(1, w / 2));
    for (int y = y0; y < std::min(h, y0 + rh); ++y)
      for (int x = x0; x < std::min(w, x0 + rw); ++x) m.set(static_cast<std::size_t>(y) * w + x, true);
  }
  return m;
}

}  // namespace oracle
