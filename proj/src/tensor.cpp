#include "pseudoseg/tensor.hpp"

#include <algorithm>

namespace pseudoseg {

std::string Tensor::shape_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

void im2col(const float* input, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, float* col) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const float* src = input + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        float* dst = col + (static_cast<std::size_t>(c) * kernel * kernel + ky * kernel + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, 0.0f);
            continue;
          }
          const float* src_row = src + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(out_w, width - shift);
            std::fill(row, row + std::max(lo, 0), 0.0f);
            if (hi > lo) std::copy(src_row + lo + shift, src_row + hi + shift, row + lo);
            std::fill(row + std::max(hi, lo), row + out_w, 0.0f);
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[ox] = (ix >= 0 && ix < width) ? src_row[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, float* output) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    float* dst = output + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const float* src =
            col + (static_cast<std::size_t>(c) * kernel * kernel + ky * kernel + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const float* row = src + static_cast<std::size_t>(oy) * out_w;
          float* dst_row = dst + static_cast<std::size_t>(iy) * width;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(out_w, width - shift);
            for (int ox = lo; ox < hi; ++ox) dst_row[ox + shift] += row[ox];
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < width) dst_row[ix] += row[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace pseudoseg
