#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pseudoseg {

// Dense single-sample feature map in channel-major (C, H, W) order. Fully
// connected activations use (N, 1, 1).
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<float> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

  bool same_shape(const Tensor& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }

  std::string shape_string() const;
};

// Unfolds (C, H, W) patches into a (C*k*k, out_h*out_w) row-major matrix.
void im2col(const float* input, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, float* col);

// Adjoint of im2col: scatters and accumulates columns back into (C, H, W).
void col2im(const float* col, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, float* output);

}  // namespace pseudoseg
