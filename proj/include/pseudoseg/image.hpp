#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pseudoseg/tensor.hpp"

namespace pseudoseg {

// H x W map over {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  bool empty() const { return bits_.empty(); }

  std::uint8_t operator()(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool on) { bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }

  bool same_shape(const BinaryMask& o) const { return height_ == o.height_ && width_ == o.width_; }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// H x W real-valued map: an activation map or a per-pixel foreground score.
struct ScoreMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  ScoreMap() = default;
  ScoreMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

std::size_t foreground_count(const BinaryMask& mask);

// 8-bit interleaved image as stored on disk.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Scales 8-bit RGB to a (3, H, W) tensor in [0, 1].
Tensor to_tensor(const Image8& image);
// Quantises a (3, H, W) tensor in [0, 1] to 8-bit RGB (round to nearest).
Image8 to_image8(const Tensor& rgb);

Image8 mask_to_image8(const BinaryMask& mask);
// Any nonzero sample becomes foreground.
BinaryMask image8_to_mask(const Image8& image);
// Grayscale render of a map already normalised to [0, 1].
Image8 score_to_image8(const ScoreMap& map);

}  // namespace pseudoseg
