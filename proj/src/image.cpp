#include "pseudoseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pseudoseg {

std::size_t foreground_count(const BinaryMask& mask) {
  const auto bits = mask.bits();
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Tensor to_tensor(const Image8& image) {
  Tensor t(3, image.height, image.width);
  const std::size_t plane = t.plane_size();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      t.data[c * plane + i] = static_cast<float>(image.pixels[i * 3 + c]) / 255.0f;
  return t;
}

Image8 to_image8(const Tensor& rgb) {
  Image8 img{rgb.height, rgb.width, 3, {}};
  const std::size_t plane = rgb.plane_size();
  img.pixels.resize(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(rgb.data[c * plane + i], 0.0f, 1.0f);
      img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return img;
}

Image8 mask_to_image8(const BinaryMask& mask) {
  Image8 img{mask.height(), mask.width(), 1, {}};
  img.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 255 : 0;
  return img;
}

BinaryMask image8_to_mask(const Image8& image) {
  BinaryMask mask(image.height, image.width);
  const std::size_t n = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t i = 0; i < n; ++i) {
    bool on = false;
    for (int c = 0; c < image.channels; ++c) on = on || image.pixels[i * image.channels + c] > 0;
    mask.set(i, on);
  }
  return mask;
}

Image8 score_to_image8(const ScoreMap& map) {
  Image8 img{map.height, map.width, 1, {}};
  img.pixels.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.values[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

}  // namespace pseudoseg
