#pragma once

#include <filesystem>

#include "pseudoseg/image.hpp"

namespace pseudoseg {

// Decodes an 8-bit PNG. Gray, gray+alpha, RGB and RGBA inputs are accepted;
// alpha is dropped. Throws Error(DecodeError) or Error(MissingFile).
Image8 read_png(const std::filesystem::path& path);

// Encodes 1- or 3-channel 8-bit data with fixed settings and no timestamp
// chunk, so identical pixels give identical bytes.
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace pseudoseg
