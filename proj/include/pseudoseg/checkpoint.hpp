#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "pseudoseg/nn.hpp"

namespace pseudoseg {

struct NamedTensor {
  std::vector<int> shape;
  std::vector<float> values;
};

// Weights of either network plus training metadata. On disk:
//   8 bytes   magic "PSEGCKPT"
//   8 bytes   header length L (uint64, little endian)
//   L bytes   JSON header {"format", "metadata", "tensors": {name: {dtype, shape, offset}}}
//   payload   float32 little-endian tensors; offset is relative to the payload start
// See docs/formats.md.
struct ModelCheckpoint {
  std::map<std::string, NamedTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

std::map<std::string, NamedTensor> snapshot(std::span<const nn::Param* const> params);
// Copies archive tensors into params. Throws ImportShapeMismatch when a tensor
// is missing or its shape differs.
void restore(std::span<nn::Param* const> params, const std::map<std::string, NamedTensor>& tensors);

}  // namespace pseudoseg
