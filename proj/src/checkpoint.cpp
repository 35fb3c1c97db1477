#include "pseudoseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pseudoseg/errors.hpp"

namespace pseudoseg {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  std::memcpy(bytes, &v, 8);
  out.write(bytes, 8);
}

}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const fs::path& path) {
  json tensors = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    tensors[name] = {{"dtype", "float32"}, {"shape", t.shape}, {"offset", offset}};
    offset += t.values.size() * sizeof(float);
  }
  const json header = {{"format", "pseudoseg-checkpoint/1"}, {"metadata", ckpt.metadata}, {"tensors", tensors}};
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(kMagic, 8);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::CheckpointError, "cannot open " + path.string());
  char magic[8];
  std::uint64_t header_len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(ErrorCode::CheckpointError, path.string() + ": bad magic");
  if (!in.read(reinterpret_cast<char*>(&header_len), 8) || header_len > (1u << 30))
    throw Error(ErrorCode::CheckpointError, path.string() + ": bad header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw Error(ErrorCode::CheckpointError, path.string() + ": truncated header");

  ModelCheckpoint ckpt;
  json header;
  try {
    header = json::parse(text);
    ckpt.metadata = header.value("metadata", json::object());
    const auto payload_start = in.tellg();
    for (const auto& [name, desc] : header.at("tensors").items()) {
      if (desc.at("dtype").get<std::string>() != "float32")
        throw Error(ErrorCode::CheckpointError, name + ": unsupported dtype");
      NamedTensor t;
      t.shape = desc.at("shape").get<std::vector<int>>();
      std::size_t count = 1;
      for (int d : t.shape) count *= static_cast<std::size_t>(d);
      t.values.resize(count);
      in.seekg(payload_start + static_cast<std::streamoff>(desc.at("offset").get<std::uint64_t>()));
      if (!in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(float))))
        throw Error(ErrorCode::CheckpointError, path.string() + ": truncated tensor " + name);
      ckpt.tensors.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointError, path.string() + ": " + e.what());
  }
  return ckpt;
}

std::map<std::string, NamedTensor> snapshot(std::span<const nn::Param* const> params) {
  std::map<std::string, NamedTensor> out;
  for (const nn::Param* p : params) out[p->name] = NamedTensor{p->shape, p->value};
  return out;
}

void restore(std::span<nn::Param* const> params, const std::map<std::string, NamedTensor>& tensors) {
  for (nn::Param* p : params) {
    const auto it = tensors.find(p->name);
    if (it == tensors.end()) throw Error(ErrorCode::ImportShapeMismatch, "missing tensor " + p->name);
    if (it->second.shape != p->shape || it->second.values.size() != p->value.size())
      throw Error(ErrorCode::ImportShapeMismatch, "shape mismatch for " + p->name);
  }
  for (nn::Param* p : params) p->value = tensors.at(p->name).values;
}

}  // namespace pseudoseg
