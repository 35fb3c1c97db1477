#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pseudoseg/image.hpp"
#include "pseudoseg/tensor.hpp"

namespace pseudoseg {

enum class ImageLabel { Positive, Negative, Unlabeled };
enum class Split { Train, Val, Test, Unlabeled };

std::string to_string(ImageLabel label);
std::string to_string(Split split);
std::optional<ImageLabel> parse_label(const std::string& text);
std::optional<Split> parse_split(const std::string& text);

struct Tile {
  std::string id;
  Tensor pixels;  // (3, H, W), values in [0, 1]
  std::optional<ImageLabel> image_label;
  std::optional<BinaryMask> ref_mask;

  int height() const { return pixels.height; }
  int width() const { return pixels.width; }
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path image_path;  // relative to the manifest root
  ImageLabel label = ImageLabel::Unlabeled;
  std::optional<std::filesystem::path> mask_path;
  Split split = Split::Train;
};

// Dataset index. Paths are stored relative to `root` (the manifest's directory).
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> in_split(Split split) const;
  const ManifestEntry* find(const std::string& id) const;
  std::map<Split, std::size_t> split_counts() const;
};

// Reads and validates a manifest JSON document. Throws MissingFile (naming the
// entry id), MalformedManifest or DuplicateId.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

Tile load_tile(const ManifestEntry& entry, const std::filesystem::path& root);
inline Tile load_tile(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return load_tile(entry, manifest.root);
}
std::vector<Tile> load_split(const DatasetManifest& manifest, Split split);

struct SynthConfig {
  int n_tiles = 200;         // labeled pool
  int n_unlabeled = 0;       // pool written with label "unlabeled" (truth masks kept)
  int n_test = 0;            // held-out pool written to split "test"
  int tile_size = 256;
  std::array<int, 2> panel_count_range{5, 60};
  int panel_cell_size = 5;
  std::array<int, 2> rooftop_per_tile{1, 3};
  double background_noise = 0.03;
  double positive_fraction = 0.5;
  double unlabeled_positive_fraction = 0.5;
  double test_positive_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Renders synthetic aerial tiles with panel arrays and their reference masks
// under `out_dir` (images/<id>.png, masks/<id>.png, manifest.json).
// Identical configs produce byte-identical files.
DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// Renders a single tile in memory (used by the generator and by tests).
Tile synth_tile(const SynthConfig& cfg, const std::string& id, bool positive, std::uint64_t tile_seed);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Re-partitions the labeled pool (labeled entries currently in train or val)
// into train/val/test by the given fractions. Entries already in test and
// unlabeled entries stay where they are. Throws BadFractions.
DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& fractions,
                              std::uint64_t seed);

}  // namespace pseudoseg
