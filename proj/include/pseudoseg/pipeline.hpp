#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/classifier.hpp"
#include "pseudoseg/config.hpp"
#include "pseudoseg/metrics.hpp"

namespace pseudoseg {

// Environment variable that overrides the artifact root.
inline constexpr const char* kArtifactRootEnv = "PSEUDOSEG_ARTIFACT_ROOT";

enum class Variant { PsCnn, PsCnnLc, GradCam4, GradCam5 };
std::string to_string(Variant v);
std::optional<Variant> parse_variant(const std::string& text);
bool uses_mapper(Variant v);

// Explicit root wins, then the environment, then paths.artifacts.
std::filesystem::path resolve_artifact_root(const PipelineConfig& cfg,
                                            const std::optional<std::filesystem::path>& explicit_root);

struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path manifest() const { return data_dir() / "manifest.json"; }
  std::filesystem::path classifier_dir() const { return root / "classifier"; }
  std::filesystem::path classifier_ckpt() const { return classifier_dir() / "classifier.ckpt"; }
  std::filesystem::path mined() const { return root / "mine" / "mined.json"; }
  std::filesystem::path labels_root() const { return root / "pseudo"; }
  std::filesystem::path mapper_dir(Variant v) const { return root / "mapper" / to_string(v); }
  std::filesystem::path mapper_ckpt(Variant v) const { return mapper_dir(v) / "mapper.ckpt"; }
  std::filesystem::path eval_dir(Variant v) const { return root / "eval" / to_string(v); }
  std::filesystem::path infer_dir(Variant v) const { return root / "infer" / to_string(v); }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path runs_dir() const { return root / "runs"; }
};

struct StageResult {
  std::string stage;
  bool skipped = false;
  nlohmann::json summary;
};

// Mapper training settings for one train-map run.
struct MapperRun {
  int epochs_phase1 = 0;
  int epochs_phase2 = 0;
  bool correct = false;
};

// Runs stages against an artifact root. Each stage writes a run manifest
// (runs/<stage>.json) holding the config hash, seed, stage parameters and
// SHA-256 hashes of its inputs and outputs; a stage whose parameters and
// input hashes match its manifest, and whose outputs are intact, is skipped.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::filesystem::path root);

  const PipelineConfig& config() const { return cfg_; }
  const ArtifactLayout& layout() const { return layout_; }
  void set_force(bool force) { force_ = force; }

  StageResult synth();
  StageResult train_classifier();
  StageResult mine();
  StageResult pseudo();
  // Writes mapper/ps-cnnlc when run.correct, mapper/ps-cnn otherwise. A
  // corrected run continues from the ps-cnn checkpoint when that holds the
  // same phase-1 training.
  StageResult train_mapper(const MapperRun& run);
  StageResult train_mapper(Variant v);
  StageResult evaluate(Variant v, std::optional<Aggregation> aggregation = std::nullopt);
  StageResult infer(Variant v);
  StageResult report();

  // Every stage in order for one variant.
  std::vector<StageResult> run(Variant v);
  // Every variant, sharing the upstream stages.
  std::vector<StageResult> run_all();

  // Prediction function of a finished variant (mapper f0 or normalised GradCAM map).
  Predictor predictor(Variant v) const;

 private:
  struct Stage;
  StageResult execute(Stage& stage);

  PipelineConfig cfg_;
  ArtifactLayout layout_;
  bool force_ = false;
};

struct InferSummary {
  std::size_t tiles = 0;
  std::size_t overlays = 0;
};

// Per tile: <id>_map.png, <id>_mask.png and, when the tile has a reference
// mask, <id>_overlay.png (TP yellow, TN black, FP green, FN red).
InferSummary infer_tiles(const Predictor& predict, const std::vector<Tile>& tiles, const std::filesystem::path& out_dir);
Image8 overlay(const BinaryMask& pred, const BinaryMask& ref);

// A tile PNG, a directory of tile PNGs or a manifest. Reference masks come
// from `masks_dir/<id>.png` (default: a sibling masks/ directory) when present.
std::vector<Tile> load_tiles_from_path(const std::filesystem::path& path,
                                       const std::optional<std::filesystem::path>& masks_dir);

// SHA-256 over the sorted (relative path, file hash) list of a file or directory tree.
std::string content_hash(const std::filesystem::path& path);

}  // namespace pseudoseg
