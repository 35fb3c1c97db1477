#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "pseudoseg/classifier.hpp"
#include "pseudoseg/correction.hpp"
#include "pseudoseg/mapper.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/tiles.hpp"

namespace pseudoseg {

struct DataSection {
  SynthConfig synth;
  SplitFractions split{0.9, 0.1, 0.0};
};

struct AttributionSection {
  std::string layer = "conv4_3";
  ClassId class_id = ClassId::Positive;
};

struct PseudolabelSection {
  double tau = 0.5;
  bool include_labeled_positives = true;
};

struct CorrectionSection {
  bool enabled = true;
  CorrectionParams params;
};

struct EvalSection {
  Aggregation aggregation = Aggregation::Global;
  int thresholds = 256;
};

struct PathsSection {
  std::filesystem::path artifacts = "artifacts";
};

// One file drives every stage. Per-stage seeds are derived from `seed`.
struct PipelineConfig {
  std::uint64_t seed = 0;
  DataSection data;
  ClassifierConfig classifier;
  AttributionSection attribution;
  PseudolabelSection pseudolabels;
  MapperConfig mapper;
  CorrectionSection correction;
  EvalSection eval;
  PathsSection paths;

  // Throws BadConfig.
  void validate() const;
  // Pushes the top-level seed into the per-stage configs.
  void derive_seeds();
  nlohmann::json to_json() const;
  // SHA-256 of the canonical JSON form, without the artifact paths.
  std::string hash() const;
};

// TOML text. Unknown sections or keys and wrongly typed values throw BadConfig.
PipelineConfig parse_config(std::string_view text, std::string_view source = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

// A file holding a [correction] table (or its keys at top level).
CorrectionParams load_correction_params(const std::filesystem::path& path);

}  // namespace pseudoseg
