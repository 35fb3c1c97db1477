#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pseudoseg/classifier.hpp"
#include "pseudoseg/image.hpp"
#include "pseudoseg/tiles.hpp"

namespace pseudoseg {

inline constexpr int kOtsuBins = 256;

// Quantisation level 0..255 of a value in [0, 1], defined so that
// level(v) > k  <=>  v > (k + 0.5) / 255.
int otsu_level(float value);
// Threshold value separating levels <= k from levels > k.
double otsu_level_threshold(int k);

// Otsu's threshold over a 256-level histogram. Ties go to the lowest level;
// maps with no separable split (e.g. constant) return 1.0. Throws EmptyMap.
double otsu_threshold(const ScoreMap& map);

// bit = value > t
BinaryMask binarize(const ScoreMap& map, double t);
inline BinaryMask otsu_binarize(const ScoreMap& map) { return binarize(map, otsu_threshold(map)); }

// Ids of tiles whose positive probability is >= tau, in input order.
std::vector<std::string> mine_positives(const ClassifierModel& model, const std::vector<Tile>& unlabeled, double tau);
std::vector<std::string> mine_positives(const std::vector<std::pair<std::string, double>>& positive_probabilities,
                                        double tau);

enum class Provenance { OriginalPositive, Mined };
std::string to_string(Provenance p);

// Label state of one training tile. The initial label is fixed at creation.
class LabelRecord {
 public:
  LabelRecord() = default;
  LabelRecord(std::string tile_id, BinaryMask initial, Provenance provenance)
      : gt_current(initial), tile_id_(std::move(tile_id)), gt0_(std::move(initial)), provenance_(provenance) {}

  const std::string& tile_id() const { return tile_id_; }
  const BinaryMask& gt0() const { return gt0_; }
  Provenance provenance() const { return provenance_; }

  BinaryMask gt_current;
  std::optional<std::size_t> prev_fore;  // foreground count of the last accepted output

 private:
  std::string tile_id_;
  BinaryMask gt0_;
  Provenance provenance_ = Provenance::OriginalPositive;
};

class LabelStore {
 public:
  void insert(LabelRecord record);
  bool contains(const std::string& id) const { return records_.count(id) > 0; }
  const LabelRecord& at(const std::string& id) const;
  LabelRecord& at(const std::string& id);
  std::size_t size() const { return records_.size(); }
  const std::map<std::string, LabelRecord>& records() const { return records_; }
  std::map<std::string, LabelRecord>& records() { return records_; }

 private:
  std::map<std::string, LabelRecord> records_;
};

// <root>/labels/<id>.png (current), <root>/labels_init/<id>.png (initial) and
// <root>/labels/index.json. The directories are replaced as a unit.
void save_label_store(const LabelStore& store, const std::filesystem::path& root);
LabelStore load_label_store(const std::filesystem::path& root);

// GT0 for one tile: Otsu-binarised, upsampled, normalised GradCAM map.
BinaryMask initial_pseudo_label(const ClassifierModel& model, const Tile& tile, const std::string& layer,
                                ClassId class_id);

struct LabelSource {
  const Tile* tile = nullptr;
  Provenance provenance = Provenance::OriginalPositive;
};

LabelStore build_initial_labels(const ClassifierModel& model, const std::vector<LabelSource>& positives,
                                const std::string& layer, ClassId class_id);

}  // namespace pseudoseg
