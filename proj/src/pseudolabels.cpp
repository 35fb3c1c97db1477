#include "pseudoseg/pseudolabels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "pseudoseg/attribution.hpp"
#include "pseudoseg/errors.hpp"
#include "pseudoseg/png_io.hpp"

namespace pseudoseg {
namespace fs = std::filesystem;
using nlohmann::json;

int otsu_level(float value) {
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
  int q = std::clamp(static_cast<int>(std::ceil(v * 255.0 - 0.5)), 0, 255);
  while (q > 0 && !(v > otsu_level_threshold(q - 1))) --q;
  while (q < 255 && v > otsu_level_threshold(q)) ++q;
  return q;
}

double otsu_level_threshold(int k) { return k >= 255 ? 1.0 : (k + 0.5) / 255.0; }

double otsu_threshold(const ScoreMap& map) {
  if (map.values.empty()) throw Error(ErrorCode::EmptyMap, "otsu_threshold on an empty map");
  std::array<std::uint64_t, kOtsuBins> hist{};
  for (float v : map.values) ++hist[otsu_level(v)];

  // Between-class variance is proportional to (N*S0 - n0*S)^2 / (n0*n1), with
  // S the level sum; compared exactly in 128-bit integers.
  using u128 = unsigned __int128;
  const std::uint64_t total = map.values.size();
  std::uint64_t level_sum = 0;
  for (int k = 0; k < kOtsuBins; ++k) level_sum += hist[k] * static_cast<std::uint64_t>(k);

  const bool exact = total <= (1u << 18);
  u128 best_num = 0, best_den = 1;
  long double best_score = 0.0L;
  int best_k = -1;
  std::uint64_t n0 = 0, s0 = 0;
  for (int k = 0; k < kOtsuBins; ++k) {
    n0 += hist[k];
    s0 += hist[k] * static_cast<std::uint64_t>(k);
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const auto a = static_cast<__int128>(total) * s0;
    const auto b = static_cast<__int128>(n0) * level_sum;
    const u128 diff = static_cast<u128>(a > b ? a - b : b - a);
    if (diff == 0) continue;
    if (exact) {
      const u128 num = diff * diff;
      const u128 den = static_cast<u128>(n0) * n1;
      if (best_k < 0 || num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best_k = k;
      }
    } else {
      const long double d = static_cast<long double>(diff);
      const long double score = d * d / (static_cast<long double>(n0) * static_cast<long double>(n1));
      if (best_k < 0 || score > best_score) {
        best_score = score;
        best_k = k;
      }
    }
  }
  return best_k < 0 ? 1.0 : otsu_level_threshold(best_k);
}

BinaryMask binarize(const ScoreMap& map, double t) {
  BinaryMask mask(map.height, map.width);
  for (std::size_t i = 0; i < map.size(); ++i) mask.set(i, map.values[i] > t);
  return mask;
}

std::vector<std::string> mine_positives(const std::vector<std::pair<std::string, double>>& probabilities, double tau) {
  std::vector<std::string> out;
  for (const auto& [id, p] : probabilities)
    if (p >= tau) out.push_back(id);
  return out;
}

std::vector<std::string> mine_positives(const ClassifierModel& model, const std::vector<Tile>& unlabeled, double tau) {
  std::vector<std::pair<std::string, double>> probabilities;
  probabilities.reserve(unlabeled.size());
  for (const Tile& t : unlabeled) probabilities.emplace_back(t.id, classifier_forward(model, t).positive);
  return mine_positives(probabilities, tau);
}

std::string to_string(Provenance p) { return p == Provenance::Mined ? "mined" : "original_positive"; }

void LabelStore::insert(LabelRecord record) {
  const std::string id = record.tile_id();
  records_.insert_or_assign(id, std::move(record));
}

const LabelRecord& LabelStore::at(const std::string& id) const {
  const auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::MissingRecord, id);
  return it->second;
}

LabelRecord& LabelStore::at(const std::string& id) {
  const auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::MissingRecord, id);
  return it->second;
}

void save_label_store(const LabelStore& store, const fs::path& root) {
  const fs::path staging_current = root / "labels.staging";
  const fs::path staging_init = root / "labels_init.staging";
  fs::remove_all(staging_current);
  fs::remove_all(staging_init);
  fs::create_directories(staging_current);
  fs::create_directories(staging_init);

  json records = json::array();
  for (const auto& [id, rec] : store.records()) {
    write_png(staging_current / (id + ".png"), mask_to_image8(rec.gt_current));
    write_png(staging_init / (id + ".png"), mask_to_image8(rec.gt0()));
    records.push_back({{"id", id},
                       {"provenance", to_string(rec.provenance())},
                       {"prev_fore", rec.prev_fore ? json(*rec.prev_fore) : json(nullptr)}});
  }
  {
    std::ofstream out(staging_current / "index.json");
    out << json{{"format", "pseudoseg-labels/1"}, {"records", records}}.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoError, "cannot write label index");
  }
  fs::remove_all(root / "labels");
  fs::remove_all(root / "labels_init");
  fs::rename(staging_current, root / "labels");
  fs::rename(staging_init, root / "labels_init");
}

LabelStore load_label_store(const fs::path& root) {
  const fs::path index_path = root / "labels" / "index.json";
  std::ifstream in(index_path);
  if (!in) throw Error(ErrorCode::MissingFile, index_path.string());
  LabelStore store;
  try {
    const json doc = json::parse(in);
    for (const json& r : doc.at("records")) {
      const std::string id = r.at("id").get<std::string>();
      const Provenance prov = r.at("provenance").get<std::string>() == "mined" ? Provenance::Mined
                                                                               : Provenance::OriginalPositive;
      LabelRecord rec(id, image8_to_mask(read_png(root / "labels_init" / (id + ".png"))), prov);
      rec.gt_current = image8_to_mask(read_png(root / "labels" / (id + ".png")));
      if (!r.at("prev_fore").is_null()) rec.prev_fore = r.at("prev_fore").get<std::size_t>();
      store.insert(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedManifest, index_path.string() + ": " + e.what());
  }
  return store;
}

BinaryMask initial_pseudo_label(const ClassifierModel& model, const Tile& tile, const std::string& layer,
                                ClassId class_id) {
  const ActivationMap map = gradcam(model, tile, layer, class_id);
  const ScoreMap full = upsample_map(map, tile.height(), tile.width());
  return otsu_binarize(full);
}

LabelStore build_initial_labels(const ClassifierModel& model, const std::vector<LabelSource>& positives,
                                const std::string& layer, ClassId class_id) {
  LabelStore store;
  for (const LabelSource& src : positives)
    store.insert(LabelRecord(src.tile->id, initial_pseudo_label(model, *src.tile, layer, class_id), src.provenance));
  return store;
}

}  // namespace pseudoseg
