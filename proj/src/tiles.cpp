#include "pseudoseg/tiles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "pseudoseg/errors.hpp"
#include "pseudoseg/png_io.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ImageLabel label) {
  switch (label) {
    case ImageLabel::Positive: return "positive";
    case ImageLabel::Negative: return "negative";
    case ImageLabel::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unlabeled: return "unlabeled";
  }
  return "train";
}

std::optional<ImageLabel> parse_label(const std::string& text) {
  if (text == "positive") return ImageLabel::Positive;
  if (text == "negative") return ImageLabel::Negative;
  if (text == "unlabeled") return ImageLabel::Unlabeled;
  return std::nullopt;
}

std::optional<Split> parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  if (text == "unlabeled") return Split::Unlabeled;
  return std::nullopt;
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

std::map<Split, std::size_t> DatasetManifest::split_counts() const {
  std::map<Split, std::size_t> counts;
  for (const auto& e : entries) ++counts[e.split];
  return counts;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedManifest, path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array())
    throw Error(ErrorCode::MalformedManifest, path.string() + ": missing 'entries' array");

  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::set<std::string> seen;
  for (const json& item : doc["entries"]) {
    if (!item.is_object() || !item.contains("id") || !item.contains("image") || !item.contains("label") ||
        !item.contains("split"))
      throw Error(ErrorCode::MalformedManifest, "entry lacks id/image/label/split");
    ManifestEntry e;
    try {
      e.id = item.at("id").get<std::string>();
      e.image_path = item.at("image").get<std::string>();
      const auto label = parse_label(item.at("label").get<std::string>());
      const auto split = parse_split(item.at("split").get<std::string>());
      if (!label || !split) throw Error(ErrorCode::MalformedManifest, "entry '" + e.id + "': bad label or split");
      e.label = *label;
      e.split = *split;
      if (item.contains("mask") && !item["mask"].is_null()) e.mask_path = fs::path(item["mask"].get<std::string>());
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::MalformedManifest, std::string("entry field type: ") + ex.what());
    }
    if (e.id.empty()) throw Error(ErrorCode::MalformedManifest, "empty id");
    if (!seen.insert(e.id).second) throw Error(ErrorCode::DuplicateId, e.id);
    if (e.split != Split::Unlabeled && e.label == ImageLabel::Unlabeled)
      throw Error(ErrorCode::MalformedManifest, "entry '" + e.id + "' in a labeled split has no label");
    if (e.split == Split::Unlabeled && e.label != ImageLabel::Unlabeled)
      throw Error(ErrorCode::MalformedManifest, "entry '" + e.id + "' in the unlabeled split carries a label");
    if (!fs::exists(manifest.root / e.image_path))
      throw Error(ErrorCode::MissingFile, "entry '" + e.id + "': " + (manifest.root / e.image_path).string());
    if (e.mask_path && !fs::exists(manifest.root / *e.mask_path))
      throw Error(ErrorCode::MissingFile, "entry '" + e.id + "': " + (manifest.root / *e.mask_path).string());
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json item = {{"id", e.id},
                 {"image", e.image_path.generic_string()},
                 {"label", to_string(e.label)},
                 {"split", to_string(e.split)}};
    if (e.mask_path) item["mask"] = e.mask_path->generic_string();
    entries.push_back(std::move(item));
  }
  const json doc = {{"format", "pseudoseg-manifest/1"}, {"entries", std::move(entries)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Tile load_tile(const ManifestEntry& entry, const fs::path& root) {
  const Image8 image = read_png(root / entry.image_path);
  if (image.channels != 3) throw Error(ErrorCode::DecodeError, entry.id + ": expected 3 channels");
  Tile tile;
  tile.id = entry.id;
  tile.pixels = to_tensor(image);
  if (entry.label != ImageLabel::Unlabeled) tile.image_label = entry.label;
  if (entry.mask_path) {
    const Image8 mask = read_png(root / *entry.mask_path);
    if (mask.height != image.height || mask.width != image.width)
      throw Error(ErrorCode::ShapeMismatch, entry.id + ": mask " + std::to_string(mask.height) + "x" +
                                                std::to_string(mask.width) + " vs image " +
                                                std::to_string(image.height) + "x" + std::to_string(image.width));
    tile.ref_mask = image8_to_mask(mask);
  }
  return tile;
}

std::vector<Tile> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<Tile> tiles;
  for (const ManifestEntry* e : manifest.in_split(split)) tiles.push_back(load_tile(*e, manifest.root));
  return tiles;
}

// ---- synthetic generator ----------------------------------------------------

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::BadConfig, "synth: " + what); };
  if (n_tiles < 0 || n_unlabeled < 0 || n_test < 0) bad("negative tile count");
  if (tile_size < 32) bad("tile_size must be >= 32");
  if (panel_count_range[0] < 1 || panel_count_range[1] > 200 || panel_count_range[0] > panel_count_range[1])
    bad("panel_count_range must lie within [1, 200]");
  if (panel_cell_size < 2) bad("panel_cell_size must be >= 2");
  if (rooftop_per_tile[0] < 1 || rooftop_per_tile[0] > rooftop_per_tile[1]) bad("rooftop_per_tile range");
  if (background_noise < 0.0 || background_noise > 1.0) bad("background_noise must be in [0,1]");
  for (double f : {positive_fraction, unlabeled_positive_fraction, test_positive_fraction})
    if (f < 0.0 || f > 1.0) bad("fractions must be in [0,1]");
}

namespace {

struct Rgb {
  double r, g, b;
};

struct Rect {
  int x, y, w, h;
  bool overlaps(const Rect& o, int gap) const {
    return x < o.x + o.w + gap && o.x < x + w + gap && y < o.y + o.h + gap && o.y < y + h + gap;
  }
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + index * 0x94D049BB133111EBULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), pixels_(3, size, size) {}

  void fill(const Rect& r, Rgb c) {
    for (int y = std::max(0, r.y); y < std::min(size_, r.y + r.h); ++y)
      for (int x = std::max(0, r.x); x < std::min(size_, r.x + r.w); ++x) put(y, x, c);
  }
  void disc(double cx, double cy, double radius, Rgb c) {
    for (int y = std::max(0, static_cast<int>(cy - radius)); y <= std::min(size_ - 1, static_cast<int>(cy + radius)); ++y)
      for (int x = std::max(0, static_cast<int>(cx - radius)); x <= std::min(size_ - 1, static_cast<int>(cx + radius)); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) put(y, x, c);
  }
  void put(int y, int x, Rgb c) {
    pixels_.at(0, y, x) = static_cast<float>(c.r);
    pixels_.at(1, y, x) = static_cast<float>(c.g);
    pixels_.at(2, y, x) = static_cast<float>(c.b);
  }
  void add_noise(Rng& rng, double stddev) {
    if (stddev <= 0.0) return;
    for (float& v : pixels_.data) v = static_cast<float>(v + rng.normal(0.0, stddev));
  }
  Tensor finish() {
    for (float& v : pixels_.data) v = std::clamp(v, 0.0f, 1.0f);
    return std::move(pixels_);
  }

 private:
  int size_;
  Tensor pixels_;
};

Rgb jitter(Rng& rng, Rgb c, double amount) {
  const double d = rng.uniform(-amount, amount);
  return {std::clamp(c.r + d + rng.uniform(-amount, amount) * 0.3, 0.0, 1.0),
          std::clamp(c.g + d + rng.uniform(-amount, amount) * 0.3, 0.0, 1.0),
          std::clamp(c.b + d + rng.uniform(-amount, amount) * 0.3, 0.0, 1.0)};
}

constexpr Rgb kPanel{0.15, 0.18, 0.30};
constexpr Rgb kPanelFrame{0.52, 0.55, 0.62};

// Largest panel array (rows x cols) that fits inside a roof with a margin.
struct ArrayFit {
  int rows, cols;
};

ArrayFit fit_in(const Rect& roof, int cell, int margin) {
  return {std::max(0, (roof.h - 2 * margin) / cell), std::max(0, (roof.w - 2 * margin) / cell)};
}

}  // namespace

Tile synth_tile(const SynthConfig& cfg, const std::string& id, bool positive, std::uint64_t tile_seed) {
  Rng rng(tile_seed);
  const int size = cfg.tile_size;
  const double scale = size / 256.0;
  const int cell = cfg.panel_cell_size;
  const int margin = std::max(1, static_cast<int>(std::lround(3 * scale)));
  Canvas canvas(size);
  BinaryMask mask(size, size);

  // Ground cover.
  static constexpr std::array<Rgb, 3> kGround{Rgb{0.33, 0.42, 0.25}, Rgb{0.52, 0.49, 0.37}, Rgb{0.42, 0.45, 0.33}};
  const Rgb ground = jitter(rng, kGround[rng.uniform_int(0, 2)], 0.04);
  canvas.fill({0, 0, size, size}, ground);
  const int patches = static_cast<int>(rng.uniform_int(2, 5));
  for (int i = 0; i < patches; ++i)
    canvas.disc(rng.uniform(0, size), rng.uniform(0, size), rng.uniform(20, 60) * scale, jitter(rng, ground, 0.06));
  if (rng.bernoulli(0.6)) {
    const int road_w = static_cast<int>(rng.uniform(10, 18) * scale);
    const int pos = static_cast<int>(rng.uniform(0, size - road_w));
    const Rgb asphalt = jitter(rng, {0.44, 0.44, 0.45}, 0.04);
    if (rng.bernoulli(0.5))
      canvas.fill({0, pos, size, road_w}, asphalt);
    else
      canvas.fill({pos, 0, road_w, size}, asphalt);
  }

  // Rooftops: non-overlapping lighter rectangles, each big enough to hold the
  // minimum panel array.
  const int min_side_for_panels = static_cast<int>(std::ceil(std::sqrt(cfg.panel_count_range[0]))) * cell + 2 * margin;
  const int roof_lo = std::max(static_cast<int>(0.22 * size), min_side_for_panels);
  const int roof_hi = std::max(roof_lo, static_cast<int>(0.40 * size));
  const int n_roofs = static_cast<int>(rng.uniform_int(cfg.rooftop_per_tile[0], cfg.rooftop_per_tile[1]));
  std::vector<Rect> roofs;
  for (int attempt = 0; attempt < 400 && static_cast<int>(roofs.size()) < n_roofs; ++attempt) {
    const int w = static_cast<int>(rng.uniform_int(roof_lo, roof_hi));
    const int h = static_cast<int>(rng.uniform_int(roof_lo, roof_hi));
    if (w >= size || h >= size) continue;
    const Rect r{static_cast<int>(rng.uniform_int(0, size - w)), static_cast<int>(rng.uniform_int(0, size - h)), w, h};
    bool clear = true;
    for (const Rect& o : roofs) clear = clear && !r.overlaps(o, 3);
    if (clear) roofs.push_back(r);
  }
  if (roofs.empty()) {
    const int side = std::min(size - 2, roof_lo);
    roofs.push_back({(size - side) / 2, (size - side) / 2, side, side});
  }

  static constexpr std::array<Rgb, 4> kRoof{Rgb{0.64, 0.38, 0.29}, Rgb{0.72, 0.72, 0.70}, Rgb{0.80, 0.74, 0.62},
                                           Rgb{0.60, 0.58, 0.55}};
  // Trees scattered off the roofs.
  const int trees = static_cast<int>(rng.uniform_int(0, 6));
  for (int i = 0; i < trees; ++i)
    canvas.disc(rng.uniform(0, size), rng.uniform(0, size), rng.uniform(4, 11) * scale,
                jitter(rng, {0.16, 0.27, 0.13}, 0.03));

  for (const Rect& roof : roofs) {
    const Rgb base = jitter(rng, kRoof[rng.uniform_int(0, 3)], 0.04);
    canvas.fill(roof, base);
    // Gable: one half slightly darker.
    const Rgb shade{base.r * 0.9, base.g * 0.9, base.b * 0.9};
    if (roof.w >= roof.h)
      canvas.fill({roof.x, roof.y + roof.h / 2, roof.w, roof.h - roof.h / 2}, shade);
    else
      canvas.fill({roof.x + roof.w / 2, roof.y, roof.w - roof.w / 2, roof.h}, shade);
  }

  // Panel arrays: always on the first roof of a positive tile, on each further
  // roof with probability one half. At most one array per roof.
  std::vector<bool> has_panels(roofs.size(), false);
  if (positive) {
    for (std::size_t k = 0; k < roofs.size(); ++k) {
      if (k > 0 && !rng.bernoulli(0.5)) continue;
      const Rect& roof = roofs[k];
      const ArrayFit fit = fit_in(roof, cell, margin);
      const int capacity = fit.rows * fit.cols;
      if (capacity < cfg.panel_count_range[0]) continue;
      int n = static_cast<int>(rng.uniform_int(cfg.panel_count_range[0], cfg.panel_count_range[1]));
      n = std::min(n, capacity);
      int cols = std::clamp(static_cast<int>(std::lround(std::sqrt(n * rng.uniform(0.8, 2.5)))), 1, fit.cols);
      int rows = (n + cols - 1) / cols;
      if (rows > fit.rows) {
        rows = fit.rows;
        cols = std::min(fit.cols, (n + rows - 1) / rows);
      }
      n = std::min(n, rows * cols);
      const int ox = roof.x + margin + static_cast<int>(rng.uniform_int(0, (fit.cols - cols) * cell));
      const int oy = roof.y + margin + static_cast<int>(rng.uniform_int(0, (fit.rows - rows) * cell));
      for (int i = 0; i < n; ++i) {
        const int cx = ox + (i % cols) * cell;
        const int cy = oy + (i / cols) * cell;
        const Rgb body = jitter(rng, kPanel, 0.02);
        canvas.fill({cx, cy, cell, cell}, body);
        canvas.fill({cx, cy, cell, 1}, kPanelFrame);
        canvas.fill({cx, cy, 1, cell}, kPanelFrame);
        for (int y = cy; y < cy + cell; ++y)
          for (int x = cx; x < cx + cell; ++x) mask.set(y, x, true);
      }
      has_panels[k] = true;
    }
    if (std::none_of(has_panels.begin(), has_panels.end(), [](bool b) { return b; }))
      throw Error(ErrorCode::BadConfig, "synth: no roof can hold the minimum panel array; raise tile_size");
  }

  // Distractors: dark water or shadow rectangles with no grid texture, on the
  // ground or on roofs without panels.
  const int distractors = rng.bernoulli(0.75) ? static_cast<int>(rng.uniform_int(1, 2)) : 0;
  for (int i = 0; i < distractors; ++i) {
    const int w = static_cast<int>(rng.uniform(10, 34) * scale) + 2;
    const int h = static_cast<int>(rng.uniform(8, 26) * scale) + 2;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const Rect r{static_cast<int>(rng.uniform_int(0, size - w)), static_cast<int>(rng.uniform_int(0, size - h)), w, h};
      bool clear = true;
      for (std::size_t k = 0; k < roofs.size(); ++k)
        if (has_panels[k] && r.overlaps(roofs[k], 1)) clear = false;
      if (!clear) continue;
      const Rgb dark = rng.bernoulli(0.5) ? jitter(rng, {0.12, 0.17, 0.30}, 0.03) : jitter(rng, {0.14, 0.15, 0.18}, 0.03);
      canvas.fill(r, dark);
      break;
    }
  }

  canvas.add_noise(rng, cfg.background_noise);
  Tile tile;
  tile.id = id;
  tile.pixels = canvas.finish();
  tile.image_label = positive ? ImageLabel::Positive : ImageLabel::Negative;
  tile.ref_mask = std::move(mask);
  return tile;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.root = out_dir;

  struct Pool {
    const char* prefix;
    int count;
    double positive_fraction;
    Split split;
    bool labeled;
  };
  const std::array<Pool, 3> pools{Pool{"tile", cfg.n_tiles, cfg.positive_fraction, Split::Train, true},
                                  Pool{"unl", cfg.n_unlabeled, cfg.unlabeled_positive_fraction, Split::Unlabeled, false},
                                  Pool{"test", cfg.n_test, cfg.test_positive_fraction, Split::Test, true}};
  for (std::size_t p = 0; p < pools.size(); ++p) {
    const Pool& pool = pools[p];
    // Exact positive count, positions shuffled.
    const int n_pos = static_cast<int>(std::lround(pool.positive_fraction * pool.count));
    std::vector<bool> positive(pool.count, false);
    std::fill(positive.begin(), positive.begin() + n_pos, true);
    Rng order(mix_seed(cfg.seed, 100 + p, 0));
    order.shuffle(positive.begin(), positive.end());

    for (int i = 0; i < pool.count; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", pool.prefix, i);
      const Tile tile = synth_tile(cfg, id, positive[i], mix_seed(cfg.seed, p, static_cast<std::uint64_t>(i)));
      ManifestEntry e;
      e.id = id;
      e.image_path = fs::path("images") / (e.id + ".png");
      e.mask_path = fs::path("masks") / (e.id + ".png");
      e.label = pool.labeled ? *tile.image_label : ImageLabel::Unlabeled;
      e.split = pool.split;
      write_png(out_dir / e.image_path, to_image8(tile.pixels));
      write_png(out_dir / *e.mask_path, mask_to_image8(*tile.ref_mask));
      manifest.entries.push_back(std::move(e));
    }
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitFractions& f, std::uint64_t seed) {
  for (double v : {f.train, f.val, f.test})
    if (v < 0.0 || v > 1.0) throw Error(ErrorCode::BadFractions, "fractions must lie in [0,1]");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw Error(ErrorCode::BadFractions, "fractions must sum to 1");

  DatasetManifest out = manifest;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    const auto& e = out.entries[i];
    if (e.label != ImageLabel::Unlabeled && (e.split == Split::Train || e.split == Split::Val)) pool.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(pool.begin(), pool.end());
  const auto n = static_cast<double>(pool.size());
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  const auto n_val = std::min(pool.size() - n_train, static_cast<std::size_t>(std::llround(f.val * n)));
  for (std::size_t k = 0; k < pool.size(); ++k) {
    Split s = Split::Test;
    if (k < n_train)
      s = Split::Train;
    else if (k < n_train + n_val)
      s = Split::Val;
    out.entries[pool[k]].split = s;
  }
  return out;
}

}  // namespace pseudoseg
