#include "pseudoseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include "pseudoseg/attribution.hpp"
#include "pseudoseg/checkpoint.hpp"
#include "pseudoseg/errors.hpp"
#include "pseudoseg/hashing.hpp"
#include "pseudoseg/log.hpp"
#include "pseudoseg/mapper.hpp"
#include "pseudoseg/png_io.hpp"
#include "pseudoseg/pseudolabels.hpp"

namespace pseudoseg {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::PsCnn: return "ps-cnn";
    case Variant::PsCnnLc: return "ps-cnnlc";
    case Variant::GradCam4: return "gradcam4";
    case Variant::GradCam5: return "gradcam5";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(const std::string& text) {
  for (Variant v : {Variant::PsCnn, Variant::PsCnnLc, Variant::GradCam4, Variant::GradCam5})
    if (to_string(v) == text) return v;
  return std::nullopt;
}

bool uses_mapper(Variant v) { return v == Variant::PsCnn || v == Variant::PsCnnLc; }

fs::path resolve_artifact_root(const PipelineConfig& cfg, const std::optional<fs::path>& explicit_root) {
  if (explicit_root) return *explicit_root;
  if (const char* env = std::getenv(kArtifactRootEnv); env && *env) return fs::path(env);
  return cfg.paths.artifacts;
}

namespace {

void write_json(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const json& line : lines) out << line.dump() << '\n';
}

std::string rel(const fs::path& path, const fs::path& root) { return path.lexically_relative(root).generic_string(); }

std::vector<double> uniform_thresholds(int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) t[j] = static_cast<double>(j) / (n - 1);
  return t;
}

std::vector<Tile> load_ids(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  std::vector<Tile> tiles;
  tiles.reserve(ids.size());
  for (const std::string& id : ids) {
    const ManifestEntry* e = manifest.find(id);
    if (!e) throw Error(ErrorCode::MissingFile, "tile " + id + " is not in the manifest");
    tiles.push_back(load_tile(manifest, *e));
  }
  return tiles;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

json metrics_json(const EvaluationReport& r) {
  return {{"AC", r.accuracy}, {"P", r.precision}, {"R", r.recall}, {"F_theta", r.f_measure}, {"AUC", r.auc}};
}

}  // namespace

std::string content_hash(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_file(path);
  if (!fs::is_directory(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& entry : fs::recursive_directory_iterator(path))
    if (entry.is_regular_file()) files.emplace_back(rel(entry.path(), path), sha256_file(entry.path()));
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& [name, hash] : files) listing += name + '\t' + hash + '\n';
  return sha256_hex(listing);
}

Image8 overlay(const BinaryMask& pred, const BinaryMask& ref) {
  if (!pred.same_shape(ref)) throw Error(ErrorCode::ShapeMismatch, "prediction and reference differ in size");
  Image8 img;
  img.height = pred.height();
  img.width = pred.width();
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(img.height) * img.width * 3, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = ref[i] != 0;
    unsigned char* px = &img.pixels[3 * i];
    if (p && g) {
      px[0] = 255;
      px[1] = 255;
    } else if (p) {
      px[1] = 255;
    } else if (g) {
      px[0] = 255;
    }
  }
  return img;
}

InferSummary infer_tiles(const Predictor& predict, const std::vector<Tile>& tiles, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  InferSummary summary;
  for (const Tile& tile : tiles) {
    const ScoreMap f0 = predict(tile);
    const BinaryMask mask = otsu_binarize(f0);
    write_png(out_dir / (tile.id + "_map.png"), score_to_image8(f0));
    write_png(out_dir / (tile.id + "_mask.png"), mask_to_image8(mask));
    if (tile.ref_mask) {
      write_png(out_dir / (tile.id + "_overlay.png"), overlay(mask, *tile.ref_mask));
      ++summary.overlays;
    }
    ++summary.tiles;
  }
  return summary;
}

std::vector<Tile> load_tiles_from_path(const fs::path& path, const std::optional<fs::path>& masks_dir) {
  if (path.extension() == ".json") {
    const DatasetManifest manifest = load_manifest(path);
    std::vector<Tile> tiles;
    for (const ManifestEntry& e : manifest.entries) tiles.push_back(load_tile(manifest, e));
    return tiles;
  }
  std::vector<fs::path> images;
  fs::path default_masks;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
    std::sort(images.begin(), images.end());
    default_masks = fs::absolute(path).lexically_normal().parent_path() / "masks";
  } else if (fs::is_regular_file(path)) {
    images.push_back(path);
    default_masks = fs::absolute(path).parent_path().parent_path() / "masks";
  } else {
    throw Error(ErrorCode::MissingFile, path.string());
  }
  const fs::path mask_root = masks_dir.value_or(default_masks);
  std::vector<Tile> tiles;
  for (const fs::path& image : images) {
    ManifestEntry e;
    e.id = image.stem().string();
    e.image_path = fs::absolute(image);
    e.split = Split::Test;
    const fs::path mask = mask_root / (e.id + ".png");
    if (fs::is_regular_file(mask) && fs::absolute(mask) != fs::absolute(image)) e.mask_path = fs::absolute(mask);
    tiles.push_back(load_tile(e, fs::path()));
  }
  return tiles;
}

// ---- Pipeline ---------------------------------------------------------------

struct Pipeline::Stage {
  std::string name;
  json parameters;
  std::vector<fs::path> inputs;   // absolute
  std::vector<fs::path> outputs;  // absolute, removed before the body runs
  std::function<json()> body;
};

Pipeline::Pipeline(PipelineConfig cfg, fs::path root) : cfg_(std::move(cfg)), layout_{std::move(root)} {
  cfg_.validate();
}

StageResult Pipeline::execute(Stage& stage) {
  json inputs = json::object();
  for (const fs::path& p : stage.inputs) {
    if (!fs::exists(p)) throw Error(ErrorCode::MissingFile, "stage " + stage.name + " needs " + p.string());
    inputs[rel(p, layout_.root)] = content_hash(p);
  }
  const std::string key = sha256_hex(json{{"stage", stage.name}, {"parameters", stage.parameters}, {"inputs", inputs}}.dump());
  const fs::path record_path = layout_.runs_dir() / (stage.name + ".json");

  if (!force_ && fs::exists(record_path)) {
    const json record = read_json(record_path);
    bool intact = record.value("stage_key", "") == key;
    for (const fs::path& p : stage.outputs) {
      if (!intact) break;
      const std::string name = rel(p, layout_.root);
      intact = fs::exists(p) && record["outputs"].contains(name) && record["outputs"][name] == content_hash(p);
    }
    if (intact) {
      log_line("stage " + stage.name + ": up to date, skipped");
      return {stage.name, true, record.value("summary", json::object())};
    }
  }

  for (const fs::path& p : stage.outputs) fs::remove_all(p);
  fs::remove(record_path);
  log_line("stage " + stage.name + ": running");
  const auto start = std::chrono::steady_clock::now();
  json summary = stage.body();
  log_line("stage " + stage.name + ": done in " + std::to_string(seconds_since(start)) + " s");

  json outputs = json::object();
  for (const fs::path& p : stage.outputs) outputs[rel(p, layout_.root)] = content_hash(p);
  json parameters_hash = cfg_.hash();
  write_json(record_path, {{"format", "pseudoseg-run/1"},
                           {"stage", stage.name},
                           {"config_hash", parameters_hash},
                           {"seed", cfg_.seed},
                           {"stage_key", key},
                           {"parameters", stage.parameters},
                           {"inputs", inputs},
                           {"outputs", outputs},
                           {"summary", summary}});
  return {stage.name, false, summary};
}

StageResult Pipeline::synth() {
  const json params = cfg_.to_json();
  Stage stage{"synth", {{"data", params["data"]}, {"seed", cfg_.seed}}, {}, {layout_.data_dir()}, [&] {
                DatasetManifest m = synth_generate(cfg_.data.synth, layout_.data_dir());
                m = split_dataset(m, cfg_.data.split, cfg_.seed ^ 0x73706c6974ULL);
                save_manifest(m, layout_.manifest());
                json counts = json::object();
                for (const auto& [split, n] : m.split_counts()) counts[to_string(split)] = n;
                return json{{"tiles", m.entries.size()}, {"splits", counts}};
              }};
  return execute(stage);
}

StageResult Pipeline::train_classifier() {
  Stage stage{"train-cls",
              {{"classifier", cfg_.classifier}},
              {layout_.data_dir()},
              {layout_.classifier_dir()},
              [&] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                const auto train = load_split(m, Split::Train);
                const auto val = load_split(m, Split::Val);
                ClassifierModel model = build_classifier(cfg_.classifier);
                const ClassifierTraining t = ::pseudoseg::train_classifier(model, train, val);
                save_checkpoint(t.checkpoint, layout_.classifier_ckpt());
                const ClassifierHistory& h = t.history;
                write_json(layout_.classifier_dir() / "history.json", {{"train_loss", h.train_loss},
                                                                       {"val_loss", h.val_loss},
                                                                       {"val_accuracy", h.val_accuracy},
                                                                       {"best_epoch", h.best_epoch},
                                                                       {"best_val_accuracy", h.best_val_accuracy}});
                return json{{"train", train.size()},
                            {"val", val.size()},
                            {"best_epoch", h.best_epoch},
                            {"best_val_accuracy", h.best_val_accuracy}};
              }};
  return execute(stage);
}

StageResult Pipeline::mine() {
  Stage stage{"mine",
              {{"tau", cfg_.pseudolabels.tau}},
              {layout_.data_dir(), layout_.classifier_ckpt()},
              {layout_.mined().parent_path()},
              [&] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                const ClassifierModel model = classifier_from_checkpoint(load_checkpoint(layout_.classifier_ckpt()));
                const auto pool = load_split(m, Split::Unlabeled);
                std::vector<std::pair<std::string, double>> probs;
                json tiles = json::array();
                for (const Tile& t : pool) {
                  const double p = classifier_forward(model, t).positive;
                  probs.emplace_back(t.id, p);
                  tiles.push_back({{"id", t.id}, {"p_positive", p}});
                }
                const auto mined = mine_positives(probs, cfg_.pseudolabels.tau);
                json doc{{"format", "pseudoseg-mined/1"}, {"tau", cfg_.pseudolabels.tau}, {"mined", mined}, {"tiles", tiles}};

                // Diagnostics against reference masks, when the pool carries them.
                std::size_t truth = 0, hit = 0, with_mask = 0;
                for (const Tile& t : pool) {
                  if (!t.ref_mask) continue;
                  ++with_mask;
                  if (foreground_count(*t.ref_mask) == 0) continue;
                  ++truth;
                  if (std::find(mined.begin(), mined.end(), t.id) != mined.end()) ++hit;
                }
                json summary{{"pool", pool.size()}, {"mined", mined.size()}};
                if (with_mask == pool.size() && !pool.empty()) {
                  summary["truth_positives"] = truth;
                  summary["recall"] = truth ? static_cast<double>(hit) / truth : 0.0;
                  summary["precision"] = mined.empty() ? 0.0 : static_cast<double>(hit) / mined.size();
                  doc["diagnostics"] = summary;
                }
                write_json(layout_.mined(), doc);
                return summary;
              }};
  return execute(stage);
}

StageResult Pipeline::pseudo() {
  json params{{"layer", cfg_.attribution.layer},
              {"class", cfg_.attribution.class_id == ClassId::Positive ? "positive" : "negative"},
              {"include_labeled_positives", cfg_.pseudolabels.include_labeled_positives}};
  Stage stage{"pseudo",
              params,
              {layout_.data_dir(), layout_.classifier_ckpt(), layout_.mined()},
              {layout_.labels_root()},
              [&] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                const ClassifierModel model = classifier_from_checkpoint(load_checkpoint(layout_.classifier_ckpt()));
                std::vector<std::string> original;
                if (cfg_.pseudolabels.include_labeled_positives)
                  for (const ManifestEntry* e : m.in_split(Split::Train))
                    if (e->label == ImageLabel::Positive) original.push_back(e->id);
                const auto mined = read_json(layout_.mined()).at("mined").get<std::vector<std::string>>();
                const std::vector<Tile> original_tiles = load_ids(m, original);
                const std::vector<Tile> mined_tiles = load_ids(m, mined);
                std::vector<LabelSource> sources;
                for (const Tile& t : original_tiles) sources.push_back({&t, Provenance::OriginalPositive});
                for (const Tile& t : mined_tiles) sources.push_back({&t, Provenance::Mined});
                if (sources.empty()) throw Error(ErrorCode::EmptyDataset, "no positive tiles for pseudo labels");

                const LabelStore store =
                    build_initial_labels(model, sources, cfg_.attribution.layer, cfg_.attribution.class_id);
                save_label_store(store, layout_.labels_root());

                double precision_sum = 0.0, recall_sum = 0.0, fraction_sum = 0.0;
                std::size_t with_mask = 0;
                for (const LabelSource& s : sources) {
                  const BinaryMask& gt0 = store.at(s.tile->id).gt0();
                  fraction_sum += static_cast<double>(foreground_count(gt0)) / static_cast<double>(gt0.size());
                  if (!s.tile->ref_mask) continue;
                  const Confusion c = confusion(gt0, *s.tile->ref_mask);
                  precision_sum += precision(c);
                  recall_sum += recall(c);
                  ++with_mask;
                }
                json summary{{"records", store.size()},
                             {"original", original_tiles.size()},
                             {"mined", mined_tiles.size()},
                             {"mean_foreground_fraction", fraction_sum / static_cast<double>(sources.size())}};
                if (with_mask > 0) {
                  summary["mean_precision_vs_reference"] = precision_sum / static_cast<double>(with_mask);
                  summary["mean_recall_vs_reference"] = recall_sum / static_cast<double>(with_mask);
                }
                return summary;
              }};
  return execute(stage);
}

StageResult Pipeline::train_mapper(Variant v) {
  if (v == Variant::PsCnn) return train_mapper(MapperRun{cfg_.mapper.epochs_phase1, 0, false});
  if (v == Variant::PsCnnLc) return train_mapper(MapperRun{cfg_.mapper.epochs_phase1, cfg_.mapper.epochs_phase2, true});
  throw Error(ErrorCode::BadConfig, to_string(v) + " has no mapper");
}

StageResult Pipeline::train_mapper(const MapperRun& run) {
  const Variant v = run.correct ? Variant::PsCnnLc : Variant::PsCnn;
  MapperConfig mc = cfg_.mapper;
  mc.epochs_phase1 = run.epochs_phase1;
  mc.epochs_phase2 = run.epochs_phase2;
  mc.validate();
  json params{{"mapper", mc}, {"correct", run.correct}};
  if (run.correct) params["correction"] = cfg_.to_json()["correction"];

  const fs::path dir = layout_.mapper_dir(v);
  Stage stage{"train-map." + to_string(v), params, {layout_.data_dir(), layout_.labels_root()}, {dir}, [&, v] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                LabelStore store = load_label_store(layout_.labels_root());
                std::vector<std::string> ids;
                for (const auto& [id, record] : store.records()) ids.push_back(id);
                const std::vector<Tile> tiles = load_ids(m, ids);

                // A finished phase-1 run with identical settings and inputs is continued.
                std::optional<ModelCheckpoint> phase1;
                if (v == Variant::PsCnnLc) {
                  MapperConfig p1 = mc;
                  p1.epochs_phase2 = 0;
                  const fs::path record_path = layout_.runs_dir() / ("train-map." + to_string(Variant::PsCnn) + ".json");
                  const fs::path ckpt_path = layout_.mapper_ckpt(Variant::PsCnn);
                  if (fs::exists(record_path) && fs::exists(ckpt_path)) {
                    const json record = read_json(record_path);
                    const json expected_params{{"mapper", p1}, {"correct", false}};
                    json inputs = json::object();
                    inputs[rel(layout_.data_dir(), layout_.root)] = content_hash(layout_.data_dir());
                    inputs[rel(layout_.labels_root(), layout_.root)] = content_hash(layout_.labels_root());
                    const std::string out_name = rel(layout_.mapper_dir(Variant::PsCnn), layout_.root);
                    if (record.value("parameters", json()) == expected_params && record.value("inputs", json()) == inputs &&
                        record["outputs"].value(out_name, "") == content_hash(layout_.mapper_dir(Variant::PsCnn)))
                      phase1 = load_checkpoint(ckpt_path);
                  }
                }

                MapperModel model = phase1 ? mapper_from_checkpoint(*phase1) : build_mapper(mc);
                model.config = mc;
                MapperTrainer trainer(model, tiles, store);
                if (phase1) {
                  log_line("continuing from the ps-cnn phase-1 checkpoint");
                  trainer.resume(*phase1);
                } else {
                  trainer.train_phase1();
                }
                std::optional<CorrectionParams> corrector;
                if (run.correct) corrector = cfg_.correction.params;
                trainer.train_phase2(corrector);

                fs::create_directories(dir);
                save_checkpoint(trainer.checkpoint(), dir / "mapper.ckpt");
                std::vector<json> history, corrections;
                for (const MapperEpochLog& log : trainer.history()) {
                  history.push_back({{"epoch", log.epoch}, {"phase", log.phase}, {"loss", log.loss}, {"lr", log.lr},
                                     {"skipped", log.skipped}});
                  if (log.correction) {
                    const CorrectionReport& r = *log.correction;
                    corrections.push_back({{"epoch", r.epoch},
                                           {"accepted", r.accepted},
                                           {"fallback", r.fallback},
                                           {"keep", r.kept},
                                           {"mean_foreground_delta", r.mean_foreground_delta}});
                  }
                }
                write_lines(dir / "history.jsonl", history);
                if (run.correct) {
                  write_lines(dir / "corrections.jsonl", corrections);
                  save_label_store(store, dir);
                }
                return json{{"tiles", tiles.size()},
                            {"epochs", trainer.epoch()},
                            {"final_loss", trainer.history().empty() ? 0.0 : trainer.history().back().loss},
                            {"corrections", corrections.size()}};
              }};
  return execute(stage);
}

Predictor Pipeline::predictor(Variant v) const {
  if (uses_mapper(v)) {
    auto model = std::make_shared<MapperModel>(mapper_from_checkpoint(load_checkpoint(layout_.mapper_ckpt(v))));
    return [model](const Tile& t) { return mapper_forward(*model, t).f0; };
  }
  auto model = std::make_shared<ClassifierModel>(classifier_from_checkpoint(load_checkpoint(layout_.classifier_ckpt())));
  const std::string layer = v == Variant::GradCam4 ? "conv4_3" : "conv5_3";
  return [model, layer](const Tile& t) {
    return upsample_map(gradcam(*model, t, layer, ClassId::Positive), t.height(), t.width());
  };
}

StageResult Pipeline::evaluate(Variant v, std::optional<Aggregation> aggregation) {
  const Aggregation agg = aggregation.value_or(cfg_.eval.aggregation);
  json params{{"variant", to_string(v)}, {"aggregation", to_string(agg)}, {"thresholds", cfg_.eval.thresholds}};
  const fs::path model_input = uses_mapper(v) ? layout_.mapper_ckpt(v) : layout_.classifier_ckpt();
  const fs::path dir = layout_.eval_dir(v);
  Stage stage{"eval." + to_string(v), params, {layout_.data_dir(), model_input}, {dir}, [&, v, agg] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                const auto tiles = load_split(m, Split::Test);
                if (tiles.empty()) throw Error(ErrorCode::EmptyDataset, "test split is empty");
                const EvaluationReport r =
                    evaluate_dataset(predictor(v), tiles, agg, uniform_thresholds(cfg_.eval.thresholds));
                json doc = r.to_json();
                doc["variant"] = to_string(v);
                write_json(dir / "report.json", doc);
                r.write_curve_csv(dir / "curve.csv");
                json summary = metrics_json(r);
                summary["tiles"] = tiles.size();
                summary["aggregation"] = to_string(agg);
                return summary;
              }};
  return execute(stage);
}

StageResult Pipeline::infer(Variant v) {
  const fs::path model_input = uses_mapper(v) ? layout_.mapper_ckpt(v) : layout_.classifier_ckpt();
  const fs::path dir = layout_.infer_dir(v);
  Stage stage{"infer." + to_string(v), {{"variant", to_string(v)}}, {layout_.data_dir(), model_input}, {dir}, [&, v] {
                const DatasetManifest m = load_manifest(layout_.manifest());
                const auto tiles = load_split(m, Split::Test);
                const auto start = std::chrono::steady_clock::now();
                const InferSummary s = infer_tiles(predictor(v), tiles, dir);
                log_line("inferred " + std::to_string(s.tiles) + " tiles in " + std::to_string(seconds_since(start)) + " s");
                return json{{"tiles", s.tiles}, {"overlays", s.overlays}};
              }};
  return execute(stage);
}

StageResult Pipeline::report() {
  std::vector<fs::path> inputs;
  for (const char* name : {"train-cls", "mine", "pseudo"}) {
    const fs::path p = layout_.runs_dir() / (std::string(name) + ".json");
    if (fs::exists(p)) inputs.push_back(p);
  }
  for (Variant v : {Variant::PsCnn, Variant::PsCnnLc, Variant::GradCam4, Variant::GradCam5}) {
    const fs::path p = layout_.runs_dir() / ("eval." + to_string(v) + ".json");
    if (fs::exists(p)) inputs.push_back(p);
  }
  Stage stage{"report", json::object(), inputs, {layout_.report()}, [&] {
                json doc{{"format", "pseudoseg-report/1"}, {"seed", cfg_.seed}, {"config_hash", cfg_.hash()}};
                json variants = json::object();
                for (const fs::path& p : inputs) {
                  const json record = read_json(p);
                  const std::string name = record.at("stage");
                  if (name.rfind("eval.", 0) == 0)
                    variants[name.substr(5)] = record.at("summary");
                  else
                    doc[name] = record.at("summary");
                }
                doc["variants"] = variants;
                write_json(layout_.report(), doc);
                return json{{"variants", variants.size()}};
              }};
  return execute(stage);
}

std::vector<StageResult> Pipeline::run(Variant v) {
  std::vector<StageResult> out;
  out.push_back(synth());
  out.push_back(train_classifier());
  if (uses_mapper(v)) {
    out.push_back(mine());
    out.push_back(pseudo());
    out.push_back(train_mapper(v));
  }
  out.push_back(evaluate(v));
  out.push_back(infer(v));
  out.push_back(report());
  return out;
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  out.push_back(synth());
  out.push_back(train_classifier());
  out.push_back(mine());
  out.push_back(pseudo());
  out.push_back(train_mapper(Variant::PsCnn));
  out.push_back(train_mapper(Variant::PsCnnLc));
  for (Variant v : {Variant::PsCnn, Variant::PsCnnLc, Variant::GradCam4, Variant::GradCam5}) {
    out.push_back(evaluate(v));
    out.push_back(infer(v));
  }
  out.push_back(report());
  return out;
}

}  // namespace pseudoseg
