#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11/CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pseudoseg/attribution.hpp"
#include "pseudoseg/checkpoint.hpp"
#include "pseudoseg/config.hpp"
#include "pseudoseg/errors.hpp"
#include "pseudoseg/log.hpp"
#include "pseudoseg/mapper.hpp"
#include "pseudoseg/pipeline.hpp"
#include "pseudoseg/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pseudoseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStage = 1;
constexpr int kExitConfig = 2;

struct Options {
  std::string config;
  std::string artifacts;
  bool quiet = false;
  bool force = false;
  std::string out;
  double tau = -1.0;
  std::string layer;
  std::string class_name = "positive";
  int phase1 = -1;
  int phase2 = -1;
  std::optional<bool> correct;
  std::string correction_params;
  std::string model;
  std::string input;
  std::string masks;
  std::string manifest;
  std::string split = "test";
  std::string aggregation;
  std::string variant;
};

void print_error(const std::string& command, const std::string& code, const std::string& message) {
  std::cout << json{{"status", "error"}, {"command", command}, {"code", code}, {"message", message}}.dump() << std::endl;
}

json stage_json(const StageResult& r) { return {{"stage", r.stage}, {"skipped", r.skipped}, {"summary", r.summary}}; }

PipelineConfig load(const Options& o) {
  if (o.config.empty()) throw Error(ErrorCode::BadConfig, "--config is required");
  PipelineConfig cfg = load_config(o.config);
  if (o.tau >= 0.0) cfg.pseudolabels.tau = o.tau;
  if (!o.layer.empty()) cfg.attribution.layer = o.layer;
  if (o.phase1 >= 0) cfg.mapper.epochs_phase1 = o.phase1;
  if (o.phase2 >= 0) cfg.mapper.epochs_phase2 = o.phase2;
  if (!o.correction_params.empty()) cfg.correction.params = load_correction_params(o.correction_params);
  if (!o.aggregation.empty()) {
    if (o.aggregation == "global")
      cfg.eval.aggregation = Aggregation::Global;
    else if (o.aggregation == "per-image")
      cfg.eval.aggregation = Aggregation::PerImage;
    else
      throw Error(ErrorCode::BadConfig, "--agg must be global or per-image");
  }
  cfg.validate();
  return cfg;
}

Pipeline make_pipeline(const Options& o) {
  PipelineConfig cfg = load(o);
  std::optional<fs::path> root;
  if (!o.artifacts.empty()) root = fs::path(o.artifacts);
  const fs::path resolved = resolve_artifact_root(cfg, root);
  Pipeline p(std::move(cfg), resolved);
  p.set_force(o.force);
  return p;
}

Variant variant_or(const Options& o, Variant fallback) {
  if (o.variant.empty()) return fallback;
  const auto v = parse_variant(o.variant);
  if (!v) throw Error(ErrorCode::BadConfig, "unknown variant '" + o.variant + "'");
  return *v;
}

json run_command(const std::string& command, const Options& o) {
  json out{{"status", "ok"}, {"command", command}};
  json stages = json::array();

  if (command == "synth") {
    if (!o.out.empty()) {
      const PipelineConfig cfg = load(o);
      DatasetManifest m = synth_generate(cfg.data.synth, o.out);
      m = split_dataset(m, cfg.data.split, cfg.seed ^ 0x73706c6974ULL);
      save_manifest(m, fs::path(o.out) / "manifest.json");
      out["manifest"] = (fs::path(o.out) / "manifest.json").string();
      out["tiles"] = m.entries.size();
      return out;
    }
    stages.push_back(stage_json(make_pipeline(o).synth()));
  } else if (command == "train-cls") {
    stages.push_back(stage_json(make_pipeline(o).train_classifier()));
  } else if (command == "mine") {
    stages.push_back(stage_json(make_pipeline(o).mine()));
  } else if (command == "pseudo") {
    stages.push_back(stage_json(make_pipeline(o).pseudo()));
  } else if (command == "train-map") {
    Pipeline p = make_pipeline(o);
    const MapperConfig& mc = p.config().mapper;
    const bool correct = o.correct.value_or(p.config().correction.enabled);
    stages.push_back(stage_json(p.train_mapper(MapperRun{mc.epochs_phase1, mc.epochs_phase2, correct})));
  } else if (command == "eval") {
    if (!o.model.empty()) {
      const PipelineConfig cfg = load(o);
      const auto split = parse_split(o.split);
      if (!split) throw Error(ErrorCode::BadConfig, "unknown split '" + o.split + "'");
      std::optional<fs::path> root;
      if (!o.artifacts.empty()) root = fs::path(o.artifacts);
      const fs::path manifest_path =
          o.manifest.empty() ? ArtifactLayout{resolve_artifact_root(cfg, root)}.manifest() : fs::path(o.manifest);
      const DatasetManifest m = load_manifest(manifest_path);
      const auto tiles = load_split(m, *split);
      const MapperModel model = mapper_from_checkpoint(load_checkpoint(o.model));
      const EvaluationReport r = evaluate_dataset(model, tiles, cfg.eval.aggregation);
      if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream(fs::path(o.out) / "report.json") << r.to_json().dump(2) << '\n';
        r.write_curve_csv(fs::path(o.out) / "curve.csv");
      }
      out["report"] = {{"AC", r.accuracy}, {"P", r.precision}, {"R", r.recall},
                       {"F_theta", r.f_measure}, {"AUC", r.auc}, {"aggregation", to_string(r.aggregation)},
                       {"tiles", tiles.size()}};
      return out;
    }
    Pipeline p = make_pipeline(o);
    stages.push_back(stage_json(p.evaluate(variant_or(o, Variant::PsCnnLc))));
  } else if (command == "infer") {
    if (o.model.empty() || o.input.empty() || o.out.empty())
      throw Error(ErrorCode::BadConfig, "infer needs --model, --in and --out");
    const MapperModel model = mapper_from_checkpoint(load_checkpoint(o.model));
    std::optional<fs::path> masks;
    if (!o.masks.empty()) masks = fs::path(o.masks);
    const auto tiles = load_tiles_from_path(o.input, masks);
    const auto start = std::chrono::steady_clock::now();
    const InferSummary s =
        infer_tiles([&](const Tile& t) { return mapper_forward(model, t).f0; }, tiles, fs::path(o.out));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log_line("inferred " + std::to_string(s.tiles) + " tiles in " + std::to_string(secs) + " s");
    out["tiles"] = s.tiles;
    out["overlays"] = s.overlays;
    out["seconds"] = secs;
    return out;
  } else if (command == "attribute") {
    if (o.input.empty() || o.out.empty()) throw Error(ErrorCode::BadConfig, "attribute needs --in and --out");
    fs::path model_path = o.model;
    if (model_path.empty()) {
      const PipelineConfig cfg = load(o);
      std::optional<fs::path> root;
      if (!o.artifacts.empty()) root = fs::path(o.artifacts);
      model_path = ArtifactLayout{resolve_artifact_root(cfg, root)}.classifier_ckpt();
    }
    ClassId cls;
    if (o.class_name == "positive")
      cls = ClassId::Positive;
    else if (o.class_name == "negative")
      cls = ClassId::Negative;
    else
      throw Error(ErrorCode::BadConfig, "--class must be positive or negative");
    const ClassifierModel model = classifier_from_checkpoint(load_checkpoint(model_path));
    const auto tiles = load_tiles_from_path(o.input, std::nullopt);
    if (tiles.size() != 1) throw Error(ErrorCode::BadConfig, "--in must name one tile");
    const std::string layer = o.layer.empty() ? "conv4_3" : o.layer;
    const Tile& t = tiles.front();
    const ScoreMap map = upsample_map(gradcam(model, t, layer, cls), t.height(), t.width());
    write_png(o.out, score_to_image8(map));
    out["map"] = o.out;
    return out;
  } else if (command == "report") {
    stages.push_back(stage_json(make_pipeline(o).report()));
  } else if (command == "pipeline") {
    Pipeline p = make_pipeline(o);
    const std::string v = o.variant.empty() ? "all" : o.variant;
    const auto results = v == "all" ? p.run_all() : p.run(variant_or(o, Variant::PsCnnLc));
    for (const StageResult& r : results) stages.push_back(stage_json(r));
    out["artifacts"] = p.layout().root.string();
  }
  out["stages"] = stages;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-supervised solar panel mapping pipeline"};
  app.require_subcommand(1, 1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", o.config, "Pipeline config (TOML)");
    if (needs_config) opt->required();
    sub->add_option("--artifacts", o.artifacts, std::string("Artifact root (overrides ") + kArtifactRootEnv +
                                                    " and paths.artifacts)");
    sub->add_flag("--quiet", o.quiet, "Suppress progress messages");
    sub->add_flag("--force", o.force, "Rerun stages even when up to date");
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  common(synth, true);
  synth->add_option("--out", o.out, "Write the dataset here instead of the artifact root");

  auto* train_cls = app.add_subcommand("train-cls", "Train the image-level classifier");
  common(train_cls, true);

  auto* mine = app.add_subcommand("mine", "Classify unlabeled tiles and keep likely positives");
  common(mine, true);
  mine->add_option("--tau", o.tau, "Positive-probability threshold");

  auto* pseudo = app.add_subcommand("pseudo", "Build initial pseudo labels from GradCAM maps");
  common(pseudo, true);
  pseudo->add_option("--layer", o.layer, "Conv layer for GradCAM");

  auto* train_map = app.add_subcommand("train-map", "Train the mapping network");
  common(train_map, true);
  train_map->add_option("--phase1", o.phase1, "Epochs on the initial pseudo labels");
  train_map->add_option("--phase2", o.phase2, "Epochs after phase 1");
  train_map->add_flag_callback("--correct", [&] { o.correct = true; }, "Apply label correction in phase 2");
  train_map->add_flag_callback("--no-correct", [&] { o.correct = false; }, "No label correction");
  train_map->add_option("--correction-params", o.correction_params, "TOML file with correction parameters");

  auto* eval = app.add_subcommand("eval", "Pixel-level evaluation on a split");
  common(eval, false);
  eval->add_option("--model", o.model, "Mapper checkpoint (default: the variant's)");
  eval->add_option("--manifest", o.manifest, "Dataset manifest (default: artifact root)");
  eval->add_option("--split", o.split, "Split to evaluate");
  eval->add_option("--agg", o.aggregation, "global or per-image");
  eval->add_option("--variant", o.variant, "ps-cnn, ps-cnnlc, gradcam4 or gradcam5");
  eval->add_option("--out", o.out, "Report directory (with --model)");

  auto* infer = app.add_subcommand("infer", "Write score maps, masks and overlays");
  infer->add_option("--model", o.model, "Mapper checkpoint")->required();
  infer->add_option("--in", o.input, "Tile PNG, directory of tiles or manifest")->required();
  infer->add_option("--out", o.out, "Output directory")->required();
  infer->add_option("--masks", o.masks, "Reference mask directory");
  infer->add_flag("--quiet", o.quiet, "Suppress progress messages");

  auto* attribute = app.add_subcommand("attribute", "Render a GradCAM map for one tile");
  common(attribute, false);
  attribute->add_option("--model", o.model, "Classifier checkpoint (default: artifact root)");
  attribute->add_option("--layer", o.layer, "Conv layer")->default_str("conv4_3");
  attribute->add_option("--class", o.class_name, "positive or negative");
  attribute->add_option("--in", o.input, "Tile PNG")->required();
  attribute->add_option("--out", o.out, "Output PNG")->required();

  auto* report = app.add_subcommand("report", "Collect stage summaries into report.json");
  common(report, true);

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  common(pipeline, true);
  pipeline->add_option("--variant", o.variant, "ps-cnn, ps-cnnlc, gradcam4, gradcam5 or all");
  pipeline->add_option("--correction-params", o.correction_params, "TOML file with correction parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(), "UsageError",
                e.what());
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  log_enabled() = !o.quiet;
  try {
    std::cout << run_command(command, o).dump() << std::endl;
    return kExitOk;
  } catch (const Error& e) {
    print_error(command, std::string(to_string(e.code())), e.what());
    return e.code() == ErrorCode::BadConfig ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    print_error(command, "InternalError", e.what());
    return kExitStage;
  }
}
