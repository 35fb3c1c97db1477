#include "pseudoseg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <toml++/toml.hpp>

#include "pseudoseg/errors.hpp"
#include "pseudoseg/hashing.hpp"

namespace pseudoseg {
using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::BadConfig, msg); }

class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    read(*node, key, out);
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_) {
      const std::string k(key.str());
      if (!seen_.count(k)) bad("unknown key '" + qualified(k) + "'");
    }
  }

 private:
  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void read(const toml::node& node, const std::string& key, int& out) {
    auto v = node.value_exact<std::int64_t>();
    if (!v) bad("'" + qualified(key) + "' must be an integer");
    out = static_cast<int>(*v);
  }
  void read(const toml::node& node, const std::string& key, std::uint64_t& out) {
    auto v = node.value_exact<std::int64_t>();
    if (!v || *v < 0) bad("'" + qualified(key) + "' must be a non-negative integer");
    out = static_cast<std::uint64_t>(*v);
  }
  void read(const toml::node& node, const std::string& key, double& out) {
    if (!node.is_number()) bad("'" + qualified(key) + "' must be a number");
    out = *node.value<double>();
  }
  void read(const toml::node& node, const std::string& key, bool& out) {
    auto v = node.value_exact<bool>();
    if (!v) bad("'" + qualified(key) + "' must be a boolean");
    out = *v;
  }
  void read(const toml::node& node, const std::string& key, std::string& out) {
    auto v = node.value_exact<std::string>();
    if (!v) bad("'" + qualified(key) + "' must be a string");
    out = *v;
  }
  void read(const toml::node& node, const std::string& key, std::array<int, 2>& out) {
    const toml::array* arr = node.as_array();
    if (!arr || arr->size() != 2) bad("'" + qualified(key) + "' must be a two-element integer array");
    for (std::size_t i = 0; i < 2; ++i) {
      auto v = (*arr)[i].value_exact<std::int64_t>();
      if (!v) bad("'" + qualified(key) + "' must be a two-element integer array");
      out[i] = static_cast<int>(*v);
    }
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const std::string& name) {
  const toml::node* node = root.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) bad("'" + name + "' must be a table");
  return node->as_table();
}

void read_correction(Section& s, CorrectionParams& p) {
  s.get("beta1", p.beta1);
  s.get("beta2", p.beta2);
  s.get("gamma1", p.gamma1);
  s.get("gamma2", p.gamma2);
  s.get("delta1", p.delta1);
  s.get("delta2", p.delta2);
  s.get("se1_size", p.se1_size);
  s.get("se2_size", p.se2_size);
  s.get("cadence", p.cadence);
}

toml::table parse_toml(std::string_view text, std::string_view source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e.description() << " at " << source << ":" << e.source().begin.line << ":" << e.source().begin.column;
    bad(msg.str());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
void checked(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BadConfig) throw;
    bad(e.what());
  }
}

}  // namespace

void PipelineConfig::validate() const {
  checked([&] {
    data.synth.validate();
    classifier.validate();
    mapper.validate();
    correction.params.validate();
  });
  const double sum = data.split.train + data.split.val + data.split.test;
  if (data.split.train < 0 || data.split.val < 0 || data.split.test < 0 || std::abs(sum - 1.0) > 1e-9)
    bad("data split fractions must be non-negative and sum to 1");
  if (attribution.layer.rfind("conv", 0) != 0) bad("attribution.layer must name a conv layer");
  if (!(pseudolabels.tau >= 0.0 && pseudolabels.tau <= 1.0)) bad("pseudolabels.tau must lie in [0, 1]");
  if (eval.thresholds < 2) bad("eval.thresholds must be at least 2");
  if (classifier.input_size != data.synth.tile_size) bad("classifier.input_size must equal data.tile_size");
  if (mapper.input_size != data.synth.tile_size) bad("mapper.input_size must equal data.tile_size");
}

void PipelineConfig::derive_seeds() {
  data.synth.seed = seed;
  classifier.seed = seed * 1000003ULL + 1;
  mapper.seed = seed * 1000003ULL + 2;
}

json PipelineConfig::to_json() const {
  const SynthConfig& s = data.synth;
  const CorrectionParams& c = correction.params;
  json j;
  j["seed"] = seed;
  j["data"] = {{"n_tiles", s.n_tiles},
               {"n_unlabeled", s.n_unlabeled},
               {"n_test", s.n_test},
               {"tile_size", s.tile_size},
               {"panel_count_range", s.panel_count_range},
               {"panel_cell_size", s.panel_cell_size},
               {"rooftop_per_tile", s.rooftop_per_tile},
               {"background_noise", s.background_noise},
               {"positive_fraction", s.positive_fraction},
               {"unlabeled_positive_fraction", s.unlabeled_positive_fraction},
               {"test_positive_fraction", s.test_positive_fraction},
               {"train_fraction", data.split.train},
               {"val_fraction", data.split.val},
               {"test_fraction", data.split.test}};
  j["classifier"] = classifier;
  j["attribution"] = {{"layer", attribution.layer},
                      {"class", attribution.class_id == ClassId::Positive ? "positive" : "negative"}};
  j["pseudolabels"] = {{"tau", pseudolabels.tau}, {"include_labeled_positives", pseudolabels.include_labeled_positives}};
  j["mapper"] = mapper;
  j["correction"] = {{"enabled", correction.enabled}, {"beta1", c.beta1},   {"beta2", c.beta2},
                     {"gamma1", c.gamma1},             {"gamma2", c.gamma2}, {"delta1", c.delta1},
                     {"delta2", c.delta2},             {"se1_size", c.se1_size}, {"se2_size", c.se2_size},
                     {"cadence", c.cadence}};
  j["eval"] = {{"aggregation", to_string(eval.aggregation)}, {"thresholds", eval.thresholds}};
  j["paths"] = {{"artifacts", paths.artifacts.generic_string()}};
  return j;
}

std::string PipelineConfig::hash() const {
  json j = to_json();
  j.erase("paths");
  return sha256_hex(j.dump());
}

PipelineConfig parse_config(std::string_view text, std::string_view source) {
  const toml::table root = parse_toml(text, source);
  PipelineConfig cfg;

  static const std::set<std::string> sections{"data",       "classifier", "attribution", "pseudolabels",
                                              "mapper",     "correction", "eval",        "paths"};
  for (const auto& [key, node] : root) {
    const std::string k(key.str());
    if (k == "seed") continue;
    if (!sections.count(k)) bad("unknown key '" + k + "'");
  }
  if (const toml::node* seed = root.get("seed")) {
    auto v = seed->value_exact<std::int64_t>();
    if (!v || *v < 0) bad("'seed' must be a non-negative integer");
    cfg.seed = static_cast<std::uint64_t>(*v);
  }

  {
    Section s(subtable(root, "data"), "data");
    SynthConfig& d = cfg.data.synth;
    s.get("n_tiles", d.n_tiles);
    s.get("n_unlabeled", d.n_unlabeled);
    s.get("n_test", d.n_test);
    s.get("tile_size", d.tile_size);
    s.get("panel_count_range", d.panel_count_range);
    s.get("panel_cell_size", d.panel_cell_size);
    s.get("rooftop_per_tile", d.rooftop_per_tile);
    s.get("background_noise", d.background_noise);
    s.get("positive_fraction", d.positive_fraction);
    s.get("unlabeled_positive_fraction", d.unlabeled_positive_fraction);
    s.get("test_positive_fraction", d.test_positive_fraction);
    s.get("train_fraction", cfg.data.split.train);
    s.get("val_fraction", cfg.data.split.val);
    s.get("test_fraction", cfg.data.split.test);
    s.finish();
  }
  {
    Section s(subtable(root, "classifier"), "classifier");
    ClassifierConfig& c = cfg.classifier;
    std::string import_path;
    s.get("width_multiplier", c.width_multiplier);
    s.get("input_size", c.input_size);
    s.get("learning_rate", c.learning_rate);
    s.get("batch_size", c.batch_size);
    s.get("epochs", c.epochs);
    s.get("import_path", import_path);
    s.finish();
    if (!import_path.empty()) c.import_path = import_path;
  }
  {
    Section s(subtable(root, "attribution"), "attribution");
    std::string cls = "positive";
    s.get("layer", cfg.attribution.layer);
    s.get("class", cls);
    s.finish();
    if (cls == "positive")
      cfg.attribution.class_id = ClassId::Positive;
    else if (cls == "negative")
      cfg.attribution.class_id = ClassId::Negative;
    else
      bad("attribution.class must be 'positive' or 'negative'");
  }
  {
    Section s(subtable(root, "pseudolabels"), "pseudolabels");
    s.get("tau", cfg.pseudolabels.tau);
    s.get("include_labeled_positives", cfg.pseudolabels.include_labeled_positives);
    s.finish();
  }
  {
    Section s(subtable(root, "mapper"), "mapper");
    MapperConfig& m = cfg.mapper;
    s.get("width_multiplier", m.width_multiplier);
    s.get("input_size", m.input_size);
    s.get("lr0", m.lr0);
    s.get("lr_decay", m.lr_decay);
    s.get("decay_every", m.decay_every);
    s.get("batch_size", m.batch_size);
    s.get("epochs_phase1", m.epochs_phase1);
    s.get("epochs_phase2", m.epochs_phase2);
    s.finish();
  }
  {
    Section s(subtable(root, "correction"), "correction");
    s.get("enabled", cfg.correction.enabled);
    read_correction(s, cfg.correction.params);
    s.finish();
  }
  {
    Section s(subtable(root, "eval"), "eval");
    std::string agg = "global";
    s.get("aggregation", agg);
    s.get("thresholds", cfg.eval.thresholds);
    s.finish();
    if (agg == "global")
      cfg.eval.aggregation = Aggregation::Global;
    else if (agg == "per-image")
      cfg.eval.aggregation = Aggregation::PerImage;
    else
      bad("eval.aggregation must be 'global' or 'per-image'");
  }
  {
    Section s(subtable(root, "paths"), "paths");
    std::string artifacts = cfg.paths.artifacts.string();
    s.get("artifacts", artifacts);
    s.finish();
    cfg.paths.artifacts = artifacts;
  }

  cfg.derive_seeds();
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

CorrectionParams load_correction_params(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  const toml::table root = parse_toml(text, path.string());
  CorrectionParams params;
  const toml::table* table = root.contains("correction") ? subtable(root, "correction") : &root;
  Section s(table, table == &root ? "" : "correction");
  bool enabled = true;
  if (table != &root) s.get("enabled", enabled);
  read_correction(s, params);
  s.finish();
  if (table != &root) {
    for (const auto& [key, node] : root)
      if (key.str() != "correction") bad("unknown key '" + std::string(key.str()) + "'");
  }
  checked([&] { params.validate(); });
  return params;
}

}  // namespace pseudoseg
