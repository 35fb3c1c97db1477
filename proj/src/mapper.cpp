#include "pseudoseg/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pseudoseg/classifier.hpp"
#include "pseudoseg/errors.hpp"
#include "pseudoseg/log.hpp"

namespace pseudoseg {
using nlohmann::json;

namespace {

constexpr std::array<int, 4> kEncoderChannels{64, 128, 256, 512};
constexpr int kBottleneckChannels = 1024;
constexpr double kProbClamp = 1e-7;

constexpr std::size_t enc(int i, int op) { return static_cast<std::size_t>(5 * i + op); }
constexpr std::size_t bott(int op) { return static_cast<std::size_t>(20 + op); }
constexpr std::size_t dec(int j, int op) { return static_cast<std::size_t>(24 + 5 * j + op); }
constexpr std::size_t kHead = 44;
constexpr std::size_t kLayerCount = 45;

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

Tensor leading_channels(const Tensor& t, int count) {
  Tensor out(count, t.height, t.width);
  std::copy_n(t.data.begin(), out.size(), out.data.begin());
  return out;
}

Tensor trailing_channels(const Tensor& t, int from) {
  Tensor out(t.channels - from, t.height, t.width);
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(from * t.plane_size()), t.data.end(), out.data.begin());
  return out;
}

Tensor shape_of(const Tensor& t) {
  Tensor s;
  s.channels = t.channels;
  s.height = t.height;
  s.width = t.width;
  return s;
}

Tensor forward_logits(const MapperModel& model, const Tensor& x, std::vector<nn::LayerCache>* caches,
                      MapperShapes* shapes) {
  if (caches) caches->resize(kLayerCount);
  auto run = [&](std::size_t idx, const Tensor& in) {
    return nn::forward(model.net.layer(idx), in, caches ? &(*caches)[idx] : nullptr);
  };
  std::array<Tensor, 4> skips;
  Tensor cur = x;
  for (int i = 0; i < 4; ++i) {
    for (int op = 0; op < 4; ++op) cur = run(enc(i, op), cur);
    skips[i] = cur;
    cur = run(enc(i, 4), cur);
    if (shapes) shapes->skips[i] = shape_of(skips[i]);
  }
  if (shapes) shapes->encoder_out = shape_of(cur);
  for (int op = 0; op < 4; ++op) cur = run(bott(op), cur);
  if (shapes) shapes->bottleneck = shape_of(cur);
  for (int j = 0; j < 4; ++j) {
    const Tensor up = run(dec(j, 0), cur);
    if (up.height != skips[3 - j].height || up.width != skips[3 - j].width)
      throw Error(ErrorCode::ShapeMismatch, "decoder/skip spatial mismatch");
    cur = concat_channels(up, skips[3 - j]);
    skips[3 - j] = Tensor();
    for (int op = 1; op < 5; ++op) cur = run(dec(j, op), cur);
    if (shapes) shapes->decoders[j] = shape_of(cur);
  }
  Tensor logits = run(kHead, cur);
  if (shapes) shapes->head = shape_of(logits);
  return logits;
}

void backward_all(MapperModel& model, const Tensor& dlogits, const std::vector<nn::LayerCache>& caches) {
  auto step = [&](std::size_t idx, const Tensor& grad) {
    nn::accumulate_grads(model.net.layer(idx), grad, caches[idx]);
    return nn::backward_input(model.net.layer(idx), grad, caches[idx]);
  };
  std::array<Tensor, 4> skip_grads;
  Tensor g = step(kHead, dlogits);
  for (int j = 3; j >= 0; --j) {
    for (int op = 4; op >= 1; --op) g = step(dec(j, op), g);
    const int up_channels = std::get<nn::ConvTranspose2d>(model.net.layer(dec(j, 0))).out_channels;
    skip_grads[3 - j] = trailing_channels(g, up_channels);
    g = step(dec(j, 0), leading_channels(g, up_channels));
  }
  for (int op = 3; op >= 0; --op) g = step(bott(op), g);
  for (int i = 3; i >= 0; --i) {
    g = step(enc(i, 4), g);
    for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += skip_grads[i].data[k];
    skip_grads[i] = Tensor();
    for (int op = 3; op >= 1; --op) g = step(enc(i, op), g);
    if (i == 0)
      nn::accumulate_grads(model.net.layer(enc(0, 0)), g, caches[enc(0, 0)]);
    else
      g = step(enc(i, 0), g);
  }
}

ScoreMapPair to_pair(const Tensor& logits) {
  ScoreMapPair pair{ScoreMap(logits.height, logits.width), ScoreMap(logits.height, logits.width)};
  const auto l0 = logits.plane(0);
  const auto l1 = logits.plane(1);
  for (std::size_t i = 0; i < pair.f0.size(); ++i) {
    const double f0 = 1.0 / (1.0 + std::exp(static_cast<double>(l1[i]) - l0[i]));
    pair.f0.values[i] = static_cast<float>(f0);
    pair.f1.values[i] = static_cast<float>(1.0 - f0);
  }
  return pair;
}

void check_tile(const MapperModel& model, const Tile& tile) {
  if (tile.pixels.channels != 3 || tile.height() != model.config.input_size || tile.width() != model.config.input_size)
    throw Error(ErrorCode::ShapeMismatch, "tile " + tile.id + " is " + tile.pixels.shape_string() +
                                              ", mapper expects " + std::to_string(model.config.input_size) +
                                              " square RGB");
}

}  // namespace

void MapperConfig::validate() const {
  if (!(width_multiplier > 0.0) || width_multiplier * 64 < 1.0)
    throw Error(ErrorCode::BadConfig, "mapper.width_multiplier must be > 0 with 64*m >= 1");
  if (input_size <= 0 || input_size % 16 != 0)
    throw Error(ErrorCode::BadConfig, "mapper.input_size must be a positive multiple of 16");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error(ErrorCode::BadConfig, "mapper.lr_decay must be in (0,1]");
  if (!(lr0 > 0.0) || decay_every < 1 || batch_size < 1 || epochs_phase1 < 0 || epochs_phase2 < 0)
    throw Error(ErrorCode::BadConfig, "mapper schedule parameters out of range");
}

int MapperConfig::channels(int base) const {
  return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

void to_json(json& j, const MapperConfig& c) {
  j = {{"width_multiplier", c.width_multiplier},
       {"input_size", c.input_size},
       {"lr0", c.lr0},
       {"lr_decay", c.lr_decay},
       {"decay_every", c.decay_every},
       {"batch_size", c.batch_size},
       {"epochs_phase1", c.epochs_phase1},
       {"epochs_phase2", c.epochs_phase2},
       {"seed", c.seed}};
}

void from_json(const json& j, MapperConfig& c) {
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.input_size = j.at("input_size").get<int>();
  c.lr0 = j.at("lr0").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every = j.at("decay_every").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs_phase1 = j.at("epochs_phase1").get<int>();
  c.epochs_phase2 = j.at("epochs_phase2").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

MapperModel build_mapper(const MapperConfig& cfg) {
  cfg.validate();
  MapperModel model;
  model.config = cfg;
  Rng rng(cfg.seed ^ 0x6d61707065720000ULL);
  auto conv = [&](const std::string& name, int in, int out, int k) {
    nn::Conv2d c = nn::make_conv(name, in, out, k);
    nn::init_he_normal(c, rng);
    model.net.add(name, std::move(c));
  };
  std::array<int, 4> enc_ch{};
  int in = 3;
  for (int i = 0; i < 4; ++i) {
    enc_ch[i] = cfg.channels(kEncoderChannels[i]);
    const std::string p = "enc" + std::to_string(i + 1);
    conv(p + "_conv1", in, enc_ch[i], 3);
    model.net.add(p + "_conv1_relu", nn::Relu{});
    conv(p + "_conv2", enc_ch[i], enc_ch[i], 3);
    model.net.add(p + "_conv2_relu", nn::Relu{});
    model.net.add(p + "_pool", nn::MaxPool2d{});
    in = enc_ch[i];
  }
  const int b_ch = cfg.channels(kBottleneckChannels);
  conv("bottleneck_conv1", in, b_ch, 3);
  model.net.add("bottleneck_conv1_relu", nn::Relu{});
  conv("bottleneck_conv2", b_ch, b_ch, 3);
  model.net.add("bottleneck_conv2_relu", nn::Relu{});
  in = b_ch;
  for (int j = 0; j < 4; ++j) {
    const std::string p = "dec" + std::to_string(j + 1);
    const int out = enc_ch[3 - j];
    const int up_ch = std::max(1, in / 2);
    nn::ConvTranspose2d up = nn::make_conv_transpose("up" + std::to_string(j + 1), in, up_ch);
    nn::init_he_normal(up, rng);
    model.net.add("up" + std::to_string(j + 1), std::move(up));
    conv(p + "_conv1", up_ch + enc_ch[3 - j], out, 3);
    model.net.add(p + "_conv1_relu", nn::Relu{});
    conv(p + "_conv2", out, out, 3);
    model.net.add(p + "_conv2_relu", nn::Relu{});
    in = out;
  }
  conv("head", in, 2, 1);
  return model;
}

MapperShapes mapper_shapes(const MapperModel& model) {
  MapperShapes s;
  Tensor cur;
  cur.channels = 3;
  cur.height = cur.width = model.config.input_size;
  auto walk = [&](std::size_t idx) { cur = nn::output_shape(model.net.layer(idx), cur); };
  for (int i = 0; i < 4; ++i) {
    for (int op = 0; op < 4; ++op) walk(enc(i, op));
    s.skips[i] = cur;
    walk(enc(i, 4));
  }
  s.encoder_out = cur;
  for (int op = 0; op < 4; ++op) walk(bott(op));
  s.bottleneck = cur;
  for (int j = 0; j < 4; ++j) {
    walk(dec(j, 0));
    cur.channels += s.skips[3 - j].channels;
    for (int op = 1; op < 5; ++op) walk(dec(j, op));
    s.decoders[j] = cur;
  }
  walk(kHead);
  s.head = cur;
  return s;
}

ScoreMapPair mapper_forward(const MapperModel& model, const Tile& tile) {
  check_tile(model, tile);
  return to_pair(forward_logits(model, network_input(tile), nullptr, nullptr));
}

ScoreMapPair mapper_forward_traced(const MapperModel& model, const Tile& tile, MapperShapes& shapes) {
  check_tile(model, tile);
  return to_pair(forward_logits(model, network_input(tile), nullptr, &shapes));
}

double foreground_weight(const BinaryMask& gt) {
  if (gt.size() == 0) return 1.0;
  const auto n = static_cast<double>(gt.size());
  return (n - static_cast<double>(foreground_count(gt))) / n;
}

double weighted_ce_loss(const ScoreMapPair& pair, const BinaryMask& gt, double alpha) {
  if (pair.f0.height != gt.height() || pair.f0.width != gt.width() || pair.f1.size() != pair.f0.size())
    throw Error(ErrorCode::ShapeMismatch, "score maps and label differ in size");
  double loss = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) {
      if (alpha != 0.0) loss -= alpha * std::log(std::clamp<double>(pair.f0.values[i], kProbClamp, 1.0 - kProbClamp));
    } else if (alpha != 1.0) {
      loss -= (1.0 - alpha) * std::log(std::clamp<double>(pair.f1.values[i], kProbClamp, 1.0 - kProbClamp));
    }
  }
  return loss;
}

double weighted_ce_loss(const ScoreMapPair& pair, const BinaryMask& gt) {
  return weighted_ce_loss(pair, gt, foreground_weight(gt));
}

double lr_schedule(const MapperConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, std::max(0, epoch) / cfg.decay_every);
}

double mapper_loss_and_grad(MapperModel& model, const Tile& tile, const BinaryMask& gt) {
  check_tile(model, tile);
  if (gt.height() != tile.height() || gt.width() != tile.width())
    throw Error(ErrorCode::ShapeMismatch, "label for " + tile.id + " does not match the tile");
  thread_local std::vector<nn::LayerCache> caches;
  const Tensor logits = forward_logits(model, network_input(tile), &caches, nullptr);
  const ScoreMapPair pair = to_pair(logits);
  const double alpha = foreground_weight(gt);
  const double loss = weighted_ce_loss(pair, gt, alpha);

  // Softmax-CE gradient per pixel: weight * (p_c - [c == target]).
  Tensor grad(2, logits.height, logits.width);
  auto g0 = grad.plane(0);
  auto g1 = grad.plane(1);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool fg = gt[i] != 0;
    const double w = fg ? alpha : 1.0 - alpha;
    const double f0 = pair.f0.values[i];
    g0[i] = static_cast<float>(w * (f0 - (fg ? 1.0 : 0.0)));
    g1[i] = -g0[i];
  }
  backward_all(model, grad, caches);
  return loss;
}

MapperTrainer::MapperTrainer(MapperModel& model, const std::vector<Tile>& tiles, LabelStore& store)
    : model_(model), tiles_(tiles), store_(store) {
  for (const Tile& t : tiles_)
    if (!store_.contains(t.id)) throw Error(ErrorCode::MissingLabel, t.id);
  if (tiles_.empty()) throw Error(ErrorCode::EmptyDataset, "mapper training set is empty");
}

MapperEpochLog MapperTrainer::run_epoch(int phase) {
  const MapperConfig& cfg = model_.config;
  MapperEpochLog log;
  log.epoch = epoch_;
  log.phase = phase;
  log.lr = lr_schedule(cfg, epoch_);

  std::vector<std::size_t> order(tiles_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(model_.config.seed ^ 0x7472616e73ULL ^ (static_cast<std::uint64_t>(epoch_) * 0x9E3779B97F4A7C15ULL));
  rng.shuffle(order.begin(), order.end());

  auto params = model_.net.params();
  double loss_sum = 0.0;
  std::size_t used = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t in_batch = 0;
    for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
      const Tile& tile = tiles_[order[k]];
      const BinaryMask& gt = store_.at(tile.id).gt_current;
      if (foreground_count(gt) == 0) {
        ++log.skipped;
        continue;
      }
      loss_sum += mapper_loss_and_grad(model_, tile, gt);
      ++in_batch;
    }
    if (in_batch > 0) optimizer_.step(params, log.lr, 1.0 / static_cast<double>(in_batch));
    used += in_batch;
  }
  log.loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
  if (log.skipped > 0)
    log_line("warning: skipped " + std::to_string(log.skipped) + " samples with all-background labels");
  ++epoch_;
  log_line("mapper epoch " + std::to_string(epoch_) + " phase " + std::to_string(phase) +
           " loss=" + std::to_string(log.loss) + " lr=" + std::to_string(log.lr));
  return log;
}

void MapperTrainer::train_phase1() {
  for (int e = 0; e < model_.config.epochs_phase1; ++e) history_.push_back(run_epoch(1));
}

void MapperTrainer::train_phase2(const std::optional<CorrectionParams>& corrector) {
  if (corrector) corrector->validate();
  for (int e = 0; e < model_.config.epochs_phase2; ++e) {
    MapperEpochLog log = run_epoch(2);
    if (corrector && (e + 1) % corrector->cadence == 0) {
      std::map<std::string, ScoreMap> outputs;
      for (const Tile& t : tiles_) outputs.emplace(t.id, mapper_forward(model_, t).f0);
      CorrectionReport report = correction_step(outputs, store_, *corrector);
      report.epoch = epoch_;
      log_line("correction after epoch " + std::to_string(epoch_) + ": accepted=" + std::to_string(report.accepted) +
               " fallback=" + std::to_string(report.fallback) + " kept=" + std::to_string(report.kept));
      log.correction = std::move(report);
    }
    history_.push_back(std::move(log));
  }
}

ModelCheckpoint MapperTrainer::checkpoint() const {
  ModelCheckpoint ckpt = mapper_checkpoint(model_);
  json losses = json::array();
  json phases = json::array();
  for (const auto& h : history_) {
    losses.push_back(h.loss);
    phases.push_back(h.phase);
  }
  ckpt.metadata["epoch"] = epoch_;
  ckpt.metadata["loss_history"] = losses;
  ckpt.metadata["phase_history"] = phases;
  const auto params = model_.net.params();
  const auto& state = optimizer_.state();
  for (std::size_t k = 0; k < state.size(); ++k)
    ckpt.tensors["optimizer/" + params[k]->name] = NamedTensor{params[k]->shape, state[k]};
  return ckpt;
}

void MapperTrainer::resume(const ModelCheckpoint& ckpt) {
  const auto params = model_.net.params();
  std::vector<std::vector<float>> state;
  for (const nn::Param* p : params) {
    const auto it = ckpt.tensors.find("optimizer/" + p->name);
    if (it == ckpt.tensors.end()) {
      if (!state.empty()) throw Error(ErrorCode::CheckpointError, "optimizer state incomplete at " + p->name);
      continue;
    }
    if (it->second.values.size() != p->size())
      throw Error(ErrorCode::CheckpointError, "optimizer state shape differs at " + p->name);
    state.push_back(it->second.values);
  }
  if (!state.empty() && state.size() != params.size())
    throw Error(ErrorCode::CheckpointError, "optimizer state incomplete");
  optimizer_.set_state(std::move(state));
  epoch_ = ckpt.metadata.value("epoch", 0);
  history_.clear();
  const json phases = ckpt.metadata.value("phase_history", json::array());
  for (const auto& loss : ckpt.metadata.value("loss_history", json::array())) {
    MapperEpochLog log;
    log.epoch = static_cast<int>(history_.size());
    log.phase = history_.size() < phases.size() ? phases[history_.size()].get<int>() : 1;
    log.loss = loss.get<double>();
    log.lr = lr_schedule(model_.config, log.epoch);
    history_.push_back(log);
  }
}

MapperTraining train_mapper(MapperModel& model, const std::vector<Tile>& tiles, LabelStore& store,
                            const std::optional<CorrectionParams>& corrector) {
  MapperTrainer trainer(model, tiles, store);
  trainer.train_phase1();
  trainer.train_phase2(corrector);
  return {trainer.checkpoint(), trainer.history()};
}

ModelCheckpoint mapper_checkpoint(const MapperModel& model) {
  ModelCheckpoint ckpt;
  const auto params = model.net.params();
  ckpt.tensors = snapshot(params);
  ckpt.metadata = {{"kind", "mapper"}, {"config", model.config}};
  return ckpt;
}

MapperModel mapper_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "mapper") throw Error(ErrorCode::CheckpointError, "archive does not hold a mapper");
  MapperConfig cfg;
  try {
    cfg = ckpt.metadata.at("config").get<MapperConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointError, std::string("mapper config: ") + e.what());
  }
  MapperModel model = build_mapper(cfg);
  auto params = model.net.params();
  try {
    restore(params, ckpt.tensors);
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointError, e.what());
  }
  return model;
}

}  // namespace pseudoseg
