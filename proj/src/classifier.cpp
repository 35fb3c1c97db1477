#include "pseudoseg/classifier.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "pseudoseg/errors.hpp"
#include "pseudoseg/log.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {
using nlohmann::json;

namespace {

constexpr std::array<int, 5> kBlockConvs{2, 2, 3, 3, 3};
constexpr std::array<int, 5> kBlockChannels{64, 128, 256, 512, 512};
constexpr int kFcWidth = 256;
constexpr double kFcInitStd = 0.01;
constexpr double kProbClamp = 1e-7;

}  // namespace

void ClassifierConfig::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0) || width_multiplier * 64 < 1.0)
    throw Error(ErrorCode::BadConfig, "classifier.width_multiplier must be in (0,1] with 64*m >= 1");
  if (input_size <= 0 || input_size % 32 != 0)
    throw Error(ErrorCode::BadConfig, "classifier.input_size must be a positive multiple of 32");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::BadConfig, "classifier.learning_rate must be > 0");
  if (batch_size < 1 || epochs < 0) throw Error(ErrorCode::BadConfig, "classifier batch_size/epochs");
}

int ClassifierConfig::channels(int base) const {
  return std::max(1, static_cast<int>(std::lround(base * width_multiplier)));
}

void to_json(json& j, const ClassifierConfig& c) {
  j = {{"width_multiplier", c.width_multiplier}, {"input_size", c.input_size}, {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},         {"epochs", c.epochs},         {"seed", c.seed}};
  if (c.import_path) j["import"] = c.import_path->string();
}

void from_json(const json& j, ClassifierConfig& c) {
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.input_size = j.at("input_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("import")) c.import_path = j["import"].get<std::string>();
}

ClassifierModel build_classifier(const ClassifierConfig& cfg) {
  cfg.validate();
  ClassifierModel model;
  model.config = cfg;
  Rng rng(cfg.seed);
  int in = 3;
  for (std::size_t b = 0; b < kBlockConvs.size(); ++b) {
    const int out = cfg.channels(kBlockChannels[b]);
    for (int p = 1; p <= kBlockConvs[b]; ++p) {
      const std::string name = "conv" + std::to_string(b + 1) + "_" + std::to_string(p);
      nn::Conv2d conv = nn::make_conv(name, in, out, 3);
      nn::init_he_normal(conv, rng);
      model.net.add(name, std::move(conv));
      model.net.add(name + "_relu", nn::Relu{});
      in = out;
    }
    model.net.add("pool" + std::to_string(b + 1), nn::MaxPool2d{});
  }
  model.net.add("flatten", nn::Flatten{});
  const int spatial = cfg.input_size / 32;
  const int flat = in * spatial * spatial;
  nn::Linear fc6 = nn::make_linear("fc6", flat, kFcWidth);
  nn::Linear fc7 = nn::make_linear("fc7", kFcWidth, kFcWidth);
  nn::Linear fc8 = nn::make_linear("fc8", kFcWidth, 2);
  nn::init_normal(fc6, rng, kFcInitStd);
  nn::init_normal(fc7, rng, kFcInitStd);
  nn::init_normal(fc8, rng, kFcInitStd);
  model.net.add("fc6", std::move(fc6));
  model.net.add("fc6_relu", nn::Relu{});
  model.net.add("fc7", std::move(fc7));
  model.net.add("fc7_relu", nn::Relu{});
  model.net.add("fc8", std::move(fc8));

  if (cfg.import_path) {
    const ModelCheckpoint archive = load_checkpoint(*cfg.import_path);
    auto params = model.net.params();
    restore(params, archive.tensors);
  }
  return model;
}

Tensor network_input(const Tile& tile) {
  Tensor x = tile.pixels;
  for (float& v : x.data) v -= 0.5f;
  return x;
}

namespace {

void check_tile(const ClassifierModel& model, const Tile& tile) {
  if (tile.pixels.channels != 3 || tile.height() != model.config.input_size || tile.width() != model.config.input_size)
    throw Error(ErrorCode::ShapeMismatch, "tile " + tile.id + " is " + tile.pixels.shape_string() +
                                              ", classifier expects " + std::to_string(model.config.input_size) +
                                              " square RGB");
}

ClassProbabilities to_probabilities(const Tensor& logits) {
  const auto p = nn::softmax(logits.data);
  return {p[static_cast<int>(ClassId::Positive)], p[static_cast<int>(ClassId::Negative)]};
}

}  // namespace

std::vector<float> classifier_logits(const ClassifierModel& model, const Tile& tile) {
  check_tile(model, tile);
  return model.net.forward(network_input(tile), nullptr).data;
}

ClassProbabilities classifier_forward(const ClassifierModel& model, const Tile& tile) {
  check_tile(model, tile);
  return to_probabilities(model.net.forward(network_input(tile), nullptr));
}

std::pair<ClassProbabilities, Tensor> classifier_forward_with_features(const ClassifierModel& model, const Tile& tile,
                                                                       const std::string& layer) {
  const auto tap = model.net.feature_tap(layer);
  if (!tap) throw Error(ErrorCode::UnknownLayer, layer);
  check_tile(model, tile);
  Tensor features = model.net.forward(network_input(tile), nullptr, 0, *tap + 1);
  const Tensor logits = model.net.forward(features, nullptr, *tap + 1);
  return {to_probabilities(logits), std::move(features)};
}

double cross_entropy(const ClassProbabilities& p, ImageLabel truth) {
  const double q = truth == ImageLabel::Positive ? p.positive : p.negative;
  return -std::log(std::clamp(q, kProbClamp, 1.0 - kProbClamp));
}

double classifier_train_step(ClassifierModel& model, nn::RmsProp& optimizer, const std::vector<const Tile*>& batch) {
  double loss = 0.0;
  std::vector<nn::LayerCache> caches;
  for (const Tile* tile : batch) {
    if (!tile->image_label || *tile->image_label == ImageLabel::Unlabeled)
      throw Error(ErrorCode::UnlabeledSample, tile->id);
    check_tile(model, *tile);
    const Tensor logits = model.net.forward(network_input(*tile), &caches);
    const ClassProbabilities p = to_probabilities(logits);
    loss += cross_entropy(p, *tile->image_label);
    // d(CE)/d(logits) = softmax - onehot
    Tensor grad(2, 1, 1);
    const bool positive = *tile->image_label == ImageLabel::Positive;
    grad.data[static_cast<int>(ClassId::Positive)] = static_cast<float>(p.positive - (positive ? 1.0 : 0.0));
    grad.data[static_cast<int>(ClassId::Negative)] = static_cast<float>(p.negative - (positive ? 0.0 : 1.0));
    model.net.backward(grad, caches);
  }
  auto params = model.net.params();
  optimizer.step(params, model.config.learning_rate, 1.0 / static_cast<double>(batch.size()));
  return loss / static_cast<double>(batch.size());
}

ClassifierTraining train_classifier(ClassifierModel& model, const std::vector<Tile>& train,
                                    const std::vector<Tile>& val) {
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "classifier training set is empty");
  for (const auto* set : {&train, &val})
    for (const Tile& t : *set)
      if (!t.image_label || *t.image_label == ImageLabel::Unlabeled) throw Error(ErrorCode::UnlabeledSample, t.id);

  const ClassifierConfig& cfg = model.config;
  nn::RmsProp optimizer;
  Rng rng(cfg.seed ^ 0x5eedc1a55ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  ClassifierTraining result;
  ClassifierHistory& h = result.history;
  double best_val_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Tile*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(&train[order[k]]);
      epoch_loss += classifier_train_step(model, optimizer, batch) * static_cast<double>(batch.size());
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));

    double val_loss = 0.0;
    std::size_t correct = 0;
    for (const Tile& t : val) {
      const ClassProbabilities p = classifier_forward(model, t);
      val_loss += cross_entropy(p, *t.image_label);
      const bool predicted_positive = p.positive >= p.negative;
      correct += predicted_positive == (*t.image_label == ImageLabel::Positive) ? 1 : 0;
    }
    const double acc = val.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(val.size());
    val_loss = val.empty() ? 0.0 : val_loss / static_cast<double>(val.size());
    h.val_loss.push_back(val_loss);
    h.val_accuracy.push_back(acc);
    log_line("classifier epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
             " loss=" + std::to_string(h.train_loss.back()) + " val_loss=" + std::to_string(val_loss) +
             " val_acc=" + std::to_string(acc));

    const bool better = h.best_epoch < 0 || acc > h.best_val_accuracy ||
                        (acc == h.best_val_accuracy && val_loss < best_val_loss);
    if (better) {
      h.best_epoch = epoch;
      h.best_val_accuracy = acc;
      best_val_loss = val_loss;
      result.checkpoint = classifier_checkpoint(model);
    }
  }
  if (h.best_epoch < 0) {
    result.checkpoint = classifier_checkpoint(model);
  } else {
    auto params = model.net.params();
    restore(params, result.checkpoint.tensors);
  }
  result.checkpoint.metadata["epoch"] = h.best_epoch + 1;
  result.checkpoint.metadata["loss_history"] = h.train_loss;
  result.checkpoint.metadata["val_accuracy_history"] = h.val_accuracy;
  return result;
}

ModelCheckpoint classifier_checkpoint(const ClassifierModel& model) {
  ModelCheckpoint ckpt;
  const auto params = model.net.params();
  ckpt.tensors = snapshot(params);
  ClassifierConfig cfg = model.config;
  cfg.import_path.reset();
  ckpt.metadata = {{"kind", "classifier"}, {"config", cfg}};
  return ckpt;
}

ClassifierModel classifier_from_checkpoint(const ModelCheckpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "classifier")
    throw Error(ErrorCode::CheckpointError, "archive does not hold a classifier");
  ClassifierConfig cfg;
  try {
    cfg = ckpt.metadata.at("config").get<ClassifierConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointError, std::string("classifier config: ") + e.what());
  }
  ClassifierModel model = build_classifier(cfg);
  auto params = model.net.params();
  try {
    restore(params, ckpt.tensors);
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointError, e.what());
  }
  return model;
}

}  // namespace pseudoseg
