#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/checkpoint.hpp"
#include "pseudoseg/nn.hpp"
#include "pseudoseg/tiles.hpp"

namespace pseudoseg {

// Index of each class in the classifier's two-way output.
enum class ClassId { Positive = 0, Negative = 1 };

struct ClassifierConfig {
  double width_multiplier = 1.0;  // scales every channel count
  int input_size = 256;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> import_path;  // init = import(path) when set

  void validate() const;
  int channels(int base) const;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

// VGG16-style binary classifier: five conv blocks (2,2,3,3,3 convs, 3x3,
// stride 1, padding 1, each rectified) each closed by a 2x2/2 max-pool, then
// fc6(256), fc7(256), fc8(2) and softmax. Conv layers are named conv{b}_{p}.
struct ClassifierModel {
  ClassifierConfig config;
  nn::LayerStack net;
};

struct ClassProbabilities {
  double positive = 0.0;
  double negative = 0.0;
};

ClassifierModel build_classifier(const ClassifierConfig& cfg);

// Mean-centres the pixels the way both networks expect.
Tensor network_input(const Tile& tile);

ClassProbabilities classifier_forward(const ClassifierModel& model, const Tile& tile);
// Pre-softmax class scores (positive, negative).
std::vector<float> classifier_logits(const ClassifierModel& model, const Tile& tile);
std::pair<ClassProbabilities, Tensor> classifier_forward_with_features(const ClassifierModel& model, const Tile& tile,
                                                                       const std::string& layer);

// Cross entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double cross_entropy(const ClassProbabilities& p, ImageLabel truth);

struct ClassifierHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

struct ClassifierTraining {
  ModelCheckpoint checkpoint;  // best-validation weights
  ClassifierHistory history;
};

// RMSprop on batch-mean cross entropy. Leaves `model` holding the best
// validation weights. Throws EmptyDataset or UnlabeledSample.
ClassifierTraining train_classifier(ClassifierModel& model, const std::vector<Tile>& train,
                                    const std::vector<Tile>& val);

// One optimisation step on a batch; returns the mean loss before the update.
double classifier_train_step(ClassifierModel& model, nn::RmsProp& optimizer, const std::vector<const Tile*>& batch);

ModelCheckpoint classifier_checkpoint(const ClassifierModel& model);
ClassifierModel classifier_from_checkpoint(const ModelCheckpoint& ckpt);

}  // namespace pseudoseg
