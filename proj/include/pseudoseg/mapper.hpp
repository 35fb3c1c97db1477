#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/checkpoint.hpp"
#include "pseudoseg/correction.hpp"
#include "pseudoseg/image.hpp"
#include "pseudoseg/nn.hpp"
#include "pseudoseg/pseudolabels.hpp"
#include "pseudoseg/rng.hpp"
#include "pseudoseg/tiles.hpp"

namespace pseudoseg {

struct MapperConfig {
  double width_multiplier = 1.0;
  int input_size = 256;
  double lr0 = 1e-3;
  double lr_decay = 0.8;
  int decay_every = 20;
  int batch_size = 15;
  int epochs_phase1 = 800;
  int epochs_phase2 = 40;
  std::uint64_t seed = 0;

  void validate() const;
  int channels(int base) const;
};

void to_json(nlohmann::json& j, const MapperConfig& c);
void from_json(const nlohmann::json& j, MapperConfig& c);

// Encoder-decoder mapping network. Layer order inside `net`:
//   enc{i}_conv1, relu, enc{i}_conv2, relu (= skip G_i), enc{i}_pool   i = 1..4
//   bottleneck_conv1, relu, bottleneck_conv2, relu                      (= B)
//   up{j}, dec{j}_conv1, relu, dec{j}_conv2, relu                       (= D_j), j = 1..4
//   head (1x1 conv to 2 channels), followed by a per-pixel softmax.
// Each up{j} halves the channel count before concatenation with G_{5-j}.
struct MapperModel {
  MapperConfig config;
  nn::LayerStack net;
};

// Spatial/channel shapes of the named intermediate tensors.
struct MapperShapes {
  std::array<Tensor, 4> skips;     // G1..G4 (pre-pool encoder outputs)
  Tensor encoder_out;              // E4 after its pool
  Tensor bottleneck;               // B
  std::array<Tensor, 4> decoders;  // D1..D4
  Tensor head;                     // 2-channel output
};

// f0 foreground, f1 background; f0 + f1 = 1 per pixel.
struct ScoreMapPair {
  ScoreMap f0;
  ScoreMap f1;
};

MapperModel build_mapper(const MapperConfig& cfg);

// Shapes implied by the architecture for the configured input size.
MapperShapes mapper_shapes(const MapperModel& model);

ScoreMapPair mapper_forward(const MapperModel& model, const Tile& tile);
// Forward pass that also reports the actual intermediate shapes.
ScoreMapPair mapper_forward_traced(const MapperModel& model, const Tile& tile, MapperShapes& shapes);

// alpha = (N - N_fore) / N
double foreground_weight(const BinaryMask& gt);

// -sum_px [ alpha*GT*log f0 + (1-alpha)*(1-GT)*log f1 ], probabilities clamped
// to [1e-7, 1-1e-7]. Throws ShapeMismatch.
double weighted_ce_loss(const ScoreMapPair& pair, const BinaryMask& gt);
double weighted_ce_loss(const ScoreMapPair& pair, const BinaryMask& gt, double alpha);

// lr0 * lr_decay ^ floor(epoch / decay_every)
double lr_schedule(const MapperConfig& cfg, int epoch);

// Loss and parameter gradients for one sample; gradients are accumulated into
// the model's grad buffers. Returns the loss.
double mapper_loss_and_grad(MapperModel& model, const Tile& tile, const BinaryMask& gt);

struct MapperEpochLog {
  int epoch = 0;  // global epoch index, phase 2 continues the count
  int phase = 1;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t skipped = 0;  // samples with all-background labels
  std::optional<CorrectionReport> correction;
};

struct MapperTraining {
  ModelCheckpoint checkpoint;
  std::vector<MapperEpochLog> history;
};

// Stateful trainer so a caller can snapshot the phase-1 model before
// continuing with label correction. RMSprop state and the learning-rate
// schedule carry across phases.
class MapperTrainer {
 public:
  MapperTrainer(MapperModel& model, const std::vector<Tile>& tiles, LabelStore& store);

  MapperEpochLog run_epoch(int phase);
  void train_phase1();
  // Runs epochs_phase2 epochs; when `corrector` is set a correction step runs
  // after every `cadence`-th phase-2 epoch.
  void train_phase2(const std::optional<CorrectionParams>& corrector);

  int epoch() const { return epoch_; }
  const std::vector<MapperEpochLog>& history() const { return history_; }
  // Weights plus optimizer state and epoch counter.
  ModelCheckpoint checkpoint() const;
  // Continues from a trainer checkpoint whose weights are already in the model.
  // Training after resume matches an uninterrupted run exactly. Throws CheckpointError.
  void resume(const ModelCheckpoint& ckpt);

 private:
  MapperModel& model_;
  const std::vector<Tile>& tiles_;
  LabelStore& store_;
  nn::RmsProp optimizer_;
  int epoch_ = 0;
  std::vector<MapperEpochLog> history_;
};

// Phase 1 then phase 2. Without a corrector and with epochs_phase2 = 0 this is
// the initial-labels-only variant. Throws MissingLabel.
MapperTraining train_mapper(MapperModel& model, const std::vector<Tile>& tiles, LabelStore& store,
                            const std::optional<CorrectionParams>& corrector);

ModelCheckpoint mapper_checkpoint(const MapperModel& model);
MapperModel mapper_from_checkpoint(const ModelCheckpoint& ckpt);

}  // namespace pseudoseg
