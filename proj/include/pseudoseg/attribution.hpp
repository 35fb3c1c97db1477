#pragma once

#include <string>
#include <vector>

#include "pseudoseg/classifier.hpp"
#include "pseudoseg/image.hpp"
#include "pseudoseg/nn.hpp"

namespace pseudoseg {

// Rectified gradient-weighted combination of one conv layer's feature maps.
struct ActivationMap {
  ScoreMap values;  // h_i x w_i, nonnegative
  std::string source_layer;
  ClassId class_id = ClassId::Positive;
};

// Spatially averaged gradients of the class score, one per feature channel.
struct GradWeights {
  std::vector<double> w_hat;
};

struct GradCam {
  ActivationMap map;
  GradWeights weights;
};

// Class score = pre-softmax logit of `class_id`. Works on any layer stack
// whose output is a logit vector; `input` is the network input tensor.
// Throws UnknownLayer or NonFiniteGradient.
GradCam gradcam_full(const nn::LayerStack& net, const Tensor& input, const std::string& layer, ClassId class_id);

ActivationMap gradcam(const ClassifierModel& model, const Tile& tile, const std::string& layer, ClassId class_id);

// Bilinear resize (pixel-centre aligned, edge clamped) followed by per-map
// min-max normalisation to [0, 1]; constant maps become all zeros.
// Throws BadTarget when the target is smaller than the source.
ScoreMap upsample_map(const ScoreMap& map, int target_height, int target_width);
inline ScoreMap upsample_map(const ActivationMap& map, int target_height, int target_width) {
  return upsample_map(map.values, target_height, target_width);
}

// Resize only, no normalisation.
ScoreMap resize_bilinear(const ScoreMap& map, int target_height, int target_width);

}  // namespace pseudoseg
