#include "pseudoseg/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/errors.hpp"

namespace pseudoseg {

GradCam gradcam_full(const nn::LayerStack& net, const Tensor& input, const std::string& layer, ClassId class_id) {
  const auto tap = net.feature_tap(layer);
  if (!tap) throw Error(ErrorCode::UnknownLayer, layer);

  std::vector<nn::LayerCache> caches;
  const Tensor features = net.forward(input, &caches, 0, *tap + 1);
  const Tensor logits = net.forward(features, &caches, *tap + 1);
  const auto cls = static_cast<std::size_t>(class_id);
  if (cls >= logits.size()) throw Error(ErrorCode::UnknownLayer, "network has no output for the requested class");

  Tensor seed(logits.channels, logits.height, logits.width);
  seed.data[cls] = 1.0f;
  const Tensor grad = net.backward_input(seed, caches, *tap + 1);

  GradCam out;
  out.weights.w_hat.resize(features.channels);
  const double n = static_cast<double>(features.plane_size());
  for (int k = 0; k < features.channels; ++k) {
    double sum = 0.0;
    for (float g : grad.plane(k)) sum += g;
    out.weights.w_hat[k] = sum / n;
    if (!std::isfinite(out.weights.w_hat[k]))
      throw Error(ErrorCode::NonFiniteGradient, "layer " + layer + " channel " + std::to_string(k));
  }

  ScoreMap map(features.height, features.width);
  for (std::size_t i = 0; i < map.size(); ++i) {
    double acc = 0.0;
    for (int k = 0; k < features.channels; ++k) acc += out.weights.w_hat[k] * features.data[k * map.size() + i];
    map.values[i] = static_cast<float>(std::max(acc, 0.0));
  }
  out.map = ActivationMap{std::move(map), layer, class_id};
  return out;
}

ActivationMap gradcam(const ClassifierModel& model, const Tile& tile, const std::string& layer, ClassId class_id) {
  if (tile.height() != model.config.input_size || tile.width() != model.config.input_size)
    throw Error(ErrorCode::ShapeMismatch, "tile " + tile.id + " does not match the classifier input size");
  return gradcam_full(model.net, network_input(tile), layer, class_id).map;
}

ScoreMap resize_bilinear(const ScoreMap& map, int target_height, int target_width) {
  if (map.height <= 0 || map.width <= 0) throw Error(ErrorCode::BadTarget, "empty source map");
  if (target_height < map.height || target_width < map.width)
    throw Error(ErrorCode::BadTarget, "target " + std::to_string(target_height) + "x" + std::to_string(target_width) +
                                          " is smaller than the source");
  ScoreMap out(target_height, target_width);
  const double sy = static_cast<double>(map.height) / target_height;
  const double sx = static_cast<double>(map.width) / target_width;
  for (int y = 0; y < target_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, map.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, map.height - 1);
    const double ay = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, map.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, map.width - 1);
      const double ax = fx - x0;
      const double top = (1 - ax) * map(y0, x0) + ax * map(y0, x1);
      const double bottom = (1 - ax) * map(y1, x0) + ax * map(y1, x1);
      out(y, x) = static_cast<float>((1 - ay) * top + ay * bottom);
    }
  }
  return out;
}

ScoreMap upsample_map(const ScoreMap& map, int target_height, int target_width) {
  ScoreMap out = resize_bilinear(map, target_height, target_width);
  const auto [lo_it, hi_it] = std::minmax_element(out.values.begin(), out.values.end());
  const float lo = *lo_it;
  const float range = *hi_it - lo;
  if (!(range > 0.0f)) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  for (float& v : out.values) v = std::clamp((v - lo) / range, 0.0f, 1.0f);
  return out;
}

}  // namespace pseudoseg
