#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/image.hpp"
#include "pseudoseg/tiles.hpp"

namespace pseudoseg {

struct MapperModel;

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Throws ShapeMismatch.
Confusion confusion(const BinaryMask& pred, const BinaryMask& gt);

// Zero denominators give 0.
double accuracy(const Confusion& c);
double precision(const Confusion& c);
double recall(const Confusion& c);
// (1 + theta^2) P R / (theta^2 P + R); 0 when the denominator is 0.
double f_measure(double p, double r, double theta_sq = 0.3);

struct CurvePoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// 256 uniform levels j/255, j = 0..255.
std::vector<double> default_thresholds();

// Confusion at every threshold (prediction = score > t); thresholds ascending.
std::vector<Confusion> sweep_confusions(const ScoreMap& score, const BinaryMask& gt, const std::vector<double>& thresholds);
std::vector<CurvePoint> curve_points(const std::vector<Confusion>& confusions, const std::vector<double>& thresholds);
std::vector<CurvePoint> sweep_curves(const ScoreMap& score, const BinaryMask& gt, const std::vector<double>& thresholds);

// Trapezoidal area under (x, y) points sorted by x.
double auc(const std::vector<std::pair<double, double>>& points);
// ROC area of a sweep, anchored at (0,0) and (1,1).
double roc_auc(const std::vector<CurvePoint>& curve);

enum class Aggregation { Global, PerImage };
std::string to_string(Aggregation a);

struct TileMetrics {
  std::string id;
  double threshold = 0.0;  // per-map Otsu threshold
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

struct EvaluationReport {
  Aggregation aggregation = Aggregation::Global;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  double auc = 0.0;
  std::vector<TileMetrics> per_tile;
  std::vector<CurvePoint> curve;

  nlohmann::json to_json() const;
  // threshold,fpr,tpr,precision,recall
  void write_curve_csv(const std::filesystem::path& path) const;
};

using Predictor = std::function<ScoreMap(const Tile&)>;

// Binary metrics at each map's Otsu threshold; curve metrics from a sweep
// pooled over every pixel of the set. Throws MissingMask.
EvaluationReport evaluate_dataset(const Predictor& predict, const std::vector<Tile>& tiles,
                                  Aggregation aggregation = Aggregation::Global,
                                  const std::vector<double>& thresholds = default_thresholds());
EvaluationReport evaluate_dataset(const MapperModel& model, const std::vector<Tile>& tiles,
                                  Aggregation aggregation = Aggregation::Global);

}  // namespace pseudoseg
