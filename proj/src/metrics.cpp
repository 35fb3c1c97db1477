#include "pseudoseg/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

#include "pseudoseg/errors.hpp"
#include "pseudoseg/mapper.hpp"
#include "pseudoseg/pseudolabels.hpp"

namespace pseudoseg {
using nlohmann::json;

Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.same_shape(gt)) throw Error(ErrorCode::ShapeMismatch, "prediction and reference differ in size");
  Confusion c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    if (p && g)
      ++c.tp;
    else if (!p && !g)
      ++c.tn;
    else if (p)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double accuracy(const Confusion& c) { return ratio(c.tp + c.tn, c.total()); }
double precision(const Confusion& c) { return ratio(c.tp, c.tp + c.fp); }
double recall(const Confusion& c) { return ratio(c.tp, c.tp + c.fn); }

double f_measure(double p, double r, double theta_sq) {
  const double den = theta_sq * p + r;
  return den == 0.0 ? 0.0 : (1.0 + theta_sq) * p * r / den;
}

std::vector<double> default_thresholds() {
  std::vector<double> t(256);
  for (int j = 0; j < 256; ++j) t[j] = j / 255.0;
  return t;
}

std::vector<Confusion> sweep_confusions(const ScoreMap& score, const BinaryMask& gt, const std::vector<double>& thresholds) {
  if (score.height != gt.height() || score.width != gt.width())
    throw Error(ErrorCode::ShapeMismatch, "score map and reference differ in size");
  // A pixel is predicted positive at threshold index j iff j < (number of thresholds below its value).
  const std::size_t n = thresholds.size();
  std::vector<std::uint64_t> pos_hits(n + 1, 0), neg_hits(n + 1, 0);
  std::uint64_t positives = 0, negatives = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double v = score.values[i];
    const auto below = static_cast<std::size_t>(std::lower_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
    if (gt[i]) {
      ++pos_hits[below];
      ++positives;
    } else {
      ++neg_hits[below];
      ++negatives;
    }
  }
  // Suffix sums: count of pixels with more than j thresholds below their value.
  std::vector<Confusion> out(n);
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t j = n; j-- > 0;) {
    tp += pos_hits[j + 1];
    fp += neg_hits[j + 1];
    out[j] = Confusion{tp, negatives - fp, fp, positives - tp};
  }
  return out;
}

std::vector<CurvePoint> curve_points(const std::vector<Confusion>& confusions, const std::vector<double>& thresholds) {
  std::vector<CurvePoint> out(confusions.size());
  for (std::size_t j = 0; j < confusions.size(); ++j) {
    const Confusion& c = confusions[j];
    out[j] = {thresholds[j], ratio(c.fp, c.fp + c.tn), ratio(c.tp, c.tp + c.fn), precision(c), recall(c)};
  }
  return out;
}

std::vector<CurvePoint> sweep_curves(const ScoreMap& score, const BinaryMask& gt, const std::vector<double>& thresholds) {
  return curve_points(sweep_confusions(score, gt, thresholds), thresholds);
}

double auc(const std::vector<std::pair<double, double>>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].first - points[i - 1].first) * (points[i].second + points[i - 1].second) / 2.0;
  return area;
}

double roc_auc(const std::vector<CurvePoint>& curve) {
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}, {1.0, 1.0}};
  for (const CurvePoint& p : curve) pts.emplace_back(p.fpr, p.tpr);
  std::sort(pts.begin(), pts.end());
  return std::clamp(auc(pts), 0.0, 1.0);
}

std::string to_string(Aggregation a) { return a == Aggregation::Global ? "global" : "per-image"; }

json EvaluationReport::to_json() const {
  json tiles = json::array();
  for (const TileMetrics& t : per_tile)
    tiles.push_back({{"id", t.id},
                     {"threshold", t.threshold},
                     {"tp", t.confusion.tp},
                     {"tn", t.confusion.tn},
                     {"fp", t.confusion.fp},
                     {"fn", t.confusion.fn},
                     {"AC", t.accuracy},
                     {"P", t.precision},
                     {"R", t.recall},
                     {"F", t.f_measure}});
  return {{"aggregation", to_string(aggregation)},
          {"AC", accuracy},
          {"P", precision},
          {"R", recall},
          {"F_theta", f_measure},
          {"theta_sq", 0.3},
          {"AUC", auc},
          {"per_tile", tiles}};
}

void EvaluationReport::write_curve_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "threshold,fpr,tpr,precision,recall\n" << std::setprecision(9);
  for (const CurvePoint& p : curve)
    out << p.threshold << ',' << p.fpr << ',' << p.tpr << ',' << p.precision << ',' << p.recall << '\n';
}

EvaluationReport evaluate_dataset(const Predictor& predict, const std::vector<Tile>& tiles, Aggregation aggregation,
                                  const std::vector<double>& thresholds) {
  EvaluationReport report;
  report.aggregation = aggregation;
  Confusion pooled;
  std::vector<Confusion> sweep(thresholds.size());
  for (const Tile& tile : tiles) {
    if (!tile.ref_mask) throw Error(ErrorCode::MissingMask, tile.id);
    const ScoreMap score = predict(tile);
    TileMetrics m;
    m.id = tile.id;
    m.threshold = otsu_threshold(score);
    m.confusion = confusion(binarize(score, m.threshold), *tile.ref_mask);
    m.accuracy = pseudoseg::accuracy(m.confusion);
    m.precision = pseudoseg::precision(m.confusion);
    m.recall = pseudoseg::recall(m.confusion);
    m.f_measure = pseudoseg::f_measure(m.precision, m.recall);
    pooled += m.confusion;
    const auto tile_sweep = sweep_confusions(score, *tile.ref_mask, thresholds);
    for (std::size_t j = 0; j < sweep.size(); ++j) sweep[j] += tile_sweep[j];
    report.per_tile.push_back(std::move(m));
  }
  if (aggregation == Aggregation::Global) {
    report.accuracy = pseudoseg::accuracy(pooled);
    report.precision = pseudoseg::precision(pooled);
    report.recall = pseudoseg::recall(pooled);
    report.f_measure = pseudoseg::f_measure(report.precision, report.recall);
  } else if (!report.per_tile.empty()) {
    for (const TileMetrics& m : report.per_tile) {
      report.accuracy += m.accuracy;
      report.precision += m.precision;
      report.recall += m.recall;
      report.f_measure += m.f_measure;
    }
    const auto n = static_cast<double>(report.per_tile.size());
    report.accuracy /= n;
    report.precision /= n;
    report.recall /= n;
    report.f_measure /= n;
  }
  report.curve = curve_points(sweep, thresholds);
  report.auc = roc_auc(report.curve);
  return report;
}

EvaluationReport evaluate_dataset(const MapperModel& model, const std::vector<Tile>& tiles, Aggregation aggregation) {
  return evaluate_dataset([&](const Tile& t) { return mapper_forward(model, t).f0; }, tiles, aggregation);
}

}  // namespace pseudoseg
