#include "pseudoseg/correction.hpp"

#include <algorithm>
#include <vector>

#include "pseudoseg/errors.hpp"

namespace pseudoseg {

void CorrectionParams::validate() const {
  if (!(beta1 < beta2) || !(gamma1 < gamma2) || !(delta1 < delta2))
    throw Error(ErrorCode::BadConfig, "correction bounds must satisfy lower < upper");
  if (se1_size < 1 || se1_size % 2 == 0 || se2_size < 1 || se2_size % 2 == 0)
    throw Error(ErrorCode::BadConfig, "structuring element sizes must be odd and positive");
  if (cadence < 1) throw Error(ErrorCode::BadConfig, "correction cadence must be >= 1");
}

std::string to_string(LabelDecision d) {
  switch (d) {
    case LabelDecision::AcceptRefined: return "accept_refined";
    case LabelDecision::FallbackInitial: return "fallback_initial";
    case LabelDecision::KeepCurrent: return "keep_current";
  }
  return "keep_current";
}

namespace {

bool in_open_interval(double value, double lo, double hi) { return value > lo && value < hi; }

// Separable min/max filter over a square window: `dilate_mode` true gives
// dilation (any), false gives erosion (all, with out-of-image as 0).
BinaryMask square_filter(const BinaryMask& mask, int se_size, bool dilate_mode) {
  const int r = se_size / 2;
  const int h = mask.height();
  const int w = mask.width();
  BinaryMask rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool acc = !dilate_mode;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        const bool v = xx >= 0 && xx < w && mask(y, xx);
        acc = dilate_mode ? (acc || v) : (acc && v);
      }
      rows.set(y, x, acc);
    }
  }
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool acc = !dilate_mode;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        const bool v = yy >= 0 && yy < h && rows(yy, x);
        acc = dilate_mode ? (acc || v) : (acc && v);
      }
      out.set(y, x, acc);
    }
  }
  return out;
}

}  // namespace

CriteriaVerdict evaluate_criteria(std::size_t cand_fore, std::size_t init_fore, std::optional<std::size_t> prev_fore,
                                  std::size_t n_pixels, const CorrectionParams& p) {
  if (n_pixels == 0) throw Error(ErrorCode::BadN, "pixel count must be positive");
  const auto cand = static_cast<double>(cand_fore);
  const auto n = static_cast<double>(n_pixels);
  const auto init = static_cast<double>(init_fore);
  CriteriaVerdict v;
  v.c1 = in_open_interval(cand, p.beta1 * n, p.beta2 * n);
  v.c2 = in_open_interval(cand, p.gamma1 * init, p.gamma2 * init);
  v.c3 = !prev_fore || in_open_interval(cand, p.delta1 * static_cast<double>(*prev_fore),
                                        p.delta2 * static_cast<double>(*prev_fore));
  return v;
}

LabelDecision decide(const CriteriaVerdict& v) {
  if (!v.c1) return LabelDecision::FallbackInitial;
  if (!v.c2) return LabelDecision::FallbackInitial;
  if (!v.c3) return LabelDecision::KeepCurrent;
  return LabelDecision::AcceptRefined;
}

BinaryMask erode(const BinaryMask& mask, int se_size) { return square_filter(mask, se_size, false); }
BinaryMask dilate(const BinaryMask& mask, int se_size) { return square_filter(mask, se_size, true); }
BinaryMask opening(const BinaryMask& mask, int se_size) { return dilate(erode(mask, se_size), se_size); }

BinaryMask refine_mask(const ScoreMap& score, const CorrectionParams& params) {
  return dilate(opening(otsu_binarize(score), params.se1_size), params.se2_size);
}

CorrectionReport correction_step(const std::map<std::string, ScoreMap>& outputs, LabelStore& store,
                                 const CorrectionParams& params) {
  struct Pending {
    LabelRecord* record;
    LabelDecision decision;
    BinaryMask refined;
    std::size_t cand_fore;
  };
  CorrectionReport report;
  std::vector<Pending> pending;
  for (const auto& [id, score] : outputs) {
    if (!store.contains(id)) throw Error(ErrorCode::MissingRecord, id);
    LabelRecord& rec = store.at(id);
    const std::size_t cand = foreground_count(otsu_binarize(score));
    TileCorrection tc;
    tc.cand_fore = cand;
    tc.verdict = evaluate_criteria(cand, foreground_count(rec.gt0()), rec.prev_fore, score.size(), params);
    tc.decision = decide(tc.verdict);
    BinaryMask refined;
    if (tc.decision == LabelDecision::AcceptRefined) refined = refine_mask(score, params);
    pending.push_back({&rec, tc.decision, std::move(refined), cand});
    report.per_tile.emplace(id, tc);
  }

  double delta_sum = 0.0;
  for (Pending& p : pending) {
    const auto before = static_cast<double>(foreground_count(p.record->gt_current));
    switch (p.decision) {
      case LabelDecision::AcceptRefined:
        p.record->gt_current = std::move(p.refined);
        p.record->prev_fore = p.cand_fore;
        ++report.accepted;
        break;
      case LabelDecision::FallbackInitial:
        p.record->gt_current = p.record->gt0();
        p.record->prev_fore.reset();
        ++report.fallback;
        break;
      case LabelDecision::KeepCurrent:
        ++report.kept;
        break;
    }
    delta_sum += static_cast<double>(foreground_count(p.record->gt_current)) - before;
  }
  report.mean_foreground_delta = pending.empty() ? 0.0 : delta_sum / static_cast<double>(pending.size());
  return report;
}

}  // namespace pseudoseg
