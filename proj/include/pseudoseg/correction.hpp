#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>

#include "pseudoseg/image.hpp"
#include "pseudoseg/pseudolabels.hpp"

namespace pseudoseg {

struct CorrectionParams {
  double beta1 = 0.01;
  double beta2 = 0.1;
  double gamma1 = 0.6;
  double gamma2 = 1.4;
  double delta1 = 0.8;
  double delta2 = 1.2;
  int se1_size = 5;  // opening
  int se2_size = 3;  // final dilation
  int cadence = 2;   // epochs between checks

  void validate() const;
};

// c1: size range, c2: consistency with the initial label, c3: stability
// against the previous accepted output.
struct CriteriaVerdict {
  bool c1 = false;
  bool c2 = false;
  bool c3 = false;
  friend bool operator==(const CriteriaVerdict&, const CriteriaVerdict&) = default;
};

enum class LabelDecision { AcceptRefined, FallbackInitial, KeepCurrent };
std::string to_string(LabelDecision d);

// Open-interval tests on foreground counts. c3 is vacuously true without a
// previous count. Throws BadN when n_pixels == 0.
CriteriaVerdict evaluate_criteria(std::size_t cand_fore, std::size_t init_fore, std::optional<std::size_t> prev_fore,
                                  std::size_t n_pixels, const CorrectionParams& params);

// Precedence c1, then c2, then c3.
LabelDecision decide(const CriteriaVerdict& verdict);

// Square all-ones structuring element of odd side; pixels outside the image
// count as background.
BinaryMask erode(const BinaryMask& mask, int se_size);
BinaryMask dilate(const BinaryMask& mask, int se_size);
// Erosion followed by dilation.
BinaryMask opening(const BinaryMask& mask, int se_size);

// Otsu binarisation, opening with SE1, dilation with SE2.
BinaryMask refine_mask(const ScoreMap& foreground_score, const CorrectionParams& params);

struct TileCorrection {
  std::size_t cand_fore = 0;  // foreground of the Otsu-binarised output
  CriteriaVerdict verdict;
  LabelDecision decision = LabelDecision::KeepCurrent;
};

struct CorrectionReport {
  int epoch = 0;
  std::size_t accepted = 0;
  std::size_t fallback = 0;
  std::size_t kept = 0;
  double mean_foreground_delta = 0.0;  // mean change of gt_current foreground
  std::map<std::string, TileCorrection> per_tile;
};

// Applies one round of the correction rules to every record named in
// `outputs` (tile id -> foreground score map). All decisions are computed
// first, then committed together. Throws MissingRecord.
CorrectionReport correction_step(const std::map<std::string, ScoreMap>& outputs, LabelStore& store,
                                 const CorrectionParams& params);

}  // namespace pseudoseg
