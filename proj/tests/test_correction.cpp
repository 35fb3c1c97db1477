#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pseudoseg/correction.hpp"
#include "pseudoseg/errors.hpp"
#include "pseudoseg/hashing.hpp"
#include "test_util.hpp"

using namespace pseudoseg;

namespace {

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

BinaryMask block(int h, int w, int y0, int x0, int bh, int bw) {
  BinaryMask m(h, w);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m.set(y, x, true);
  return m;
}

ScoreMap score_of(const BinaryMask& m, float on = 0.9f, float off = 0.1f) {
  ScoreMap s(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) s.values[i] = m[i] ? on : off;
  return s;
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask c(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) c.set(i, !m[i]);
  return c;
}

std::string mask_digest(const BinaryMask& m) {
  return sha256_hex(std::string(m.bits().begin(), m.bits().end()));
}

// Eqs. of the three rules restated from raw counts.
CriteriaVerdict replay(std::size_t cand, std::size_t init, std::optional<std::size_t> prev, std::size_t n,
                       const CorrectionParams& p) {
  const double c = static_cast<double>(cand);
  CriteriaVerdict v;
  v.c1 = p.beta1 * n < c && c < p.beta2 * n;
  v.c2 = p.gamma1 * init < c && c < p.gamma2 * init;
  v.c3 = !prev || (p.delta1 * *prev < c && c < p.delta2 * *prev);
  return v;
}

}  // namespace

TEST(ForegroundCount, Examples) {
  EXPECT_EQ(foreground_count(BinaryMask(16, 16)), 0u);
  EXPECT_EQ(foreground_count(BinaryMask(16, 16, 1)), 256u);
  Rng rng(1);
  const BinaryMask m = oracle::random_mask(rng, 23, 17);
  std::size_t n = 0;
  for (int y = 0; y < 23; ++y)
    for (int x = 0; x < 17; ++x) n += m(y, x) ? 1 : 0;
  EXPECT_EQ(foreground_count(m), n);
}

TEST(Criteria, WorkedExample) {
  const CorrectionParams p;
  EXPECT_EQ(evaluate_criteria(3000, 2800, 2900, 65536, p), (CriteriaVerdict{true, true, true}));
  const CriteriaVerdict small = evaluate_criteria(100, 2800, 2900, 65536, p);
  EXPECT_FALSE(small.c1);
  EXPECT_FALSE(small.c2);
}

TEST(Criteria, DegenerateCases) {
  const CorrectionParams p;
  const CriteriaVerdict zero = evaluate_criteria(0, 500, std::nullopt, 10000, p);
  EXPECT_FALSE(zero.c1);
  EXPECT_FALSE(zero.c2);
  const CriteriaVerdict same = evaluate_criteria(500, 500, std::nullopt, 10000, p);
  EXPECT_TRUE(same.c2);
  EXPECT_TRUE(same.c3);
  EXPECT_ERROR_CODE(evaluate_criteria(1, 1, std::nullopt, 0, p), ErrorCode::BadN);
}

TEST(Criteria, OpenIntervalBoundaries) {
  const CorrectionParams p;
  // beta1 * 10000 = 100, beta2 * 10000 = 1000
  EXPECT_FALSE(evaluate_criteria(100, 100, std::nullopt, 10000, p).c1);
  EXPECT_TRUE(evaluate_criteria(101, 100, std::nullopt, 10000, p).c1);
  EXPECT_FALSE(evaluate_criteria(1000, 1000, std::nullopt, 10000, p).c1);
  // gamma bounds 300 and 700 for init 500
  EXPECT_FALSE(evaluate_criteria(300, 500, std::nullopt, 10000, p).c2);
  EXPECT_TRUE(evaluate_criteria(301, 500, std::nullopt, 10000, p).c2);
  EXPECT_FALSE(evaluate_criteria(700, 500, std::nullopt, 10000, p).c2);
  // delta bounds 400 and 600 for prev 500
  EXPECT_FALSE(evaluate_criteria(400, 500, 500, 10000, p).c3);
  EXPECT_TRUE(evaluate_criteria(599, 500, 500, 10000, p).c3);
  EXPECT_FALSE(evaluate_criteria(600, 500, 500, 10000, p).c3);
}

TEST(Criteria, MatchesRuleReplay) {
  Rng rng(2);
  const CorrectionParams p;
  for (int trial = 0; trial < 5000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 70000));
    const auto cand = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n / 5)));
    const auto init = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n / 5)));
    std::optional<std::size_t> prev;
    if (rng.bernoulli(0.7)) prev = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n / 5)));
    ASSERT_EQ(evaluate_criteria(cand, init, prev, n, p), replay(cand, init, prev, n, p)) << trial;
  }
}

TEST(Decide, AllEightCombinations) {
  for (int bits = 0; bits < 8; ++bits) {
    const CriteriaVerdict v{(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0};
    LabelDecision expected;
    if (!v.c1 || !v.c2)
      expected = LabelDecision::FallbackInitial;
    else if (!v.c3)
      expected = LabelDecision::KeepCurrent;
    else
      expected = LabelDecision::AcceptRefined;
    EXPECT_EQ(decide(v), expected) << bits;
  }
  EXPECT_EQ(decide({true, true, true}), LabelDecision::AcceptRefined);
  EXPECT_EQ(decide({false, true, true}), LabelDecision::FallbackInitial);
  EXPECT_EQ(decide({true, true, false}), LabelDecision::KeepCurrent);
}

TEST(Morphology, Examples) {
  BinaryMask dot(7, 7);
  dot.set(3, 3, true);
  EXPECT_EQ(dilate(dot, 3), block(7, 7, 2, 2, 3, 3));
  EXPECT_EQ(erode(block(7, 7, 2, 2, 3, 3), 3), dot);
  EXPECT_EQ(foreground_count(opening(dot, 3)), 0u);
  // Zero padding: a full mask erodes away from the border.
  EXPECT_EQ(erode(BinaryMask(5, 5, 1), 3), block(5, 5, 1, 1, 3, 3));
}

TEST(Morphology, MatchesSetOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const BinaryMask m = oracle::random_mask(rng, 32, 32);
    for (int s : {1, 3, 5}) {
      EXPECT_EQ(erode(m, s), oracle::erode(m, s));
      EXPECT_EQ(dilate(m, s), oracle::dilate(m, s));
      EXPECT_EQ(opening(m, s), oracle::opening(m, s));
    }
  }
}

TEST(Morphology, Properties) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(8, 30)), w = static_cast<int>(rng.uniform_int(8, 30));
    const BinaryMask m = oracle::random_mask(rng, h, w);
    for (int s : {3, 5}) {
      const BinaryMask o = opening(m, s);
      EXPECT_TRUE(subset(o, m));
      EXPECT_EQ(opening(o, s), o);
      EXPECT_TRUE(subset(m, dilate(m, s)));
      // Duality away from the border, where zero padding breaks the symmetry.
      const BinaryMask e = erode(m, s);
      const BinaryMask d = complement(dilate(complement(m), s));
      const int r = s / 2;
      for (int y = r; y < h - r; ++y)
        for (int x = r; x < w - r; ++x) EXPECT_EQ(e(y, x), d(y, x));
    }
  }
}

TEST(Refine, Examples) {
  const CorrectionParams p;
  BinaryMask dot(20, 20);
  dot.set(10, 10, true);
  EXPECT_EQ(foreground_count(refine_mask(score_of(dot), p)), 0u);
  const BinaryMask b10 = block(30, 30, 10, 10, 10, 10);
  EXPECT_EQ(refine_mask(score_of(b10), p), block(30, 30, 9, 9, 12, 12));
  EXPECT_EQ(foreground_count(refine_mask(ScoreMap(16, 16, 0.0f), p)), 0u);
}

TEST(Refine, ContainsOpening) {
  Rng rng(5);
  const CorrectionParams p;
  for (int trial = 0; trial < 30; ++trial) {
    const ScoreMap s = oracle::random_map(rng, 24, 24);
    const BinaryMask bin = binarize(s, oracle::otsu(s));
    const BinaryMask opened = oracle::opening(bin, p.se1_size);
    const BinaryMask refined = refine_mask(s, p);
    EXPECT_TRUE(subset(opened, refined));
    EXPECT_EQ(refined, oracle::dilate(opened, p.se2_size));
  }
}

TEST(CorrectionParams, Validation) {
  CorrectionParams p;
  EXPECT_NO_THROW(p.validate());
  p.beta1 = 0.2;
  EXPECT_ERROR_CODE(p.validate(), ErrorCode::BadConfig);
  p = CorrectionParams{};
  p.se1_size = 4;
  EXPECT_ERROR_CODE(p.validate(), ErrorCode::BadConfig);
}

namespace {

struct StoreFixture {
  LabelStore store;
  std::map<std::string, std::string> gt0_digest;

  StoreFixture(int n, int size, Rng& rng) {
    for (int i = 0; i < n; ++i) {
      const int side = static_cast<int>(rng.uniform_int(8, 14));
      const BinaryMask init = block(size, size, 4, 4, side, side);
      LabelRecord rec("t" + std::to_string(i), init, Provenance::OriginalPositive);
      if (i % 3 == 0) rec.prev_fore = static_cast<std::size_t>(rng.uniform_int(20, 200));
      gt0_digest[rec.tile_id()] = mask_digest(init);
      store.insert(std::move(rec));
    }
  }
};

}  // namespace

TEST(CorrectionStep, AllAcceptedReplacesEveryLabel) {
  Rng rng(6);
  StoreFixture f(5, 64, rng);
  std::map<std::string, ScoreMap> outputs;
  for (auto& [id, rec] : f.store.records()) {
    rec.prev_fore.reset();
    outputs[id] = score_of(rec.gt0());
  }
  const CorrectionParams p;
  const CorrectionReport r = correction_step(outputs, f.store, p);
  EXPECT_EQ(r.accepted, 5u);
  for (const auto& [id, rec] : f.store.records()) {
    EXPECT_EQ(rec.gt_current, refine_mask(outputs[id], p));
    EXPECT_EQ(rec.prev_fore, foreground_count(rec.gt0()));
  }
}

TEST(CorrectionStep, ZeroOutputsFallBack) {
  Rng rng(7);
  StoreFixture f(4, 32, rng);
  std::map<std::string, ScoreMap> outputs;
  for (auto& [id, rec] : f.store.records()) {
    rec.gt_current = BinaryMask(32, 32, 1);
    outputs[id] = ScoreMap(32, 32, 0.0f);
  }
  const CorrectionReport r = correction_step(outputs, f.store, {});
  EXPECT_EQ(r.fallback, 4u);
  for (const auto& [id, rec] : f.store.records()) {
    EXPECT_EQ(rec.gt_current, rec.gt0());
    EXPECT_FALSE(rec.prev_fore.has_value());
  }
}

TEST(CorrectionStep, MixedBatchMatchesReplay) {
  Rng rng(8);
  StoreFixture f(40, 64, rng);
  const CorrectionParams p;
  std::map<std::string, ScoreMap> outputs;
  int i = 0;
  for (auto& [id, rec] : f.store.records()) {
    const auto init = static_cast<int>(foreground_count(rec.gt0()));
    const int side = static_cast<int>(std::lround(std::sqrt(init))) + static_cast<int>(rng.uniform_int(-2, 2));
    if (i % 4 == 0) {
      outputs[id] = ScoreMap(64, 64, 0.0f);
    } else {
      if (i % 3 == 0) rec.prev_fore = static_cast<std::size_t>(init) * 2;
      outputs[id] = score_of(block(64, 64, 20, 25, side, side), 0.8f, static_cast<float>(rng.uniform(0.0, 0.2)));
    }
    ++i;
  }
  std::map<std::string, LabelRecord> before = f.store.records();
  const CorrectionReport r = correction_step(outputs, f.store, p);
  std::size_t acc = 0, fb = 0, kept = 0;
  for (const auto& [id, score] : outputs) {
    const LabelRecord& old = before.at(id);
    const std::size_t cand = foreground_count(binarize(score, oracle::otsu(score)));
    const CriteriaVerdict v = replay(cand, foreground_count(old.gt0()), old.prev_fore, score.size(), p);
    const LabelRecord& now = f.store.at(id);
    EXPECT_EQ(r.per_tile.at(id).verdict, v) << id;
    EXPECT_EQ(r.per_tile.at(id).cand_fore, cand);
    if (v.c1 && v.c2 && v.c3) {
      ++acc;
      EXPECT_EQ(now.gt_current, oracle::dilate(oracle::opening(binarize(score, oracle::otsu(score)), 5), 3));
      EXPECT_EQ(now.prev_fore, cand);
    } else if (!v.c1 || !v.c2) {
      ++fb;
      EXPECT_EQ(now.gt_current, old.gt0());
      EXPECT_FALSE(now.prev_fore);
    } else {
      ++kept;
      EXPECT_EQ(now.gt_current, old.gt_current);
      EXPECT_EQ(now.prev_fore, old.prev_fore);
    }
    EXPECT_EQ(mask_digest(now.gt0()), f.gt0_digest.at(id));
  }
  EXPECT_EQ(r.accepted, acc);
  EXPECT_EQ(r.fallback, fb);
  EXPECT_EQ(r.kept, kept);
  EXPECT_GT(acc, 0u);
  EXPECT_GT(fb, 0u);
  EXPECT_GT(kept, 0u);
}

TEST(CorrectionStep, MissingRecord) {
  LabelStore store;
  std::map<std::string, ScoreMap> outputs{{"ghost", ScoreMap(4, 4, 0.5f)}};
  EXPECT_ERROR_CODE(correction_step(outputs, store, {}), ErrorCode::MissingRecord);
}
