#include <fstream>

#include <gtest/gtest.h>

#include "pseudoseg/config.hpp"
#include "pseudoseg/errors.hpp"
#include "test_util.hpp"

using namespace pseudoseg;

TEST(Config, DefaultFileHoldsReferenceSettings) {
  const PipelineConfig cfg = load_config(std::filesystem::path(PSEUDOSEG_SOURCE_DIR) / "configs" / "default.toml");
  EXPECT_EQ(cfg.classifier.learning_rate, 1e-4);
  EXPECT_EQ(cfg.classifier.batch_size, 16);
  EXPECT_EQ(cfg.classifier.width_multiplier, 1.0);
  EXPECT_EQ(cfg.classifier.input_size, 256);
  EXPECT_EQ(cfg.mapper.lr0, 1e-3);
  EXPECT_EQ(cfg.mapper.lr_decay, 0.8);
  EXPECT_EQ(cfg.mapper.decay_every, 20);
  EXPECT_EQ(cfg.mapper.batch_size, 15);
  EXPECT_EQ(cfg.mapper.epochs_phase1, 800);
  EXPECT_EQ(cfg.mapper.epochs_phase2, 40);
  const CorrectionParams& c = cfg.correction.params;
  EXPECT_EQ(c.beta1, 0.01);
  EXPECT_EQ(c.beta2, 0.1);
  EXPECT_EQ(c.gamma1, 0.6);
  EXPECT_EQ(c.gamma2, 1.4);
  EXPECT_EQ(c.delta1, 0.8);
  EXPECT_EQ(c.delta2, 1.2);
  EXPECT_EQ(c.se1_size, 5);
  EXPECT_EQ(c.se2_size, 3);
  EXPECT_EQ(c.cadence, 2);
  EXPECT_TRUE(cfg.correction.enabled);
  EXPECT_EQ(cfg.attribution.layer, "conv4_3");
  EXPECT_EQ(cfg.attribution.class_id, ClassId::Positive);
  EXPECT_EQ(cfg.pseudolabels.tau, 0.5);
  EXPECT_EQ(cfg.data.synth.tile_size, 256);
  EXPECT_EQ(cfg.data.synth.n_tiles, 874);
  EXPECT_EQ(cfg.data.synth.n_unlabeled, 2000);
  EXPECT_EQ(cfg.data.synth.n_test, 25);
  EXPECT_EQ(cfg.eval.aggregation, Aggregation::Global);
  EXPECT_EQ(cfg.eval.thresholds, 256);
}

TEST(Config, EveryShippedConfigLoads) {
  for (const auto& entry : std::filesystem::directory_iterator(std::filesystem::path(PSEUDOSEG_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".toml") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
  }
}

TEST(Config, EmptyTextGivesDefaults) {
  const PipelineConfig cfg = parse_config("");
  EXPECT_EQ(cfg.mapper.epochs_phase1, 800);
  EXPECT_EQ(cfg.paths.artifacts, "artifacts");
}

TEST(Config, SeedsAreDerived) {
  const PipelineConfig a = parse_config("seed = 4\n");
  const PipelineConfig b = parse_config("seed = 5\n");
  EXPECT_EQ(a.data.synth.seed, 4u);
  EXPECT_NE(a.classifier.seed, b.classifier.seed);
  EXPECT_NE(a.mapper.seed, a.classifier.seed);
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, HashIgnoresArtifactPath) {
  const PipelineConfig a = parse_config("[paths]\nartifacts = \"/tmp/a\"\n");
  const PipelineConfig b = parse_config("[paths]\nartifacts = \"/tmp/b\"\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), parse_config("[mapper]\nepochs_phase2 = 3\n").hash());
}

TEST(Config, Rejections) {
  EXPECT_ERROR_CODE(parse_config("[mapper]\nepochs = 3\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[bogus]\nx = 1\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("color = 1\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[mapper]\nlr0 = \"fast\"\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[classifier]\nbatch_size = 2.5\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[mapper\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("seed = -1\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[correction]\nbeta1 = 0.5\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[eval]\naggregation = \"median\"\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[attribution]\nclass = \"maybe\"\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[classifier]\ninput_size = 64\n"), ErrorCode::BadConfig);
  EXPECT_ERROR_CODE(parse_config("[data]\ntrain_fraction = 0.9\nval_fraction = 0.3\n"), ErrorCode::BadConfig);
}

TEST(Config, ConsistentSmallerSize) {
  const PipelineConfig cfg =
      parse_config("[data]\ntile_size = 64\n[classifier]\ninput_size = 64\n[mapper]\ninput_size = 64\n");
  EXPECT_EQ(cfg.mapper.input_size, 64);
}

TEST(Config, UnreadableFile) {
  EXPECT_ERROR_CODE(load_config("/nonexistent/pseudoseg.toml"), ErrorCode::BadConfig);
}

TEST(Config, CorrectionParamsFile) {
  testutil::TempDir dir("config");
  {
    std::ofstream(dir / "a.toml") << "[correction]\nbeta2 = 0.2\ncadence = 3\n";
    std::ofstream(dir / "b.toml") << "gamma1 = 0.5\n";
    std::ofstream(dir / "c.toml") << "[correction]\nunknown = 1\n";
  }
  const CorrectionParams a = load_correction_params(dir / "a.toml");
  EXPECT_EQ(a.beta2, 0.2);
  EXPECT_EQ(a.cadence, 3);
  EXPECT_EQ(a.beta1, 0.01);
  EXPECT_EQ(load_correction_params(dir / "b.toml").gamma1, 0.5);
  EXPECT_ERROR_CODE(load_correction_params(dir / "c.toml"), ErrorCode::BadConfig);
}
