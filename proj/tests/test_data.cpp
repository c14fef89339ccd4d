#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "hkd/evaluation.hpp"
#include "hkd/experiment.hpp"
#include "hkd/run_config.hpp"
#include "hkd/scene.hpp"

using namespace hkd;

namespace {

SceneParams small_params() {
  SceneParams p;
  p.train_count = 6;
  p.test_count = 3;
  return p;
}

}  // namespace

TEST(Scenes, DeterministicUnderSeed) {
  const auto a = generate_dataset(small_params()), b = generate_dataset(small_params());
  ASSERT_EQ(a.train.size(), 6u);
  ASSERT_EQ(a.test.size(), 3u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].id, b.train[i].id);
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].annotations, b.train[i].annotations);
  }
  auto other = small_params();
  other.seed = 2;
  EXPECT_NE(generate_dataset(other).train[0].image, a.train[0].image);
}

TEST(Scenes, ShapeAndAnnotationInvariants) {
  const auto d = generate_dataset(small_params());
  for (const auto& s : d.train) {
    EXPECT_EQ(s.image.size(), 3 * s.height * s.width);
    for (double v : s.image) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(s.annotations.size(), 1u);
    EXPECT_LE(s.annotations.size(), 3u);
    for (const auto& g : s.annotations) {
      EXPECT_TRUE(g.box.valid());
      EXPECT_GE(g.visibility, 0.0);
      EXPECT_LE(g.visibility, 1.0);
      EXPECT_NEAR(g.box.width() / g.box.height(), 0.41, 0.05);
    }
  }
}

TEST(Scenes, NoOcclusionMeansFullVisibility) {
  auto p = small_params();
  p.occlusion_rate = 0.0;
  for (const auto& s : generate_dataset(p).train)
    for (const auto& g : s.annotations) EXPECT_EQ(g.visibility, 1.0);
}

TEST(Scenes, HeightsCoverBothSubsets) {
  const auto p = SceneParams{};
  std::size_t total = 0, reasonable_band = 0, small_band = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    const auto s = generate_scene(p, derive_seed(p.seed, 99, i), "h" + std::to_string(i));
    for (const auto& g : s.annotations) {
      ++total;
      const double h = g.height();
      reasonable_band += h > 12.5;
      small_band += h > 12.5 && h < 18.75;
    }
  }
  ASSERT_GT(total, 500u);
  EXPECT_GE(static_cast<double>(reasonable_band) / total, 0.2);
  EXPECT_GE(static_cast<double>(small_band) / total, 0.2);
}

TEST(Scenes, ImpossibleParametersRejected) {
  auto p = small_params();
  p.height = 100;
  EXPECT_THROW(generate_dataset(p), std::invalid_argument);
  p = small_params();
  p.min_figure_height = 200;
  p.max_figure_height = 300;
  EXPECT_THROW(generate_dataset(p), std::invalid_argument);
}

TEST(Scenes, AnnotationRoundTrip) {
  const auto d = generate_dataset(small_params());
  const auto gts = annotations_of(d.test);
  const auto path = std::filesystem::temp_directory_path() / "hkd_scene_gt.txt";
  write_annotations(path, gts);
  EXPECT_EQ(read_annotations(path), gts);
  std::filesystem::remove(path);
}

TEST(RunConfigText, WriteParseRoundTrip) {
  RunConfig c;
  c.dataset.train_count = 17;
  c.dataset.occlusion_rate = 0.123456789012345;
  c.train.distill.lambda_rd = 0.3;
  c.train.distill.pd = false;
  c.train.lr_decay_epochs = {2, 4};
  c.student.pyramid_roi_align = true;
  c.ablate_seeds = {7, 9};
  c.out_dir = "somewhere/else";
  const auto text = write_run_config(c);
  std::istringstream in(text);
  const auto back = parse_run_config(in);
  EXPECT_EQ(write_run_config(back), text);
  EXPECT_EQ(back.dataset.occlusion_rate, c.dataset.occlusion_rate);
  EXPECT_EQ(back.train.lr_decay_epochs, c.train.lr_decay_epochs);
  EXPECT_EQ(back.ablate_seeds, c.ablate_seeds);
  EXPECT_EQ(back.out_dir, c.out_dir);
  EXPECT_TRUE(back.student.pyramid_roi_align);
  EXPECT_FALSE(back.train.distill.pd);
}

TEST(RunConfigText, CommentsAndOverrides) {
  std::istringstream in("# comment\n\ntrain.epochs = 2   # trailing\ntrain.lr_decay_epochs = 2\ndistill.rd = off\n");
  const auto c = parse_run_config(in);
  EXPECT_EQ(c.train.epochs, 2);
  EXPECT_FALSE(c.train.distill.rd);
  RunConfig d;
  apply_setting(d, "eval.iou", "0.6");
  EXPECT_EQ(d.eval.iou, 0.6);
}

TEST(RunConfigText, ErrorsAreReported) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in);
  };
  EXPECT_THROW(parse("train.epoch = 3\n"), ConfigError);
  EXPECT_THROW(parse("train.epochs = three\n"), ConfigError);
  EXPECT_THROW(parse("train.epochs\n"), ConfigError);
  EXPECT_THROW(parse("distill.lambda_pd = -1\n"), ConfigError);
  EXPECT_THROW(parse("student.pyramid_width = 16\n"), ConfigError);
  EXPECT_THROW(parse("teacher.widths = 1,2,3\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), std::exception);
}
