#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "evsee/dataset.hpp"
#include "evsee/seenet.hpp"

using namespace evsee;
using namespace evsee::see;

namespace {

RgbImage random_image(std::uint32_t w, std::uint32_t h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  RgbImage img(w, h);
  for (double& v : img.values) v = u(rng);
  return img;
}

// Straight two-loop evaluation of the loss on pixel grids.
double loss_oracle(const RgbImage& o, const RgbImage& t, double l1, double l2, double eps) {
  const std::uint32_t w = o.width, h = o.height;
  double charb = 0.0, grad = 0.0;
  for (std::uint32_t y = 0; y < h; ++y)
    for (std::uint32_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = o.at(y, x, c) - t.at(y, x, c);
        charb += std::sqrt(d * d + eps * eps);
        const double ox = x + 1 < w ? o.at(y, x + 1, c) - o.at(y, x, c) : 0.0;
        const double tx = x + 1 < w ? t.at(y, x + 1, c) - t.at(y, x, c) : 0.0;
        const double oy = y + 1 < h ? o.at(y + 1, x, c) - o.at(y, x, c) : 0.0;
        const double ty = y + 1 < h ? t.at(y + 1, x, c) - t.at(y, x, c) : 0.0;
        grad += std::abs(ox - tx) + std::abs(oy - ty);
      }
  const double n = static_cast<double>(w) * h * 3;
  return l1 * charb / n + l2 * grad / (2.0 * n);
}

SeeNetConfig small_config(std::uint64_t seed = 0) {
  SeeNetConfig c;
  c.channels = 8;
  c.loop_count = 2;
  c.seed = seed;
  return c;
}

TrainingExample scene_example(std::uint32_t size, const SeeNetConfig& cfg, std::uint64_t seed = 3) {
  data::SynthOptions so;
  so.width = so.height = size;
  const double scales[] = {0.3, 1.0};
  const auto recs = data::synth_scene(seed, scales, so);
  return {recs[0].frames[1], data::frame_voxels(recs[0], 1, static_cast<std::uint32_t>(cfg.voxel_bins)),
          recs[1].frames[1]};
}

}  // namespace

TEST(Loss, IdenticalImagesGiveLambdaEpsilon) {
  SeeNetConfig cfg;
  cfg.lambda1 = 1.3;
  cfg.epsilon = 1e-3;
  const auto img = random_image(7, 5, 1);
  EXPECT_NEAR(loss_value(img, img, cfg), cfg.lambda1 * cfg.epsilon, 1e-12);
}

TEST(Loss, UniformShiftWithZeroEpsilon) {
  SeeNetConfig cfg;
  cfg.lambda1 = 0.8;
  cfg.lambda2 = 0.5;
  cfg.epsilon = 0.0;
  const auto img = random_image(6, 6, 2, 0.0, 0.8);
  RgbImage shifted = img;
  for (double& v : shifted.values) v += 0.15;
  EXPECT_NEAR(loss_value(shifted, img, cfg), cfg.lambda1 * 0.15, 1e-12);
}

TEST(Loss, MatchesDirectOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    SeeNetConfig cfg;
    cfg.lambda1 = u(rng);
    cfg.lambda2 = u(rng);
    cfg.epsilon = 0.01 * u(rng);
    const std::uint32_t w = 2 + trial % 5, h = 3 + trial % 4;
    const auto o = random_image(w, h, 10 + trial), t = random_image(w, h, 50 + trial);
    EXPECT_NEAR(loss_value(o, t, cfg), loss_oracle(o, t, cfg.lambda1, cfg.lambda2, cfg.epsilon), 1e-9) << trial;
  }
}

TEST(Loss, ShapeMismatchThrows) {
  EXPECT_THROW(loss_value(RgbImage(4, 4), RgbImage(4, 2), SeeNetConfig{}), DomainError);
}

TEST(Params, ClosedFormMatchesEnumeration) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> heads(1, 4), per_head(1, 6), loops(1, 6), dec(2, 6), bins(1, 12),
      pos(3, 12), mult(1, 3), ph(1, 20);
  for (int i = 0; i < 10; ++i) {
    SeeNetConfig c;
    c.heads = heads(rng);
    c.channels = c.heads * per_head(rng);
    c.loop_count = loops(rng);
    c.decoder_layers = dec(rng);
    c.voxel_bins = bins(rng);
    c.pos_dim = pos(rng);
    c.ffn_mult = mult(rng);
    c.prompt_hidden = ph(rng);
    c.seed = i;
    EXPECT_EQ(parameter_count(c), init_params(c).count()) << config_to_text(c);
  }
}

TEST(Params, CalibrationConfigSize) {
  const auto n = parameter_count(calibration_config());
  EXPECT_GE(n, 1'800'000u);
  EXPECT_LE(n, 2'000'000u);
}

TEST(Params, LoopWeightsAreShared) {
  SeeNetConfig a = small_config(), b = small_config();
  b.loop_count = 7;
  const auto pa = init_params(a), pb = init_params(b);
  EXPECT_EQ(pa.count(), pb.count());
  ASSERT_EQ(pa.tensors.size(), pb.tensors.size());
  for (auto ia = pa.tensors.begin(), ib = pb.tensors.begin(); ia != pa.tensors.end(); ++ia, ++ib)
    EXPECT_EQ(ia->first, ib->first);
}

TEST(Params, SeedDeterminesValues) {
  EXPECT_EQ(init_params(small_config(1)), init_params(small_config(1)));
  EXPECT_NE(init_params(small_config(1)), init_params(small_config(2)));
}

TEST(Config, TextRoundTrip) {
  SeeNetConfig c = calibration_config();
  c.lambda2 = 0.125;
  c.epsilon = 3e-4;
  c.merge = PromptMerge::Multiply;
  c.bayer = BayerOrder::GBRG;
  c.seed = 99;
  EXPECT_EQ(config_from_text(config_to_text(c)), c);
}

TEST(Config, Errors) {
  EXPECT_THROW(config_from_text("channels=7\nheads=2\n"), DomainError);
  EXPECT_THROW(config_from_text("nonsense=1\n"), DomainError);
  EXPECT_THROW(config_from_text("channels\n"), DomainError);
  EXPECT_THROW(config_from_text("loop_count=x\n"), DomainError);
  EXPECT_THROW(config_from_text("merge=concat\n"), DomainError);
}

TEST(Forward, ShapeRangeAndDeterminism) {
  const auto cfg = small_config();
  const auto ex = scene_example(8, cfg);
  const auto params = init_params(cfg);
  const auto out = forward(ex.input, ex.voxels, 0.5, cfg, params);
  EXPECT_EQ(out.width, 8u);
  EXPECT_EQ(out.height, 8u);
  for (double v : out.values) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(out, forward(ex.input, ex.voxels, 0.5, cfg, params));
}

TEST(Forward, PromptErrors) {
  const auto cfg = small_config();
  const auto ex = scene_example(8, cfg);
  const auto params = init_params(cfg);
  for (double b : {0.0, 1.0, -0.2, 1.5, std::numeric_limits<double>::quiet_NaN()})
    EXPECT_THROW(forward(ex.input, ex.voxels, b, cfg, params), DomainError) << b;
}

TEST(Forward, InputMismatchErrors) {
  const auto cfg = small_config();
  const auto ex = scene_example(8, cfg);
  const auto params = init_params(cfg);
  EXPECT_THROW(forward(RgbImage(6, 8, 0.3), ex.voxels, 0.5, cfg, params), DomainError);
  SeeNetConfig other = cfg;
  other.voxel_bins = 4;
  EXPECT_THROW(forward(ex.input, ex.voxels, 0.5, other, init_params(other)), DomainError);
}

TEST(Training, ZeroLearningRateKeepsLossConstant) {
  const auto cfg = small_config();
  const std::vector<TrainingExample> one = {scene_example(6, cfg)};
  const auto r = train_toy(one, cfg, {5, 0.0, 0});
  ASSERT_EQ(r.losses.size(), 5u);
  for (double l : r.losses) EXPECT_EQ(l, r.losses.front());
  EXPECT_EQ(r.params, init_params(cfg));
}

TEST(Training, IdenticalRunsAreIdentical) {
  const auto cfg = small_config(5);
  const std::vector<TrainingExample> exs = {scene_example(6, cfg, 1), scene_example(6, cfg, 2)};
  const auto a = train_toy(exs, cfg, {12, 0.3, 4});
  const auto b = train_toy(exs, cfg, {12, 0.3, 4});
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.params, b.params);
}

TEST(Training, ShortRunReducesLoss) {
  const auto cfg = small_config(1);
  const std::vector<TrainingExample> one = {scene_example(8, cfg)};
  const auto r = train_toy(one, cfg, {60, 0.5, 0});
  EXPECT_LT(r.losses.back(), r.losses.front());
}

TEST(Training, Errors) {
  const auto cfg = small_config();
  EXPECT_THROW(train_toy(std::span<const TrainingExample>{}, cfg, {}), DomainError);
  const std::vector<TrainingExample> one = {scene_example(6, cfg)};
  EXPECT_THROW(train_toy(one, cfg, {1, -1.0, 0}), DomainError);
}

TEST(GradCheck, EndToEndLoss) {
  const auto cfg = small_config(2);
  const auto ex = scene_example(6, cfg);
  auto params = init_params(cfg);
  std::map<std::string, std::vector<double>> grads;
  example_loss(ex, cfg, params, &grads);
  const double h = 1e-6;
  double worst = 0.0;
  for (auto& [name, t] : params.tensors) {
    const std::size_t stride = std::max<std::size_t>(1, t.size() / 4);
    for (std::size_t i = 0; i < t.size(); i += stride) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double up = example_loss(ex, cfg, params, nullptr);
      t.data[i] = keep - h;
      const double down = example_loss(ex, cfg, params, nullptr);
      t.data[i] = keep;
      worst = std::max(worst, nn::grad_error(grads.at(name)[i], (up - down) / (2 * h)));
    }
  }
  EXPECT_LT(worst, 1e-3);
}
