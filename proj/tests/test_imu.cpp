#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evsee/imu.hpp"

using namespace evsee;
using namespace evsee::imu;

namespace {

ImuSequence from_rows(const std::vector<std::array<double, kChannels>>& rows, double rate = 1000.0) {
  std::vector<double> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return ImuSequence::uniform(rate, 0, std::move(data));
}

ImuSequence constant_seq(std::size_t n, double v) {
  return ImuSequence::uniform(1000.0, 0, std::vector<double>(n * kChannels, v));
}

ImuSequence noise_seq(std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> d(n * kChannels);
  for (double& v : d) v = g(rng);
  return ImuSequence::uniform(1000.0, 0, std::move(d));
}

// straightforward re-implementation: explicit index arithmetic per element
double oracle_score(const ImuSequence& s, const ImuSequence& t, std::int64_t b, std::size_t l) {
  double total = 0.0;
  const std::int64_t start = b >= 0 ? 0 : -b;
  for (std::size_t k = 0; k < l; ++k)
    for (std::size_t c = 0; c < kChannels; ++c)
      total += std::abs(s.at(static_cast<std::size_t>(start) + k, c) - t.at(static_cast<std::size_t>(start + b) + k, c));
  return total / static_cast<double>(l * kChannels);
}

double variance(const ImuSequence& s, std::size_t first = 0) {
  double m = 0, q = 0;
  const std::size_t n = (s.size() - first) * kChannels;
  for (std::size_t i = first * kChannels; i < s.samples.size(); ++i) m += s.samples[i];
  m /= static_cast<double>(n);
  for (std::size_t i = first * kChannels; i < s.samples.size(); ++i) q += (s.samples[i] - m) * (s.samples[i] - m);
  return q / static_cast<double>(n);
}

}  // namespace

TEST(ImuSequenceTest, UniformTimestampsAndValidation) {
  const auto s = constant_seq(5, 0.0);
  EXPECT_EQ(s.t_us, (std::vector<std::int64_t>{0, 1000, 2000, 3000, 4000}));
  EXPECT_NO_THROW(s.validate());
  auto bad = s;
  bad.samples[7] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(bad.validate(), NumericError);
  ImuSequence empty;
  EXPECT_THROW(empty.validate(), DomainError);
}

TEST(Kalman, ConstantIsFixedPoint) {
  const auto s = constant_seq(200, 2.5);
  for (KalmanParams p : {KalmanParams{}, KalmanParams{1.0, 1e-4}, KalmanParams{1e-6, 10.0}}) {
    const auto out = kalman_denoise(s, p);
    ASSERT_EQ(out.size(), s.size());
    for (double v : out.samples) EXPECT_NEAR(v, 2.5, 1e-12);
  }
}

TEST(Kalman, SuppressesWhiteNoise) {
  const auto s = noise_seq(10000, 1.0, 17);
  const auto out = kalman_denoise(s, {1e-4, 1.0});
  EXPECT_LT(variance(out, 100), 0.2 * variance(s, 100));
}

TEST(Kalman, TracksRamp) {
  std::vector<std::array<double, kChannels>> rows;
  for (int i = 0; i < 1000; ++i) rows.push_back({0.01 * i, -0.02 * i, 1.0 + 0.005 * i, 0.0, 0.3 * i, -1.0});
  const auto s = from_rows(rows);
  const auto out = kalman_denoise(s);
  for (std::size_t i = 100; i < s.size(); ++i)
    for (std::size_t c = 0; c < kChannels; ++c) EXPECT_NEAR(out.at(i, c), s.at(i, c), 1e-3) << i << "," << c;
}

TEST(Kalman, SmallMeasurementNoiseFollowsInput) {
  const auto s = noise_seq(500, 1.0, 3);
  const auto out = kalman_denoise(s, {1e-3, 1e-9});
  for (std::size_t i = 0; i < s.samples.size(); ++i) EXPECT_NEAR(out.samples[i], s.samples[i], 1e-4);
}

TEST(Kalman, Errors) {
  EXPECT_THROW(kalman_denoise(constant_seq(4, 0.0), {0.0, 1.0}), DomainError);
  EXPECT_THROW(kalman_denoise(constant_seq(4, 0.0), {1.0, -1.0}), DomainError);
  auto bad = constant_seq(4, 0.0);
  bad.samples[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(kalman_denoise(bad), NumericError);
}

TEST(Pyramid, LengthsAndBlockMeans) {
  const auto p = build_pyramid(noise_seq(64, 1.0, 1), 4);
  EXPECT_EQ(p[0].rows, 64u);
  EXPECT_EQ(p[1].rows, 16u);
  EXPECT_EQ(p[2].rows, 4u);
  EXPECT_EQ(p[2].pool_factor, 16u);
  for (int l = 1; l < 3; ++l)
    for (std::size_t r = 0; r < p[l].rows; ++r)
      for (std::size_t c = 0; c < kChannels; ++c) {
        double m = 0;
        for (std::size_t k = 0; k < 4; ++k) m += p[l - 1].data[(r * 4 + k) * kChannels + c];
        EXPECT_NEAR(p[l].data[r * kChannels + c], m / 4, 1e-9);
      }
}

TEST(Pyramid, HandComputedMeans) {
  std::vector<std::array<double, kChannels>> rows;
  for (int i = 1; i <= 8; ++i) rows.push_back({double(i), double(i), double(i), double(i), double(i), double(i)});
  const auto p = build_pyramid(from_rows(rows), 2);
  ASSERT_EQ(p[1].rows, 4u);
  const double expect[] = {1.5, 3.5, 5.5, 7.5};
  for (std::size_t r = 0; r < 4; ++r) EXPECT_DOUBLE_EQ(p[1].data[r * kChannels], expect[r]);
  EXPECT_DOUBLE_EQ(p[2].data[0], 2.5);
  EXPECT_DOUBLE_EQ(p[2].data[kChannels], 6.5);
}

TEST(Pyramid, TrailingPartialBlocksDropped) {
  const auto p = build_pyramid(constant_seq(70, 1.25), 4);
  EXPECT_EQ(p[1].rows, 17u);
  EXPECT_EQ(p[2].rows, 4u);
  for (double v : p[2].data) EXPECT_EQ(v, 1.25);
}

TEST(Pyramid, Errors) {
  EXPECT_THROW(build_pyramid(constant_seq(15, 0.0), 4), DomainError);
  EXPECT_THROW(build_pyramid(constant_seq(64, 0.0), 1), DomainError);
}

TEST(MatchScore, Examples) {
  const auto s = noise_seq(50, 1.0, 5);
  EXPECT_EQ(match_score(s.samples, s.samples, 0, 50), 0.0);
  auto t = s;
  for (double& v : t.samples) v += 1.0;
  EXPECT_NEAR(match_score(s.samples, t.samples, 0, 50), 1.0, 1e-12);
}

TEST(MatchScore, AgreesWithOracle) {
  const auto s = noise_seq(80, 1.0, 6), t = noise_seq(70, 1.0, 7);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t b = std::uniform_int_distribution<std::int64_t>(-60, 50)(rng);
    const std::int64_t start = b >= 0 ? 0 : -b;
    const std::int64_t max_l = std::min<std::int64_t>(80 - start, 70 - start - b);
    const auto l = static_cast<std::size_t>(std::uniform_int_distribution<std::int64_t>(1, max_l)(rng));
    EXPECT_NEAR(match_score(s.samples, t.samples, b, l), oracle_score(s, t, b, l), 1e-9);
  }
}

TEST(MatchScore, Errors) {
  const auto s = noise_seq(10, 1.0, 1);
  EXPECT_THROW(match_score(s.samples, s.samples, 0, 0), DomainError);
  EXPECT_THROW(match_score(s.samples, s.samples, 3, 8), DomainError);
  EXPECT_THROW(match_score(s.samples, s.samples, -3, 8), DomainError);
}

TEST(Register, IdenticalCopyGivesZeroBias) {
  const auto s = SyntheticImu(1).sample(0, 4000, 0.0, 0);
  const auto r = register_sequences(s, s);
  EXPECT_EQ(r.bias_samples, 0);
  EXPECT_EQ(r.length, 4000u);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.bias_us, 0.0);
}

TEST(Register, RecoversDelayOf137) {
  const auto [s, t] = synth_pair(137, 20000, 137, 1e-3);
  const auto r = register_sequences(s, t);
  EXPECT_LE(std::abs(r.bias_samples - 137), 1);
  EXPECT_EQ(r.bias_us, static_cast<double>(r.bias_samples) * 1000.0);
}

TEST(Register, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 6; ++trial) {
    const std::int64_t shift = std::uniform_int_distribution<std::int64_t>(-1500, 1500)(rng);
    const auto [s, t] = synth_pair(500 + trial, 3000 + 500 * trial, shift, 0.01);
    RegisterStats stats;
    const auto h = register_sequences(s, t, {}, &stats);
    std::size_t evals = 0;
    const auto e = register_exhaustive(s, t, 0.5, &evals);
    EXPECT_EQ(h.score, e.score) << trial;
    EXPECT_EQ(h.bias_samples, e.bias_samples) << trial;
    EXPECT_EQ(h.length, e.length) << trial;
    EXPECT_LE(std::abs(h.bias_samples - shift), 1) << trial;
    EXPECT_LT(stats.evaluations, evals);
  }
}

TEST(Register, SymmetricUnderSwap) {
  const auto [s, t] = synth_pair(31, 5000, 420, 0.005);
  const auto ab = register_sequences(s, t);
  const auto ba = register_sequences(t, s);
  EXPECT_EQ(ba.bias_samples, -ab.bias_samples);
  EXPECT_EQ(ba.length, ab.length);
  EXPECT_DOUBLE_EQ(ba.score, ab.score);
}

TEST(Register, ShiftEquivariantUnderPrependedSamples) {
  const auto [s, t] = synth_pair(8, 5000, 250, 0.0);
  const auto base = register_sequences(s, t);
  EXPECT_EQ(base.bias_samples, 250);
  for (std::size_t k : {1u, 17u, 64u}) {
    ImuSequence t2 = t;
    t2.samples.insert(t2.samples.begin(), k * kChannels, 0.25);
    t2 = ImuSequence::uniform(t.rate_hz, 0, t2.samples);
    EXPECT_EQ(register_sequences(s, t2).bias_samples, base.bias_samples + static_cast<std::int64_t>(k)) << k;
  }
}

TEST(Register, ArgminInvariantToCommonScaling) {
  const auto [s, t] = synth_pair(12, 4000, -300, 0.01);
  const auto r = register_sequences(s, t);
  auto s3 = s, t3 = t;
  for (double& v : s3.samples) v *= 3.0;
  for (double& v : t3.samples) v *= 3.0;
  const auto r3 = register_sequences(s3, t3);
  EXPECT_EQ(r3.bias_samples, r.bias_samples);
  EXPECT_EQ(r3.length, r.length);
}

TEST(Register, EvaluationCountWithinBound) {
  const auto [s, t] = synth_pair(77, 8000, 900, 0.01);
  const RegisterOptions opt;
  RegisterStats stats;
  register_sequences(s, t, opt, &stats);
  const auto ps = build_pyramid(s, opt.pool_factor), pt = build_pyramid(t, opt.pool_factor);
  // start level: every admissible (b, l); finer levels: a (2 r f + 1)-wide
  // bias window, each with at most the level's length range
  EXPECT_EQ(stats.start_level, 1);  // level 2 has only 7 rows
  std::size_t bound = 0;
  for (int level = stats.start_level; level >= 0; --level) {
    const std::size_t ns = ps[level].rows, nt = pt[level].rows;
    const std::size_t l_min = imu::detail::min_length(ns, nt, opt.l_min_fraction);
    const std::size_t lengths = std::min(ns, nt) - l_min + 1;
    const std::size_t biases =
        level == stats.start_level ? ns + nt - 2 * l_min + 1 : 2 * opt.search_radius * opt.pool_factor + 1;
    bound += biases * lengths;
  }
  EXPECT_LE(stats.evaluations, bound);
  EXPECT_EQ(stats.evaluations, stats.per_level[0] + stats.per_level[1] + stats.per_level[2]);
  EXPECT_EQ(stats.per_level[2], 0u);
}

TEST(Register, FullScanStartsAtLongEnoughLevel) {
  const auto [s, t] = synth_pair(5, 70000, 1234, 0.005);
  RegisterStats stats;
  const auto r = register_sequences(s, t, {}, &stats);
  EXPECT_EQ(stats.start_level, 2);  // 68 rows at level 2
  EXPECT_EQ(r.bias_samples, 1234);
  RegisterOptions opt;
  opt.min_coarse_rows = 100000;
  const auto [a, b] = synth_pair(6, 1500, 40, 0.0);
  register_sequences(a, b, opt, &stats);
  EXPECT_EQ(stats.start_level, 0);
  EXPECT_EQ(stats.per_level[1], 0u);
}

TEST(Register, BiasInMicrosecondsUsesRate) {
  const SyntheticImu trace(5, 200.0);
  const auto s = trace.sample(0, 3000, 0.0, 0), t = trace.sample(-40, 3000, 0.0, 0);
  const auto r = register_sequences(s, t);
  EXPECT_EQ(r.bias_samples, 40);
  EXPECT_EQ(r.bias_us, 40 * 1e6 / 200.0);
}

TEST(Register, Errors) {
  const auto short_seq = constant_seq(1000, 0.0);
  const auto ok = constant_seq(2000, 0.0);
  EXPECT_THROW(register_sequences(short_seq, ok), DomainError);
  EXPECT_THROW(register_sequences(ok, ok, {32, 2, 0.0}), DomainError);
  EXPECT_THROW(register_sequences(ok, ok, {32, 2, 1.5}), DomainError);
  auto bad = ok;
  bad.samples[100] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(register_sequences(bad, ok), NumericError);
}

TEST(Register, TieBreakPrefersLongerThenSmallerBias) {
  // identical constant sequences score 0 everywhere: longest overlap wins,
  // which is b = 0 with l = N
  const auto c = constant_seq(1024, 1.0);
  const auto r = register_sequences(c, c);
  EXPECT_EQ(r.bias_samples, 0);
  EXPECT_EQ(r.length, 1024u);
  const auto e = register_exhaustive(c, c);
  EXPECT_EQ(e.bias_samples, 0);
  EXPECT_EQ(e.length, 1024u);

  Registration a{3, 10, 0.5, 0}, b{-3, 10, 0.5, 0};
  EXPECT_TRUE(better(b, a));
  EXPECT_TRUE(better(Registration{5, 11, 0.5, 0}, a));
  EXPECT_TRUE(better(Registration{9, 1, 0.4, 0}, a));
  EXPECT_TRUE(better(Registration{2, 10, 0.5, 0}, b));
}
