#pragma once

// Temporal registration of two IMU recordings: Kalman denoising, a
// three-level average-pooling pyramid and a coarse-to-fine search for the
// bias b and matching length l that minimise the mean L1 distance.
//
// Alignment convention: source sample i pairs with target sample i + b.
// The compared window starts where the overlap starts (source index
// max(0, -b)) and runs for l samples.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "evsee/error.hpp"
#include "evsee/parallel.hpp"

namespace evsee::imu {

inline constexpr std::size_t kChannels = 6;  // ax, ay, az, gx, gy, gz

struct ImuSequence {
  double rate_hz = 1000.0;
  std::vector<std::int64_t> t_us;
  std::vector<double> samples;  // N x 6, row-major

  static ImuSequence uniform(double rate_hz, std::int64_t t0, std::vector<double> samples) {
    ImuSequence s;
    s.rate_hz = rate_hz;
    s.samples = std::move(samples);
    const std::size_t n = s.samples.size() / kChannels;
    s.t_us.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      s.t_us[i] = t0 + static_cast<std::int64_t>(std::llround(static_cast<double>(i) * 1e6 / rate_hz));
    return s;
  }

  std::size_t size() const { return samples.size() / kChannels; }
  std::int64_t t0() const { return t_us.empty() ? 0 : t_us.front(); }
  double at(std::size_t i, std::size_t c) const { return samples[i * kChannels + c]; }

  void validate() const {
    if (samples.empty() || samples.size() % kChannels != 0)
      throw DomainError("IMU sequence must hold N >= 1 rows of 6 channels");
    if (t_us.size() != size()) throw DomainError("IMU timestamps do not match sample count");
    if (!(rate_hz > 0.0)) throw DomainError("IMU rate must be positive");
    for (double v : samples)
      if (!std::isfinite(v)) throw NumericError("IMU sequence contains non-finite samples");
  }

  friend bool operator==(const ImuSequence&, const ImuSequence&) = default;
};

struct KalmanParams {
  double q = 1e-3;  // process noise (white acceleration, per sample^2)
  double r = 1e-1;  // measurement noise variance
};

// Per-channel constant-velocity Kalman filter with unit sample spacing.
// State [value, rate]; starts at the first sample with zero rate.
inline ImuSequence kalman_denoise(const ImuSequence& seq, const KalmanParams& params = {}) {
  seq.validate();
  if (!(params.q > 0.0) || !(params.r > 0.0)) throw DomainError("Kalman q and r must be positive");
  ImuSequence out = seq;
  const std::size_t n = seq.size();
  const double q = params.q, r = params.r;
  // discretised white-acceleration noise for dt = 1
  const double q11 = q / 3.0, q12 = q / 2.0, q22 = q;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double x = seq.at(0, c), v = 0.0;
    double p11 = r, p12 = 0.0, p22 = 1.0;
    for (std::size_t i = 1; i < n; ++i) {
      // predict
      x += v;
      const double a11 = p11 + 2.0 * p12 + p22 + q11;
      const double a12 = p12 + p22 + q12;
      const double a22 = p22 + q22;
      // update
      const double s = a11 + r;
      const double k1 = a11 / s, k2 = a12 / s;
      const double innov = seq.at(i, c) - x;
      x += k1 * innov;
      v += k2 * innov;
      p11 = (1.0 - k1) * a11;
      p12 = (1.0 - k1) * a12;
      p22 = a22 - k2 * a12;
      out.samples[i * kChannels + c] = x;
    }
  }
  return out;
}

struct PyramidLevel {
  int level = 0;
  std::size_t pool_factor = 1;  // level-0 samples per pooled sample
  std::size_t rows = 0;
  std::vector<double> data;  // rows x 6

  std::span<const double> view() const { return data; }
};

namespace detail {

inline std::vector<double> block_means(std::span<const double> data, std::size_t factor) {
  const std::size_t rows = data.size() / kChannels / factor;
  std::vector<double> out(rows * kChannels, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < kChannels; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < factor; ++k) s += data[(r * factor + k) * kChannels + c];
      out[r * kChannels + c] = s / static_cast<double>(factor);
    }
  return out;
}

}  // namespace detail

// Level 0 is the input; levels 1 and 2 are non-overlapping block means with
// the given factor, trailing partial blocks dropped.
inline std::array<PyramidLevel, 3> build_pyramid(const ImuSequence& seq, std::size_t pool_factor) {
  if (pool_factor < 2) throw DomainError("pool factor must be >= 2");
  if (seq.size() < pool_factor * pool_factor)
    throw DomainError("sequence of " + std::to_string(seq.size()) + " samples is too short for pool factor " +
                      std::to_string(pool_factor));
  std::array<PyramidLevel, 3> levels;
  levels[0] = {0, 1, seq.size(), seq.samples};
  for (int l = 1; l < 3; ++l) {
    auto data = detail::block_means(levels[l - 1].data, pool_factor);
    const std::size_t rows = data.size() / kChannels;
    levels[l] = {l, levels[l - 1].pool_factor * pool_factor, rows, std::move(data)};
  }
  return levels;
}

// Mean over l aligned rows and all channels of |s - t|.
inline double match_score(std::span<const double> s, std::span<const double> t, std::int64_t b, std::size_t l) {
  const auto ns = static_cast<std::int64_t>(s.size() / kChannels);
  const auto nt = static_cast<std::int64_t>(t.size() / kChannels);
  const std::int64_t s0 = std::max<std::int64_t>(0, -b);
  const std::int64_t t0 = s0 + b;
  const auto len = static_cast<std::int64_t>(l);
  if (l == 0 || s0 + len > ns || t0 + len > nt) throw DomainError("match_score: overlap out of bounds");
  double acc = 0.0;
  for (std::int64_t i = 0; i < len; ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < kChannels; ++c)
      row += std::abs(s[(s0 + i) * kChannels + c] - t[(t0 + i) * kChannels + c]);
    acc += row;
  }
  return acc / (static_cast<double>(l) * kChannels);
}

struct Registration {
  std::int64_t bias_samples = 0;
  std::size_t length = 0;
  double score = std::numeric_limits<double>::infinity();
  double bias_us = 0.0;
};

// Total order used to pick a winner: lower score, longer overlap, smaller
// |b|, smaller b.
inline bool better(const Registration& a, const Registration& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.length != b.length) return a.length > b.length;
  const auto ab = a.bias_samples < 0 ? -a.bias_samples : a.bias_samples;
  const auto bb = b.bias_samples < 0 ? -b.bias_samples : b.bias_samples;
  if (ab != bb) return ab < bb;
  return a.bias_samples < b.bias_samples;
}

struct RegisterOptions {
  std::size_t pool_factor = 32;
  std::size_t search_radius = 2;  // in units of the coarser level's samples
  double l_min_fraction = 0.5;
  std::size_t min_coarse_rows = 64;  // shortest level trusted for the full scan
};

struct RegisterStats {
  std::size_t evaluations = 0;  // (b, l) scores computed
  std::array<std::size_t, 3> per_level{};
  int start_level = 2;  // level that received the full scan
};

namespace detail {

inline std::size_t min_length(std::size_t ns, std::size_t nt, double fraction) {
  const auto l = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(std::min(ns, nt))));
  return std::max<std::size_t>(1, l);
}

// Scores every l in [l_lo, l_hi] (clipped to what fits) for one bias and
// returns the best under `better`. Adds the number of scored lengths to
// *evals.
inline std::optional<Registration> best_length(std::span<const double> s, std::span<const double> t,
                                               std::int64_t b, std::size_t l_lo, std::size_t l_hi,
                                               std::size_t* evals) {
  const auto ns = static_cast<std::int64_t>(s.size() / kChannels);
  const auto nt = static_cast<std::int64_t>(t.size() / kChannels);
  const std::int64_t s0 = std::max<std::int64_t>(0, -b);
  const std::int64_t t0 = s0 + b;
  const std::int64_t max_len = std::min(ns - s0, nt - t0);
  if (max_len <= 0) return std::nullopt;
  l_hi = std::min<std::size_t>(l_hi, static_cast<std::size_t>(max_len));
  if (l_lo < 1) l_lo = 1;
  if (l_lo > l_hi) return std::nullopt;

  Registration best;
  best.bias_samples = b;
  double acc = 0.0;
  for (std::size_t i = 0; i < l_hi; ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < kChannels; ++c)
      row += std::abs(s[(s0 + static_cast<std::int64_t>(i)) * kChannels + c] -
                      t[(t0 + static_cast<std::int64_t>(i)) * kChannels + c]);
    acc += row;
    const std::size_t l = i + 1;
    if (l < l_lo) continue;
    const double score = acc / (static_cast<double>(l) * kChannels);
    // same b throughout, so only score then length matter
    if (score < best.score || (score == best.score && l > best.length)) {
      best.score = score;
      best.length = l;
    }
  }
  if (evals) *evals += l_hi - l_lo + 1;
  return best;
}

inline void require_registrable(const ImuSequence& a, const ImuSequence& b, std::size_t pool) {
  a.validate();
  b.validate();
  if (a.size() < pool * pool || b.size() < pool * pool)
    throw DomainError("sequences must have at least pool_factor^2 = " + std::to_string(pool * pool) + " samples");
}

}  // namespace detail

// Coarse-to-fine search. The coarsest level whose shorter sequence has at
// least min_coarse_rows rows (level 0 if none) gets every admissible bias and
// length; each finer level scans biases within +/- search_radius *
// pool_factor of the upscaled incumbent, every admissible length.
inline Registration register_sequences(const ImuSequence& source, const ImuSequence& target,
                                       const RegisterOptions& opt = {}, RegisterStats* stats = nullptr) {
  if (!(opt.l_min_fraction > 0.0) || opt.l_min_fraction > 1.0)
    throw DomainError("l_min_fraction must be in (0, 1]");
  detail::require_registrable(source, target, opt.pool_factor);
  const auto ps = build_pyramid(source, opt.pool_factor);
  const auto pt = build_pyramid(target, opt.pool_factor);
  RegisterStats local;

  int start = 2;
  while (start > 0 && std::min(ps[static_cast<std::size_t>(start)].rows, pt[static_cast<std::size_t>(start)].rows) <
                          opt.min_coarse_rows)
    --start;
  local.start_level = start;

  std::optional<Registration> incumbent;
  for (int level = start; level >= 0; --level) {
    const auto& s = ps[static_cast<std::size_t>(level)];
    const auto& t = pt[static_cast<std::size_t>(level)];
    const auto ns = static_cast<std::int64_t>(s.rows), nt = static_cast<std::int64_t>(t.rows);
    const std::size_t l_min = detail::min_length(s.rows, t.rows, opt.l_min_fraction);
    std::int64_t b_lo = -(ns - static_cast<std::int64_t>(l_min));
    std::int64_t b_hi = nt - static_cast<std::int64_t>(l_min);
    if (incumbent) {
      const auto f = static_cast<std::int64_t>(opt.pool_factor);
      const auto centre = incumbent->bias_samples * f;
      const auto radius = static_cast<std::int64_t>(opt.search_radius) * f;
      b_lo = std::max(b_lo, centre - radius);
      b_hi = std::min(b_hi, centre + radius);
    }
    std::optional<Registration> best;
    std::size_t evals = 0;
    for (std::int64_t b = b_lo; b <= b_hi; ++b) {
      auto cand = detail::best_length(s.view(), t.view(), b, l_min, static_cast<std::size_t>(std::max(ns, nt)), &evals);
      if (cand && (!best || better(*cand, *best))) best = cand;
    }
    local.per_level[static_cast<std::size_t>(level)] = evals;
    local.evaluations += evals;
    if (!best) {
      if (level == start) throw DomainError("no admissible overlap of at least l_min samples");
      break;  // window empty at this level: keep the coarser estimate
    }
    incumbent = best;
  }
  if (stats) *stats = local;
  Registration r = *incumbent;
  if (r.length < detail::min_length(source.size(), target.size(), opt.l_min_fraction))
    throw DomainError("no admissible level-0 overlap");
  r.bias_us = static_cast<double>(r.bias_samples) * 1e6 / source.rate_hz;
  return r;
}

// Reference: every level-0 bias and every length. Quadratic cost; used to
// validate the hierarchical search. Biases are scored in parallel and
// reduced in bias order.
inline Registration register_exhaustive(const ImuSequence& source, const ImuSequence& target,
                                        double l_min_fraction = 0.5, std::size_t* evaluations = nullptr) {
  source.validate();
  target.validate();
  const auto ns = static_cast<std::int64_t>(source.size()), nt = static_cast<std::int64_t>(target.size());
  const std::size_t l_min = detail::min_length(source.size(), target.size(), l_min_fraction);
  const std::int64_t b_lo = -(ns - static_cast<std::int64_t>(l_min));
  const std::int64_t b_hi = nt - static_cast<std::int64_t>(l_min);
  if (b_hi < b_lo) throw DomainError("no admissible overlap of at least l_min samples");
  const auto count = static_cast<std::size_t>(b_hi - b_lo + 1);

  std::vector<Registration> per_bias(count);
  std::vector<std::size_t> evals(count, 0);
  const auto& S = source.samples;
  const auto& T = target.samples;
  parallel_for(count, [&](std::size_t k) {
    const std::int64_t b = b_lo + static_cast<std::int64_t>(k);
    const std::int64_t i0 = b < 0 ? -b : 0;
    const std::int64_t overlap = std::min(ns - i0, nt - i0 - b);
    Registration best;
    best.bias_samples = b;
    double total = 0.0;
    for (std::int64_t l = 1; l <= overlap; ++l) {
      const std::int64_t i = i0 + l - 1;
      double row = 0.0;
      for (std::size_t c = 0; c < kChannels; ++c)
        row += std::abs(S[static_cast<std::size_t>(i) * kChannels + c] -
                        T[static_cast<std::size_t>(i + b) * kChannels + c]);
      total += row;
      if (l < static_cast<std::int64_t>(l_min)) continue;
      ++evals[k];
      const double score = total / (static_cast<double>(l) * kChannels);
      if (score <= best.score) {
        best.score = score;
        best.length = static_cast<std::size_t>(l);
      }
    }
    per_bias[k] = best;
  });

  Registration best;
  std::size_t total_evals = 0;
  for (std::size_t k = 0; k < count; ++k) {
    total_evals += evals[k];
    if (per_bias[k].length > 0 && better(per_bias[k], best)) best = per_bias[k];
  }
  if (evaluations) *evaluations = total_evals;
  best.bias_us = static_cast<double>(best.bias_samples) * 1e6 / source.rate_hz;
  return best;
}

// Synthetic IMU trace: per channel a sum of slow sinusoids plus sparse
// Gaussian bumps, evaluated analytically at any integer sample index.
class SyntheticImu {
 public:
  explicit SyntheticImu(std::uint64_t seed, double rate_hz = 1000.0) : rate_hz_(rate_hz) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (int k = 0; k < 5; ++k)
        waves_[c].push_back({0.5 + u01(rng), 0.03 + 1.5 * u01(rng), 2.0 * std::numbers::pi * u01(rng)});
      for (int k = 0; k < 40; ++k)
        bumps_[c].push_back({(u01(rng) * 2.0 - 1.0) * 2.0, (u01(rng) * 80.0 - 20.0), 0.1 + 0.4 * u01(rng)});
    }
  }

  double value(std::int64_t i, std::size_t c) const {
    const double t = static_cast<double>(i) / rate_hz_;
    double v = 0.0;
    for (const auto& w : waves_[c]) v += w[0] * std::sin(2.0 * std::numbers::pi * w[1] * t + w[2]);
    for (const auto& b : bumps_[c]) v += b[0] * std::exp(-0.5 * (t - b[1]) * (t - b[1]) / (b[2] * b[2]));
    return v;
  }

  // Rows first, first + 1, ..., first + n - 1 with optional Gaussian noise.
  ImuSequence sample(std::int64_t first, std::size_t n, double noise_sigma, std::uint64_t noise_seed,
                     std::int64_t t0_us = 0) const {
    std::vector<double> data(n * kChannels);
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kChannels; ++c) {
        double v = value(first + static_cast<std::int64_t>(i), c);
        if (noise_sigma > 0.0) v += noise_sigma * noise(rng);
        data[i * kChannels + c] = v;
      }
    return ImuSequence::uniform(rate_hz_, t0_us, std::move(data));
  }

 private:
  double rate_hz_;
  std::array<std::vector<std::array<double, 3>>, kChannels> waves_;
  std::array<std::vector<std::array<double, 3>>, kChannels> bumps_;
};

// Source covers trace samples [0, n); the target starts `shift` samples
// earlier, so source row i matches target row i + shift.
inline std::pair<ImuSequence, ImuSequence> synth_pair(std::uint64_t seed, std::size_t n, std::int64_t shift,
                                                      double noise_sigma) {
  SyntheticImu trace(seed);
  return {trace.sample(0, n, noise_sigma, seed ^ 0x5151u), trace.sample(-shift, n, noise_sigma, seed ^ 0xA7A7u)};
}

}  // namespace evsee::imu
