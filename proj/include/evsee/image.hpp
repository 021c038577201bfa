#pragma once

// Image formation: radiance -> noisy quantized RAW mosaic -> linear RGB,
// plus the exposure and colour predicates used to label lighting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evsee/bayer.hpp"
#include "evsee/error.hpp"

namespace evsee {

// Per-pixel radiance over time, stored (t, y, x) row-major. Values are
// normalised so that 1.0 maps to full scale after quantisation.
struct RadianceField {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::int64_t> timestamps_us;
  std::vector<double> values;

  RadianceField() = default;
  RadianceField(std::uint32_t w, std::uint32_t h, std::vector<std::int64_t> ts)
      : width(w), height(h), timestamps_us(std::move(ts)),
        values(static_cast<std::size_t>(w) * h * timestamps_us.size(), 0.0) {}

  std::size_t frames() const { return timestamps_us.size(); }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  double& at(std::size_t t, std::uint32_t y, std::uint32_t x) {
    return values[(t * height + y) * width + x];
  }
  double at(std::size_t t, std::uint32_t y, std::uint32_t x) const {
    return values[(t * height + y) * width + x];
  }
  std::span<const double> frame(std::size_t t) const {
    return std::span<const double>(values).subspan(t * pixels(), pixels());
  }

  void validate() const {
    detail::require(width > 0 && height > 0, "radiance field must be non-empty");
    detail::require(values.size() == pixels() * frames(), "radiance field size mismatch");
    for (std::size_t t = 1; t < timestamps_us.size(); ++t)
      detail::require(timestamps_us[t] > timestamps_us[t - 1],
                      "radiance timestamps must be strictly increasing");
    for (double v : values)
      detail::require(std::isfinite(v) && v >= 0.0, "radiance must be finite and >= 0");
  }

  RadianceField scaled(double s) const {
    RadianceField out = *this;
    for (double& v : out.values) v *= s;
    return out;
  }
};

struct NoiseModel {
  double gaussian_mu = 0.0;
  double gaussian_sigma = 0.0;
  double shot_scale = 0.0;  // expected photon count per unit radiance
  std::uint64_t rng_seed = 0;
};

struct RawImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;

  std::uint32_t max_value() const { return (1u << bit_depth) - 1u; }
  std::uint16_t at(std::uint32_t y, std::uint32_t x) const { return values[y * width + x]; }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Interleaved H x W x 3, values in [0, 1].
struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<double> values;

  RgbImage() = default;
  RgbImage(std::uint32_t w, std::uint32_t h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  double& at(std::uint32_t y, std::uint32_t x, int c) { return values[(y * width + x) * 3 + c]; }
  double at(std::uint32_t y, std::uint32_t x, int c) const {
    return values[(y * width + x) * 3 + c];
  }

  bool in_range() const {
    return std::all_of(values.begin(), values.end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// Quantises one frame of the field: Q(L + P + N). Shot noise P is a Poisson
// photon count with mean shot_scale*L, mean-subtracted and mapped back to
// radiance units, so its variance is L / shot_scale.
inline RawImage render_raw(const RadianceField& field, std::size_t frame,
                           const NoiseModel& noise, int bit_depth = 8) {
  if (frame >= field.frames()) throw DomainError("render_raw: frame index out of range");
  if (bit_depth < 8 || bit_depth > 12) throw DomainError("render_raw: bit depth must be in [8, 12]");
  if (noise.gaussian_sigma < 0.0 || noise.shot_scale < 0.0)
    throw DomainError("render_raw: noise parameters must be non-negative");

  RawImage raw{field.width, field.height, bit_depth, {}};
  raw.values.resize(field.pixels());
  const double scale = static_cast<double>(raw.max_value());

  std::mt19937_64 rng(detail::mix_seed(noise.rng_seed, frame));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto src = field.frame(frame);
  for (std::size_t i = 0; i < src.size(); ++i) {
    double v = src[i];
    if (noise.gaussian_sigma > 0.0 || noise.gaussian_mu != 0.0)
      v += noise.gaussian_mu + noise.gaussian_sigma * gauss(rng);
    if (noise.shot_scale > 0.0 && src[i] > 0.0) {
      const double k = noise.shot_scale * src[i];
      std::poisson_distribution<long long> shot(k);
      v += (static_cast<double>(shot(rng)) - k) / noise.shot_scale;
    }
    raw.values[i] = static_cast<std::uint16_t>(std::clamp(std::round(v * scale), 0.0, scale));
  }
  return raw;
}

// Linear stub ISP: normalise, then give every pixel of a 2x2 block the
// block's (R, mean G, B).
inline RgbImage apply_isp(const RawImage& raw, BayerOrder bayer = BayerOrder::RGGB) {
  if (raw.width % 2 != 0 || raw.height % 2 != 0)
    throw DomainError("apply_isp: width and height must be even");
  RgbImage out(raw.width, raw.height);
  const double norm = 1.0 / static_cast<double>(raw.max_value());
  for (std::uint32_t by = 0; by < raw.height; by += 2) {
    for (std::uint32_t bx = 0; bx < raw.width; bx += 2) {
      std::array<double, 4> site{};
      for (std::uint32_t dy = 0; dy < 2; ++dy)
        for (std::uint32_t dx = 0; dx < 2; ++dx)
          site[static_cast<std::size_t>(bayer_index(bx + dx, by + dy, bayer))] =
              raw.at(by + dy, bx + dx) * norm;
      const double rgb[3] = {site[0], 0.5 * (site[1] + site[2]), site[3]};
      for (std::uint32_t dy = 0; dy < 2; ++dy)
        for (std::uint32_t dx = 0; dx < 2; ++dx)
          for (int c = 0; c < 3; ++c) out.at(by + dy, bx + dx, c) = rgb[c];
    }
  }
  return out;
}

// Global mean over pixels and channels.
inline double brightness(const RgbImage& img) {
  if (img.values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : img.values) sum += v;
  return sum / static_cast<double>(img.values.size());
}

// Accurate-exposure band [0.4, 0.7]. Both ends are inclusive up to the
// rounding of the mean itself (a uniform 0.7 image averages to 0.7 + 1 ulp).
inline constexpr double kExposureLow = 0.4;
inline constexpr double kExposureHigh = 0.7;
inline constexpr double kExposureSlack = 1e-12;

inline bool in_exposure_band(double b) {
  return b >= kExposureLow - kExposureSlack && b <= kExposureHigh + kExposureSlack;
}

inline bool exposure_ok(const RgbImage& img) { return in_exposure_band(brightness(img)); }

inline std::array<double, 3> channel_means(const RgbImage& img) {
  std::array<double, 3> m{};
  for (std::size_t i = 0; i < img.pixels(); ++i)
    for (int c = 0; c < 3; ++c) m[c] += img.values[i * 3 + c];
  if (img.pixels() > 0)
    for (double& v : m) v /= static_cast<double>(img.pixels());
  return m;
}

// Largest pairwise gap between channel means; 0 for a neutral image.
inline double color_neutrality(const RgbImage& img) {
  const auto m = channel_means(img);
  return std::max({std::abs(m[0] - m[1]), std::abs(m[0] - m[2]), std::abs(m[1] - m[2])});
}

}  // namespace evsee
