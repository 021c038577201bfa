#pragma once

// Event generation from a radiance field by the log-threshold rule, voxel
// binning and the position / Bayer feature fed to the network heads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <tuple>
#include <vector>

#include "evsee/bayer.hpp"
#include "evsee/error.hpp"
#include "evsee/image.hpp"
#include "evsee/parallel.hpp"
#include "evsee/tensor.hpp"

namespace evsee {

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int64_t t_us = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

// Stream order: time, then row, column and polarity.
inline bool event_before(const Event& a, const Event& b) {
  return std::tie(a.t_us, a.y, a.x, a.p) < std::tie(b.t_us, b.y, b.x, b.p);
}

struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;

  void sort() { std::stable_sort(events.begin(), events.end(), event_before); }

  void validate() const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      detail::require(e.p == 1 || e.p == -1, "event polarity must be +1 or -1");
      detail::require(e.x < width && e.y < height, "event outside the sensor");
      if (i > 0) detail::require(!event_before(e, events[i - 1]), "event stream is not sorted");
    }
  }

  long long polarity_sum() const {
    long long s = 0;
    for (const Event& e : events) s += e.p;
    return s;
  }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct EventSimConfig {
  double threshold = 0.2;  // C, in log-radiance units
  double log_floor = 1e-6; // radiance floor before taking logs
};

// Per pixel, keeps a reference log level starting at the first frame. At
// each later frame, while the current log level differs from the reference
// by more than C, emits one event at the frame timestamp and moves the
// reference by C towards the current level. Levels are taken as log ratios
// to the first frame and the reference as an integer number of steps, so a
// global scaling of radiance and floor by a power of two leaves the stream
// bit-identical.
inline EventStream simulate_events(const RadianceField& field, const EventSimConfig& cfg = {}) {
  if (field.frames() < 2) throw DomainError("simulate_events: need at least 2 frames");
  if (!(cfg.threshold > 0.0)) throw DomainError("simulate_events: threshold C must be > 0");
  if (!(cfg.log_floor > 0.0)) throw DomainError("simulate_events: log floor must be > 0");
  if (field.width > 65535 || field.height > 65535)
    throw DomainError("simulate_events: sensor larger than 65535 pixels per side");

  const std::size_t npix = field.pixels();
  const std::size_t rows = field.height;
  std::vector<std::vector<Event>> per_row(rows);
  const double c = cfg.threshold;

  parallel_for(rows, [&](std::size_t y) {
    auto& out = per_row[y];
    for (std::uint32_t x = 0; x < field.width; ++x) {
      const std::size_t idx = y * field.width + x;
      const double base = std::max(field.values[idx], cfg.log_floor);
      long long steps = 0;
      for (std::size_t t = 1; t < field.frames(); ++t) {
        const double level = std::log(std::max(field.values[t * npix + idx], cfg.log_floor) / base);
        while (level - static_cast<double>(steps) * c > c) {
          out.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                         field.timestamps_us[t], 1});
          ++steps;
        }
        while (static_cast<double>(steps) * c - level > c) {
          out.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                         field.timestamps_us[t], -1});
          --steps;
        }
      }
    }
  });

  EventStream stream{field.width, field.height, {}};
  for (auto& row : per_row) stream.events.insert(stream.events.end(), row.begin(), row.end());
  stream.sort();
  return stream;
}

// H x W x M temporal bins, stored ((y * W) + x) * M + k.
struct VoxelGrid {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t bins = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::vector<double> values;

  double at(std::uint32_t y, std::uint32_t x, std::uint32_t k) const {
    return values[(static_cast<std::size_t>(y) * width + x) * bins + k];
  }
  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  nn::NdArray as_array() const { return nn::NdArray({static_cast<std::size_t>(height) * width, bins}, values); }
};

// Bin centres sit at t_start + k (t_end - t_start) / (M - 1); each event
// splits its polarity linearly between the two neighbouring centres.
// Events outside [t_start, t_end] land in the boundary bins.
inline VoxelGrid voxelize(const EventStream& stream, std::uint32_t bins, std::int64_t t_start,
                          std::int64_t t_end) {
  if (bins < 1) throw DomainError("voxelize: need at least one bin");
  if (t_end <= t_start) throw DomainError("voxelize: empty time window");
  VoxelGrid grid{stream.width, stream.height, bins, t_start, t_end, {}};
  grid.values.assign(static_cast<std::size_t>(stream.width) * stream.height * bins, 0.0);
  const double span = static_cast<double>(t_end - t_start);
  for (const Event& e : stream.events) {
    if (e.x >= stream.width || e.y >= stream.height) throw DomainError("voxelize: event outside the sensor");
    double* cell = &grid.values[(static_cast<std::size_t>(e.y) * stream.width + e.x) * bins];
    if (bins == 1) {
      cell[0] += e.p;
      continue;
    }
    const double pos = std::clamp(static_cast<double>(e.t_us - t_start) / span, 0.0, 1.0) * (bins - 1);
    const auto lo = std::min(static_cast<std::uint32_t>(std::floor(pos)), bins - 2);
    const double w_hi = pos - lo;
    cell[lo] += e.p * (1.0 - w_hi);
    cell[lo + 1] += e.p * w_hi;
  }
  return grid;
}

// Events with t in [t_lo, t_hi]; the stream must be sorted.
inline EventStream slice_events(const EventStream& stream, std::int64_t t_lo, std::int64_t t_hi) {
  EventStream out{stream.width, stream.height, {}};
  auto first = std::lower_bound(stream.events.begin(), stream.events.end(), t_lo,
                                [](const Event& e, std::int64_t t) { return e.t_us < t; });
  auto last = std::upper_bound(first, stream.events.end(), t_hi,
                               [](std::int64_t t, const Event& e) { return t < e.t_us; });
  out.events.assign(first, last);
  return out;
}

// Per-pixel positional feature, (H*W) x dim:
//   [x/(W-1), y/(H-1), bp/3, sin(pi 2^k x'), sin(pi 2^k y'), cos(pi 2^k x'), cos(pi 2^k y'), ...]
// where x', y' are the normalised coordinates and k grows every 4 channels.
inline nn::NdArray position_embedding(std::uint32_t width, std::uint32_t height, BayerOrder order,
                                      std::size_t dim) {
  if (dim < 3) throw DomainError("position_embedding: dim must be >= 3");
  if (width == 0 || height == 0) throw DomainError("position_embedding: empty image");
  nn::NdArray out({static_cast<std::size_t>(width) * height, dim});
  for (std::uint32_t y = 0; y < height; ++y) {
    for (std::uint32_t x = 0; x < width; ++x) {
      const double xn = width > 1 ? static_cast<double>(x) / (width - 1) : 0.0;
      const double yn = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
      double* row = &out.data[(static_cast<std::size_t>(y) * width + x) * dim];
      row[0] = xn;
      row[1] = yn;
      row[2] = bayer_index(x, y, order) / 3.0;
      for (std::size_t c = 3; c < dim; ++c) {
        const std::size_t j = c - 3;
        const double freq = std::numbers::pi * std::ldexp(1.0, static_cast<int>(j / 4));
        const double coord = (j % 2 == 0) ? xn : yn;
        row[c] = (j % 4 < 2) ? std::sin(freq * coord) : std::cos(freq * coord);
      }
    }
  }
  return out;
}

}  // namespace evsee
