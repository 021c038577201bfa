#pragma once

// Multi-lighting scene recordings, training-pair enumeration, and a
// procedural scene generator that renders one radiance field under several
// exposure scalings.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evsee/error.hpp"
#include "evsee/events.hpp"
#include "evsee/image.hpp"
#include "evsee/seenet.hpp"

namespace evsee::data {

enum class LightingClass { Low, Normal, High };

inline std::string_view to_string(LightingClass c) {
  switch (c) {
    case LightingClass::Low: return "low";
    case LightingClass::Normal: return "normal";
    case LightingClass::High: return "high";
  }
  return "normal";
}

inline LightingClass parse_lighting(std::string_view s) {
  if (s == "low") return LightingClass::Low;
  if (s == "normal") return LightingClass::Normal;
  if (s == "high") return LightingClass::High;
  throw DomainError("unknown lighting class: " + std::string(s));
}

struct SceneRecording {
  std::string scene_id;
  LightingClass lighting = LightingClass::Normal;
  std::vector<RgbImage> frames;
  std::vector<std::int64_t> frame_times_us;
  EventStream events;
  double exposure_scale = 1.0;
};

inline double mean_brightness(std::span<const RgbImage> frames) {
  if (frames.empty()) throw DomainError("classify_lighting: recording has no frames");
  double s = 0.0;
  for (const auto& f : frames) s += brightness(f);
  return s / static_cast<double>(frames.size());
}

// Mean brightness below 0.4 is low, up to 0.7 normal, above that high.
inline LightingClass classify_lighting(std::span<const RgbImage> frames) {
  const double b = mean_brightness(frames);
  if (in_exposure_band(b)) return LightingClass::Normal;
  if (b < kExposureLow) return LightingClass::Low;
  return LightingClass::High;
}

struct Pair {
  std::size_t input = 0;   // index into the scene's recordings
  std::size_t target = 0;
  friend bool operator==(const Pair&, const Pair&) = default;
};

// Recording-level pairs; frames are expanded when examples are drawn.
struct PairSet {
  std::vector<Pair> pairs;
};

// Every normal recording is a target for every other recording of the scene.
inline PairSet enumerate_pairs(std::span<const LightingClass> classes) {
  PairSet out;
  bool any_normal = false;
  for (std::size_t t = 0; t < classes.size(); ++t) {
    if (classes[t] != LightingClass::Normal) continue;
    any_normal = true;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (i != t) out.pairs.push_back({i, t});
  }
  if (!any_normal) throw DomainError("enumerate_pairs: scene has no normal-light recording");
  return out;
}

inline PairSet enumerate_pairs(std::span<const SceneRecording> scene) {
  std::vector<LightingClass> classes;
  for (const auto& r : scene) classes.push_back(r.lighting);
  return enumerate_pairs(classes);
}

struct SynthOptions {
  std::uint32_t width = 16;
  std::uint32_t height = 16;
  std::size_t frames = 4;          // rendered image frames
  std::size_t substeps = 4;        // radiance samples between image frames
  std::int64_t frame_interval_us = 40000;
  EventSimConfig events{};
  NoiseModel noise{0.0, 0.01, 0.0, 0};
  int bit_depth = 8;
  BayerOrder bayer = BayerOrder::RGGB;
};

// Colour scene under a drifting, slightly rotating view: smooth colour
// gradients, a sinusoidal texture and a few shapes, mosaiced through the
// Bayer pattern into one radiance value per photosite.
inline RadianceField synth_radiance(std::uint64_t seed, const SynthOptions& opt) {
  if (opt.frames < 2 || opt.substeps < 1) throw DomainError("synth_radiance: need >= 2 frames and >= 1 substep");
  if (opt.width % 2 != 0 || opt.height % 2 != 0) throw DomainError("synth_radiance: dimensions must be even");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  struct Shape { double cx, cy, r, vx, vy; std::array<double, 3> rgb; bool disc; };
  std::array<double, 3> base{}, grad_x{}, grad_y{}, tex{};
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.35 + 0.3 * u01(rng);
    grad_x[c] = 0.3 * (u01(rng) - 0.5);
    grad_y[c] = 0.3 * (u01(rng) - 0.5);
    tex[c] = 0.08 + 0.08 * u01(rng);
  }
  const double fx = 1.5 + 2.0 * u01(rng), fy = 1.5 + 2.0 * u01(rng), phase = 2.0 * std::numbers::pi * u01(rng);
  std::vector<Shape> shapes;
  for (int s = 0; s < 3; ++s)
    shapes.push_back({u01(rng), u01(rng), 0.12 + 0.12 * u01(rng), 0.3 * (u01(rng) - 0.5), 0.3 * (u01(rng) - 0.5),
                      {0.1 + 0.85 * u01(rng), 0.1 + 0.85 * u01(rng), 0.1 + 0.85 * u01(rng)}, u01(rng) < 0.5});
  const double pan_x = 0.2 * (u01(rng) - 0.5), pan_y = 0.2 * (u01(rng) - 0.5), spin = 0.2 * (u01(rng) - 0.5);

  const std::size_t n = (opt.frames - 1) * opt.substeps + 1;
  std::vector<std::int64_t> ts(n);
  for (std::size_t i = 0; i < n; ++i)
    ts[i] = static_cast<std::int64_t>(i) * opt.frame_interval_us / static_cast<std::int64_t>(opt.substeps);
  RadianceField field(opt.width, opt.height, std::move(ts));

  for (std::size_t f = 0; f < n; ++f) {
    const double tau = static_cast<double>(f) / static_cast<double>(n - 1);  // 0..1 over the clip
    const double ang = spin * tau, ca = std::cos(ang), sa = std::sin(ang);
    for (std::uint32_t y = 0; y < opt.height; ++y)
      for (std::uint32_t x = 0; x < opt.width; ++x) {
        // normalised scene coordinates under the camera motion
        const double px = (x + 0.5) / opt.width - 0.5, py = (y + 0.5) / opt.height - 0.5;
        const double u = ca * px - sa * py + 0.5 + pan_x * tau;
        const double v = sa * px + ca * py + 0.5 + pan_y * tau;
        const int c = std::array<int, 4>{0, 1, 1, 2}[static_cast<std::size_t>(bayer_index(x, y, opt.bayer))];
        double val = base[c] + grad_x[c] * (u - 0.5) + grad_y[c] * (v - 0.5) +
                     tex[c] * std::sin(2.0 * std::numbers::pi * fx * u + phase) *
                         std::cos(2.0 * std::numbers::pi * fy * v);
        for (const auto& s : shapes) {
          const double dx = u - (s.cx + s.vx * tau), dy = v - (s.cy + s.vy * tau);
          const bool inside = s.disc ? dx * dx + dy * dy <= s.r * s.r : std::abs(dx) <= s.r && std::abs(dy) <= s.r;
          if (inside) val = s.rgb[static_cast<std::size_t>(c)];
        }
        field.at(f, y, x) = std::clamp(val, 0.02, 1.0);
      }
  }
  return field;
}

// One recording per exposure scale. Frames come from s * L through the
// noisy RAW model and the ISP stub; events from s * L with a fixed log
// floor, so streams agree across scales wherever s * L stays above it.
inline std::vector<SceneRecording> synth_scene(std::uint64_t seed, std::span<const double> scales,
                                               const SynthOptions& opt = {}) {
  for (double s : scales)
    if (!(s > 0.0)) throw DomainError("synth_scene: exposure scales must be positive");
  const RadianceField field = synth_radiance(seed, opt);
  std::vector<SceneRecording> out;
  for (std::size_t k = 0; k < scales.size(); ++k) {
    const RadianceField scaled = field.scaled(scales[k]);
    SceneRecording rec;
    rec.scene_id = "scene" + std::to_string(seed);
    rec.exposure_scale = scales[k];
    NoiseModel noise = opt.noise;
    noise.rng_seed = evsee::detail::mix_seed(seed, 1000 + k);
    for (std::size_t f = 0; f < opt.frames; ++f) {
      const std::size_t idx = f * opt.substeps;
      rec.frames.push_back(apply_isp(render_raw(scaled, idx, noise, opt.bit_depth), opt.bayer));
      rec.frame_times_us.push_back(field.timestamps_us[idx]);
    }
    rec.events = simulate_events(scaled, opt.events);
    rec.lighting = classify_lighting(rec.frames);
    out.push_back(std::move(rec));
  }
  return out;
}

// Events in the window ending at frame k (starting at frame k-1; frame 0
// uses the window up to frame 1), binned into `bins` slices.
inline VoxelGrid frame_voxels(const SceneRecording& rec, std::size_t frame, std::uint32_t bins) {
  if (frame >= rec.frames.size()) throw DomainError("frame_voxels: frame index out of range");
  if (rec.frame_times_us.size() < 2) throw DomainError("frame_voxels: need at least two frame timestamps");
  const std::size_t lo = frame == 0 ? 0 : frame - 1;
  const std::size_t hi = frame == 0 ? 1 : frame;
  const auto t0 = rec.frame_times_us[lo], t1 = rec.frame_times_us[hi];
  return voxelize(slice_events(rec.events, t0, t1), bins, t0, t1);
}

// Pairs expanded per frame: example i is pair i / F at frame i % F.
struct PairDataset {
  std::vector<SceneRecording> recordings;
  PairSet pairs;
  std::uint32_t bins = 8;

  std::size_t frames() const { return recordings.empty() ? 0 : recordings.front().frames.size(); }
  std::size_t size() const { return pairs.pairs.size() * frames(); }

  see::TrainingExample example(std::size_t i) const {
    const Pair& p = pairs.pairs.at(i / frames());
    const std::size_t f = i % frames();
    const auto& in = recordings[p.input];
    return {in.frames[f], frame_voxels(in, f, bins), recordings[p.target].frames[f]};
  }

  see::ExampleSource source() const {
    return [this](std::size_t i) { return example(i); };
  }
};

inline PairDataset make_dataset(std::vector<SceneRecording> recordings, std::uint32_t bins) {
  PairDataset ds;
  ds.pairs = enumerate_pairs(recordings);
  ds.recordings = std::move(recordings);
  ds.bins = bins;
  return ds;
}

}  // namespace evsee::data
