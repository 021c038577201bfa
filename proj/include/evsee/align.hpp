#pragma once

// Spatial alignment metric between two frames: Harris keypoints with
// normalised patch descriptors, exact ratio-test matching, RANSAC affine
// fit, then the mean per-pixel displacement induced by that affine.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "evsee/error.hpp"
#include "evsee/image.hpp"

namespace evsee::align {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
  std::vector<double> descriptor;
};

// Maps (x, y, 1) to (x', y'); row-major 2 x 3.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }

  std::pair<double, double> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }
  // A(p) - p, evaluated without forming A(p) so the identity gives exact zeros.
  std::pair<double, double> displacement(double x, double y) const {
    return {(m[0] - 1.0) * x + m[1] * y + m[2], m[3] * x + (m[4] - 1.0) * y + m[5]};
  }
  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  AffineTransform inverse() const {
    const double d = det();
    if (std::abs(d) <= 1e-9) throw NumericError("affine transform is singular");
    const double a = m[4] / d, b = -m[1] / d, c = -m[3] / d, e = m[0] / d;
    return {{a, b, -(a * m[2] + b * m[5]), c, e, -(c * m[2] + e * m[5])}};
  }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

struct AlignmentReport {
  double mean_px = 0.0;
  double max_px = 0.0;
  std::size_t inlier_count = 0;
  std::size_t match_count = 0;
};

struct PointPair {
  double x = 0.0, y = 0.0;  // in image A
  double u = 0.0, v = 0.0;  // in image B
};

struct DetectorOptions {
  double harris_k = 0.04;
  double window_sigma = 1.2;
  double rel_threshold = 0.01;  // of the strongest response
  int patch_radius = 4;         // 9 x 9 descriptor
};

inline std::vector<double> to_gray(const RgbImage& img) {
  std::vector<double> g(img.pixels());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = (img.values[i * 3] + img.values[i * 3 + 1] + img.values[i * 3 + 2]) / 3.0;
  return g;
}

namespace detail {

inline double sample_bilinear(const std::vector<double>& g, int w, int h, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 2 < 0 ? 0 : w - 2);
  const int y0 = std::min(static_cast<int>(y), h - 2 < 0 ? 0 : h - 2);
  const double fx = x - x0, fy = y - y0;
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double top = g[y0 * w + x0] * (1 - fx) + g[y0 * w + x1] * fx;
  const double bot = g[y1 * w + x0] * (1 - fx) + g[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

inline std::vector<double> gaussian_blur(const std::vector<double>& src, int w, int h, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * r + 1);
  double norm = 0.0;
  for (int i = -r; i <= r; ++i) norm += (kernel[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& k : kernel) k /= norm;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += kernel[i + r] * src[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += kernel[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

}  // namespace detail

// Harris corners, strict 3x3 non-maximum suppression, strongest max_count
// kept, sub-pixel refinement by a separable parabola fit. Descriptor is the
// bilinearly sampled 9x9 patch, zero-mean and unit-norm; flat patches are
// dropped.
inline std::vector<Keypoint> detect_keypoints(const RgbImage& img, std::size_t max_count,
                                              const DetectorOptions& opt = {}) {
  if (img.width < 16 || img.height < 16) throw DomainError("detect_keypoints: image must be at least 16x16");
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  const auto gray = to_gray(img);

  std::vector<double> ixx(gray.size()), iyy(gray.size()), ixy(gray.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (gray[y * w + std::min(x + 1, w - 1)] - gray[y * w + std::max(x - 1, 0)]);
      const double gy = 0.5 * (gray[std::min(y + 1, h - 1) * w + x] - gray[std::max(y - 1, 0) * w + x]);
      ixx[y * w + x] = gx * gx;
      iyy[y * w + x] = gy * gy;
      ixy[y * w + x] = gx * gy;
    }
  ixx = detail::gaussian_blur(ixx, w, h, opt.window_sigma);
  iyy = detail::gaussian_blur(iyy, w, h, opt.window_sigma);
  ixy = detail::gaussian_blur(ixy, w, h, opt.window_sigma);

  std::vector<double> resp(gray.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < resp.size(); ++i) {
    const double tr = ixx[i] + iyy[i];
    resp[i] = ixx[i] * iyy[i] - ixy[i] * ixy[i] - opt.harris_k * tr * tr;
    peak = std::max(peak, resp[i]);
  }
  std::vector<Keypoint> out;
  if (peak <= 1e-12) return out;

  const int border = opt.patch_radius + 2;
  const double threshold = opt.rel_threshold * peak;
  for (int y = border; y < h - border; ++y)
    for (int x = border; x < w - border; ++x) {
      const double c = resp[y * w + x];
      if (c <= threshold) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double n = resp[(y + dy) * w + x + dx];
          // ties resolved towards the earlier pixel in raster order
          if (n > c || (n == c && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      auto parabola = [](double m, double z, double p) {
        const double den = m - 2.0 * z + p;
        return den < 0.0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
      };
      Keypoint kp;
      kp.x = x + parabola(resp[y * w + x - 1], c, resp[y * w + x + 1]);
      kp.y = y + parabola(resp[(y - 1) * w + x], c, resp[(y + 1) * w + x]);
      kp.response = c;
      out.push_back(std::move(kp));
    }

  std::stable_sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });

  std::vector<Keypoint> kept;
  const int r = opt.patch_radius;
  for (auto& kp : out) {
    if (kept.size() >= max_count) break;
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
    double mu = 0.0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        d.push_back(detail::sample_bilinear(gray, w, h, kp.x + dx, kp.y + dy));
        mu += d.back();
      }
    mu /= static_cast<double>(d.size());
    double norm = 0.0;
    for (double& v : d) {
      v -= mu;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-9) continue;
    for (double& v : d) v /= norm;
    kp.descriptor = std::move(d);
    kept.push_back(std::move(kp));
  }
  return kept;
}

inline double descriptor_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DomainError("descriptor lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Exact nearest / second-nearest search with Lowe's ratio test.
inline std::vector<std::pair<std::size_t, std::size_t>> match_keypoints(const std::vector<Keypoint>& a,
                                                                        const std::vector<Keypoint>& b,
                                                                        double ratio = 0.8) {
  if (!(ratio > 0.0) || ratio > 1.0) throw DomainError("match ratio must be in (0, 1]");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (b.empty()) return out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    std::size_t best = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = descriptor_distance(a[i].descriptor, b[j].descriptor);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (d1 == 0.0 ? d2 > 0.0 : d1 / d2 < ratio) out.emplace_back(i, best);
  }
  return out;
}

namespace detail {

// Least-squares affine through the pairs, solved as a displacement field
// q - p = D [p; 1] in centred coordinates. Returns nullopt when the source
// points are (numerically) collinear.
inline std::optional<AffineTransform> fit_affine(const std::vector<PointPair>& pairs,
                                                 const std::vector<std::size_t>& idx) {
  if (idx.size() < 3) return std::nullopt;
  double mx = 0, my = 0, du = 0, dv = 0;
  for (auto i : idx) {
    mx += pairs[i].x;
    my += pairs[i].y;
    du += pairs[i].u - pairs[i].x;
    dv += pairs[i].v - pairs[i].y;
  }
  const double n = static_cast<double>(idx.size());
  mx /= n, my /= n, du /= n, dv /= n;
  double sxx = 0, sxy = 0, syy = 0, ux = 0, uy = 0, vx = 0, vy = 0;
  for (auto i : idx) {
    const double x = pairs[i].x - mx, y = pairs[i].y - my;
    const double ddu = (pairs[i].u - pairs[i].x) - du, ddv = (pairs[i].v - pairs[i].y) - dv;
    sxx += x * x, sxy += x * y, syy += y * y;
    ux += ddu * x, uy += ddu * y, vx += ddv * x, vy += ddv * y;
  }
  const double det = sxx * syy - sxy * sxy;
  const double scale = std::max(1.0, (sxx + syy) * (sxx + syy));
  if (std::abs(det) <= 1e-9 * scale) return std::nullopt;
  const double i11 = syy / det, i12 = -sxy / det, i22 = sxx / det;
  const double a = ux * i11 + uy * i12, b = ux * i12 + uy * i22;
  const double c = vx * i11 + vy * i12, d = vx * i12 + vy * i22;
  AffineTransform t{{1.0 + a, b, du - a * mx - b * my, c, 1.0 + d, dv - c * mx - d * my}};
  for (double v : t.m)
    if (!std::isfinite(v)) return std::nullopt;
  if (std::abs(t.det()) <= 1e-9) return std::nullopt;
  return t;
}

inline double reprojection_error(const AffineTransform& t, const PointPair& p) {
  const auto [u, v] = t.apply(p.x, p.y);
  return std::hypot(u - p.u, v - p.v);
}

}  // namespace detail

struct RansacOptions {
  std::size_t iterations = 1000;
  double inlier_px = 2.0;
  std::uint64_t seed = 0;
};

struct RansacFit {
  AffineTransform model;
  std::size_t inliers = 0;
  std::vector<bool> inlier_mask;
};

// Minimal 3-pair hypotheses; the best consensus (most inliers, then least
// squared residual, then earliest iteration) is refit by least squares.
inline RansacFit ransac_affine(const std::vector<PointPair>& pairs, const RansacOptions& opt = {}) {
  if (pairs.size() < 3) throw DomainError("ransac_affine: need at least 3 point pairs");
  if (!(opt.inlier_px > 0.0)) throw DomainError("ransac_affine: inlier threshold must be positive");
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);

  std::vector<std::size_t> best_set;
  double best_residual = std::numeric_limits<double>::infinity();
  bool any_model = false;
  const std::size_t iters = std::max<std::size_t>(1, opt.iterations);
  for (std::size_t it = 0; it < iters; ++it) {
    std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (pairs.size() == 3) a = 0, b = 1, c = 2;
    if (a == b || a == c || b == c) continue;
    const auto model = detail::fit_affine(pairs, {a, b, c});
    if (!model) continue;
    any_model = true;
    std::vector<std::size_t> set;
    double residual = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double e = detail::reprojection_error(*model, pairs[i]);
      if (e <= opt.inlier_px) {
        set.push_back(i);
        residual += e * e;
      }
    }
    if (set.size() > best_set.size() || (set.size() == best_set.size() && residual < best_residual)) {
      best_set = std::move(set);
      best_residual = residual;
    }
  }
  if (!any_model) throw DomainError("ransac_affine: every sample was collinear");

  auto refit = detail::fit_affine(pairs, best_set);
  if (!refit) throw DomainError("ransac_affine: consensus set is collinear");
  RansacFit fit;
  fit.model = *refit;
  fit.inlier_mask.assign(pairs.size(), false);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (detail::reprojection_error(fit.model, pairs[i]) <= opt.inlier_px) {
      fit.inlier_mask[i] = true;
      ++fit.inliers;
    }
  return fit;
}

// Mean and max of |A p - p| over integer pixel centres of a width x height grid.
inline AlignmentReport mean_displacement(const AffineTransform& t, std::uint32_t width, std::uint32_t height) {
  if (width == 0 || height == 0) throw DomainError("mean_displacement: empty grid");
  AlignmentReport r;
  double sum = 0.0;
  for (std::uint32_t y = 0; y < height; ++y)
    for (std::uint32_t x = 0; x < width; ++x) {
      const auto [dx, dy] = t.displacement(x, y);
      const double d = std::hypot(dx, dy);
      sum += d;
      r.max_px = std::max(r.max_px, d);
    }
  r.mean_px = sum / (static_cast<double>(width) * height);
  return r;
}

struct AlignOptions {
  std::size_t max_keypoints = 500;
  double ratio = 0.8;
  RansacOptions ransac;
  DetectorOptions detector;
};

struct AlignmentResult {
  AlignmentReport report;
  AffineTransform transform;
  std::vector<PointPair> matches;
};

// Keypoint pairs from image a to image b.
inline std::vector<PointPair> matched_points(const RgbImage& a, const RgbImage& b, const AlignOptions& opt) {
  const auto ka = detect_keypoints(a, opt.max_keypoints, opt.detector);
  const auto kb = detect_keypoints(b, opt.max_keypoints, opt.detector);
  std::vector<PointPair> pairs;
  for (auto [i, j] : match_keypoints(ka, kb, opt.ratio)) pairs.push_back({ka[i].x, ka[i].y, kb[j].x, kb[j].y});
  return pairs;
}

// Fits the affine from pre-matched pairs and reports its displacement field
// over a width x height grid.
inline AlignmentResult evaluate_pairs(std::vector<PointPair> pairs, std::uint32_t width, std::uint32_t height,
                                      const AlignOptions& opt = {}) {
  AlignmentResult res;
  const auto fit = ransac_affine(pairs, opt.ransac);
  res.transform = fit.model;
  res.report = mean_displacement(fit.model, width, height);
  res.report.inlier_count = fit.inliers;
  res.report.match_count = pairs.size();
  res.matches = std::move(pairs);
  return res;
}

inline AlignmentResult evaluate_alignment(const RgbImage& a, const RgbImage& b, const AlignOptions& opt = {}) {
  if (a.width != b.width || a.height != b.height) throw DomainError("evaluate_alignment: image sizes differ");
  return evaluate_pairs(matched_points(a, b, opt), a.width, a.height, opt);
}

// Resamples img so that content at p moves to t(p) (bilinear, edge clamp).
inline RgbImage warp_affine(const RgbImage& img, const AffineTransform& t) {
  const auto inv = t.inverse();
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  RgbImage out(img.width, img.height);
  std::array<std::vector<double>, 3> planes;
  for (int c = 0; c < 3; ++c) {
    planes[c].resize(img.pixels());
    for (std::size_t i = 0; i < img.pixels(); ++i) planes[c][i] = img.values[i * 3 + c];
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto [sx, sy] = inv.apply(x, y);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = std::clamp(detail::sample_bilinear(planes[c], w, h, sx, sy), 0.0, 1.0);
    }
  return out;
}

// Random overlapping rectangles and discs, lightly blurred: plenty of
// corners with well-defined sub-pixel positions.
inline RgbImage textured_image(std::uint32_t width, std::uint32_t height, std::uint64_t seed, int shapes = 120) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int w = static_cast<int>(width), h = static_cast<int>(height);
  std::vector<double> g(static_cast<std::size_t>(w) * h, 0.5);
  for (int s = 0; s < shapes; ++s) {
    const double cx = u01(rng) * w, cy = u01(rng) * h;
    const double rx = 2.0 + u01(rng) * 10.0, ry = 2.0 + u01(rng) * 10.0;
    const double level = u01(rng);
    const bool disc = u01(rng) < 0.3;
    for (int y = std::max(0, static_cast<int>(cy - ry)); y < std::min(h, static_cast<int>(cy + ry) + 1); ++y)
      for (int x = std::max(0, static_cast<int>(cx - rx)); x < std::min(w, static_cast<int>(cx + rx) + 1); ++x) {
        const double nx = (x - cx) / rx, ny = (y - cy) / ry;
        if (disc ? nx * nx + ny * ny <= 1.0 : (std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0)) g[y * w + x] = level;
      }
  }
  g = detail::gaussian_blur(g, w, h, 0.8);
  RgbImage img(width, height);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int c = 0; c < 3; ++c) img.values[i * 3 + c] = std::clamp(g[i], 0.0, 1.0);
  return img;
}

}  // namespace evsee::align
