#pragma once

// On-disk formats. Binary containers are little-endian regardless of host.
//
//   PPM  P6, maxval 255            RgbImage
//   PGM  P5, declared maxval       RawImage (2-byte big-endian samples above 255)
//   EVSF "EVSF" u32 ndim u32 dims[] f32 payload, row-major
//   EVT0 "EVT0" u16 w u16 h u64 n then n x (u16 x, u16 y, i64 t_us, i8 p)
//   CSV  events `x,y,t_us,p`; IMU `t_us,ax,ay,az,gx,gy,gz`
//   checkpoint directory: config.txt, params.index (name offset), params.bin

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evsee/align.hpp"
#include "evsee/dataset.hpp"
#include "evsee/error.hpp"
#include "evsee/events.hpp"
#include "evsee/image.hpp"
#include "evsee/imu.hpp"
#include "evsee/seenet.hpp"
#include "evsee/tensor.hpp"

namespace evsee::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// 64-bit FNV-1a, used for manifest content hashes.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// ---- little-endian byte plumbing -----------------------------------------

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_bytes(std::string_view s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(what_ + ": truncated data");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

// ---- Netpbm ---------------------------------------------------------------

namespace detail {

struct PnmHeader {
  std::string magic;
  std::uint32_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

inline PnmHeader parse_pnm_header(std::string_view bytes, const std::string& what) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_ws();
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  auto number = [&] {
    const std::string t = token();
    std::uint32_t v = 0;
    auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) throw IoError(what + ": malformed header");
    return v;
  };
  h.magic = token();
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw IoError(what + ": malformed header");
  h.data_offset = pos + 1;
  return h;
}

}  // namespace detail

inline std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.values.size());
  for (double v : img.values) out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  return out;
}

inline RgbImage decode_ppm(std::string_view bytes, const std::string& what = "ppm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P6" || h.maxval != 255) throw IoError(what + ": expected binary PPM (P6) with maxval 255");
  RgbImage img(h.width, h.height);
  if (bytes.size() - h.data_offset != img.values.size()) throw IoError(what + ": pixel data size mismatch");
  for (std::size_t i = 0; i < img.values.size(); ++i)
    img.values[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0;
  return img;
}

inline void write_ppm(const fs::path& p, const RgbImage& img) { write_file(p, encode_ppm(img)); }
inline RgbImage read_ppm(const fs::path& p) { return decode_ppm(read_file(p), p.string()); }

inline std::string encode_pgm(const RawImage& raw) {
  const std::uint32_t maxval = raw.max_value();
  std::string out = "P5\n" + std::to_string(raw.width) + " " + std::to_string(raw.height) + "\n" +
                    std::to_string(maxval) + "\n";
  for (auto v : raw.values) {
    if (maxval > 255) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

inline RawImage decode_pgm(std::string_view bytes, const std::string& what = "pgm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P5") throw IoError(what + ": expected binary PGM (P5)");
  int depth = 0;
  while (depth < 16 && ((1u << depth) - 1u) < h.maxval) ++depth;
  if (((1u << depth) - 1u) != h.maxval || depth < 8 || depth > 12)
    throw IoError(what + ": maxval must be 2^b - 1 for a bit depth b in [8, 12]");
  RawImage raw{h.width, h.height, depth, {}};
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  const std::size_t bpp = h.maxval > 255 ? 2 : 1;
  if (bytes.size() - h.data_offset != n * bpp) throw IoError(what + ": pixel data size mismatch");
  raw.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset + i * bpp);
    raw.values[i] = static_cast<std::uint16_t>(bpp == 2 ? (p[0] << 8) | p[1] : p[0]);
    if (raw.values[i] > h.maxval) throw IoError(what + ": sample exceeds maxval");
  }
  return raw;
}

inline void write_pgm(const fs::path& p, const RawImage& raw) { write_file(p, encode_pgm(raw)); }
inline RawImage read_pgm(const fs::path& p) { return decode_pgm(read_file(p), p.string()); }

// ---- EVSF tensor container ------------------------------------------------

inline void append_evsf(ByteWriter& w, const nn::NdArray& a) {
  w.put_bytes("EVSF");
  w.put(static_cast<std::uint32_t>(a.shape.size()));
  for (auto d : a.shape) w.put(static_cast<std::uint32_t>(d));
  for (double v : a.data) w.put_f32(static_cast<float>(v));
}

inline nn::NdArray read_evsf_record(ByteReader& r, const std::string& what) {
  if (r.get_bytes(4) != "EVSF") throw IoError(what + ": bad EVSF magic");
  const auto ndim = r.get<std::uint32_t>();
  if (ndim > 16) throw IoError(what + ": implausible rank");
  nn::Shape shape(ndim);
  for (auto& d : shape) d = r.get<std::uint32_t>();
  nn::NdArray a(shape);
  for (double& v : a.data) v = r.get_f32();
  return a;
}

inline std::string encode_evsf(const nn::NdArray& a) {
  ByteWriter w;
  append_evsf(w, a);
  return w.bytes();
}

inline nn::NdArray decode_evsf(std::string_view bytes, const std::string& what = "evsf") {
  ByteReader r(bytes, what);
  auto a = read_evsf_record(r, what);
  if (!r.done()) throw IoError(what + ": trailing bytes");
  return a;
}

inline void write_evsf(const fs::path& p, const nn::NdArray& a) { write_file(p, encode_evsf(a)); }
inline nn::NdArray read_evsf(const fs::path& p) { return decode_evsf(read_file(p), p.string()); }

inline nn::NdArray image_tensor(const RgbImage& img) { return nn::NdArray({img.height, img.width, 3}, img.values); }

inline RgbImage tensor_image(const nn::NdArray& a) {
  if (a.shape.size() != 3 || a.shape[2] != 3) throw DomainError("tensor is not H x W x 3");
  RgbImage img(static_cast<std::uint32_t>(a.shape[1]), static_cast<std::uint32_t>(a.shape[0]));
  img.values = a.data;
  if (!img.in_range()) throw DomainError("image values outside [0, 1]");
  return img;
}

inline nn::NdArray voxel_tensor(const VoxelGrid& g) { return nn::NdArray({g.height, g.width, g.bins}, g.values); }

// ---- events ---------------------------------------------------------------

inline std::string encode_events(const EventStream& s) {
  if (s.width > 0xFFFF || s.height > 0xFFFF) throw DomainError("event sensor exceeds 16-bit dimensions");
  ByteWriter w;
  w.put_bytes("EVT0");
  w.put(static_cast<std::uint16_t>(s.width));
  w.put(static_cast<std::uint16_t>(s.height));
  w.put(static_cast<std::uint64_t>(s.events.size()));
  for (const Event& e : s.events) {
    w.put(e.x);
    w.put(e.y);
    w.put(e.t_us);
    w.put(e.p);
  }
  return w.bytes();
}

inline EventStream decode_events(std::string_view bytes, const std::string& what = "events") {
  ByteReader r(bytes, what);
  if (r.get_bytes(4) != "EVT0") throw IoError(what + ": bad EVT0 magic");
  EventStream s;
  s.width = r.get<std::uint16_t>();
  s.height = r.get<std::uint16_t>();
  const auto n = r.get<std::uint64_t>();
  if (n > (bytes.size() - r.pos()) / 13) throw IoError(what + ": truncated data");
  s.events.resize(n);
  for (auto& e : s.events) {
    e.x = r.get<std::uint16_t>();
    e.y = r.get<std::uint16_t>();
    e.t_us = r.get<std::int64_t>();
    e.p = r.get<std::int8_t>();
  }
  if (!r.done()) throw IoError(what + ": trailing bytes");
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw IoError(what + ": " + e.what());
  }
  return s;
}

inline std::string encode_events_csv(const EventStream& s) {
  std::string out = "x,y,t_us,p\n";
  for (const Event& e : s.events)
    out += std::to_string(e.x) + "," + std::to_string(e.y) + "," + std::to_string(e.t_us) + "," +
           std::to_string(static_cast<int>(e.p)) + "\n";
  return out;
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && r.ec == std::errc() && r.ptr == s.data() + s.size();
}

// Calls fn(line_number, fields) for every data line after the header.
template <typename Fn>
void for_each_csv_row(std::string_view text, std::string_view header, const std::string& what, Fn&& fn) {
  std::size_t pos = 0, line_no = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!saw_header) {
      if (line != header) throw IoError(what + ":1: expected header '" + std::string(header) + "'");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    fn(line_no, split(line, ','));
  }
  if (!saw_header) throw IoError(what + ": empty file");
}

}  // namespace detail

// Sensor size is not stored in CSV; it is taken from the arguments or, when
// zero, from the largest coordinate seen.
inline EventStream decode_events_csv(std::string_view text, std::uint32_t width = 0, std::uint32_t height = 0,
                                     const std::string& what = "events.csv") {
  EventStream s{width, height, {}};
  std::uint32_t mx = 0, my = 0;
  detail::for_each_csv_row(text, "x,y,t_us,p", what, [&](std::size_t line, const auto& f) {
    Event e;
    int p = 0;
    if (f.size() != 4 || !detail::parse_number(f[0], e.x) || !detail::parse_number(f[1], e.y) ||
        !detail::parse_number(f[2], e.t_us) || !detail::parse_number(f[3], p) || (p != 1 && p != -1))
      throw IoError(what + ":" + std::to_string(line) + ": malformed event row");
    e.p = static_cast<std::int8_t>(p);
    mx = std::max<std::uint32_t>(mx, e.x + 1u);
    my = std::max<std::uint32_t>(my, e.y + 1u);
    s.events.push_back(e);
  });
  if (s.width == 0) s.width = mx;
  if (s.height == 0) s.height = my;
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw IoError(what + ": " + e.what());
  }
  return s;
}

inline void write_events(const fs::path& p, const EventStream& s) {
  write_file(p, p.extension() == ".csv" ? encode_events_csv(s) : encode_events(s));
}

inline EventStream read_events(const fs::path& p, std::uint32_t width = 0, std::uint32_t height = 0) {
  const auto bytes = read_file(p);
  if (p.extension() == ".csv") return decode_events_csv(bytes, width, height, p.string());
  return decode_events(bytes, p.string());
}

// ---- IMU CSV --------------------------------------------------------------

inline std::string encode_imu_csv(const imu::ImuSequence& seq) {
  std::string out = "t_us,ax,ay,az,gx,gy,gz\n";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    out += std::to_string(seq.t_us[i]);
    for (std::size_t c = 0; c < imu::kChannels; ++c) out += "," + format_double(seq.at(i, c));
    out += "\n";
  }
  return out;
}

// Rate is the reciprocal of the median timestamp step (1000 Hz for a single row).
inline imu::ImuSequence decode_imu_csv(std::string_view text, const std::string& what = "imu.csv") {
  imu::ImuSequence seq;
  detail::for_each_csv_row(text, "t_us,ax,ay,az,gx,gy,gz", what, [&](std::size_t line, const auto& f) {
    std::int64_t t = 0;
    bool ok = f.size() == 1 + imu::kChannels && detail::parse_number(f[0], t);
    std::array<double, imu::kChannels> row{};
    for (std::size_t c = 0; ok && c < imu::kChannels; ++c) ok = detail::parse_number(f[c + 1], row[c]) && std::isfinite(row[c]);
    if (!ok) throw IoError(what + ":" + std::to_string(line) + ": malformed IMU row");
    if (!seq.t_us.empty() && t <= seq.t_us.back())
      throw IoError(what + ":" + std::to_string(line) + ": timestamps must increase");
    seq.t_us.push_back(t);
    seq.samples.insert(seq.samples.end(), row.begin(), row.end());
  });
  if (seq.t_us.empty()) throw IoError(what + ": no samples");
  if (seq.t_us.size() > 1) {
    std::vector<std::int64_t> steps;
    for (std::size_t i = 1; i < seq.t_us.size(); ++i) steps.push_back(seq.t_us[i] - seq.t_us[i - 1]);
    std::nth_element(steps.begin(), steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2), steps.end());
    seq.rate_hz = 1e6 / static_cast<double>(steps[steps.size() / 2]);
  }
  return seq;
}

inline void write_imu_csv(const fs::path& p, const imu::ImuSequence& s) { write_file(p, encode_imu_csv(s)); }
inline imu::ImuSequence read_imu_csv(const fs::path& p) { return decode_imu_csv(read_file(p), p.string()); }

inline std::string registration_line(const imu::Registration& r) {
  return std::to_string(r.bias_samples) + "," + format_double(r.bias_us) + "," + std::to_string(r.length) + "," +
         format_double(r.score);
}

inline std::string alignment_line(const align::AlignmentReport& r) {
  return format_double(r.mean_px) + "," + format_double(r.max_px) + "," + std::to_string(r.inlier_count) + "," +
         std::to_string(r.match_count);
}

inline std::string transform_line(const align::AffineTransform& t) {
  std::string s;
  for (std::size_t i = 0; i < 6; ++i) s += (i ? " " : "") + format_double(t.m[i]);
  return s;
}

// ---- checkpoints ----------------------------------------------------------

inline void save_checkpoint(const fs::path& dir, const see::SeeNetConfig& cfg, const see::SeeNetParams& params) {
  ByteWriter blob;
  std::string index;
  for (const auto& [name, t] : params.tensors) {
    index += name + " " + std::to_string(blob.bytes().size()) + "\n";
    append_evsf(blob, t);
  }
  fs::create_directories(dir);
  write_file(dir / "config.txt", see::config_to_text(cfg));
  write_file(dir / "params.index", index);
  write_file(dir / "params.bin", blob.bytes());
}

struct Checkpoint {
  see::SeeNetConfig config;
  see::SeeNetParams params;
};

inline Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  try {
    ck.config = see::config_from_text(read_file(dir / "config.txt"));
  } catch (const DomainError& e) {
    throw IoError((dir / "config.txt").string() + ": " + e.what());
  }
  const std::string index = read_file(dir / "params.index");
  const std::string blob = read_file(dir / "params.bin");
  std::istringstream lines(index);
  std::string name;
  std::size_t offset = 0;
  while (lines >> name >> offset) {
    if (offset >= blob.size()) throw IoError("checkpoint index offset past end of params.bin");
    ByteReader r(std::string_view(blob).substr(offset), (dir / "params.bin").string());
    ck.params.tensors[name] = read_evsf_record(r, name);
  }
  // shapes must match what the config would build
  const auto expect = see::init_params(ck.config);
  for (const auto& [n, t] : expect.tensors) {
    auto it = ck.params.tensors.find(n);
    if (it == ck.params.tensors.end()) throw IoError("checkpoint is missing parameter " + n);
    if (it->second.shape != t.shape) throw IoError("checkpoint parameter " + n + " has shape " + nn::shape_str(it->second.shape));
  }
  if (ck.params.tensors.size() != expect.tensors.size()) throw IoError("checkpoint has unexpected parameters");
  return ck;
}

// Rounds every parameter through f32, the precision checkpoints store.
inline see::SeeNetParams f32_rounded(see::SeeNetParams p) {
  for (auto& [_, t] : p.tensors)
    for (double& v : t.data) v = static_cast<float>(v);
  return p;
}

// ---- scene manifest -------------------------------------------------------

struct ManifestEntry {
  std::string scene_id;
  data::LightingClass lighting = data::LightingClass::Normal;
  std::string frames_path;
  std::string events_path;
  double exposure_scale = 1.0;
};

inline std::string encode_scene_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = "scene_id,lighting_class,frames_path,events_path,exposure_scale\n";
  for (const auto& e : entries)
    out += e.scene_id + "," + std::string(data::to_string(e.lighting)) + "," + e.frames_path + "," + e.events_path +
           "," + format_double(e.exposure_scale) + "\n";
  return out;
}

inline std::vector<ManifestEntry> decode_scene_manifest(std::string_view text, const std::string& what = "manifest") {
  std::vector<ManifestEntry> out;
  detail::for_each_csv_row(text, "scene_id,lighting_class,frames_path,events_path,exposure_scale", what,
                           [&](std::size_t line, const auto& f) {
                             ManifestEntry e;
                             if (f.size() != 5 || !detail::parse_number(f[4], e.exposure_scale))
                               throw IoError(what + ":" + std::to_string(line) + ": malformed manifest row");
                             try {
                               e.lighting = data::parse_lighting(f[1]);
                             } catch (const DomainError&) {
                               throw IoError(what + ":" + std::to_string(line) + ": unknown lighting class");
                             }
                             e.scene_id = f[0];
                             e.frames_path = f[2];
                             e.events_path = f[3];
                             out.push_back(std::move(e));
                           });
  return out;
}

// ---- flat key=value files -------------------------------------------------

inline std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw IoError(what + ":" + std::to_string(line_no) + ": expected key=value");
    kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace evsee::io
