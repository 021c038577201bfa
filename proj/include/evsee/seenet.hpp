#pragma once

// Desk-scale SEE-Net: per-pixel input heads with position / Bayer
// features, a cross-attention fusion block followed by a weight-shared
// refinement loop (the broad light-range representation), a prompt
// embedding, and a pixel-wise MLP decoder that re-injects the prompt
// embedding before every layer. Training minimises Charbonnier + gradient
// L1 with plain SGD.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evsee/bayer.hpp"
#include "evsee/error.hpp"
#include "evsee/events.hpp"
#include "evsee/image.hpp"
#include "evsee/tensor.hpp"

namespace evsee::see {

using nn::NdArray;
using nn::Tape;
using nn::Var;

enum class PromptMerge { Add, Multiply };

struct SeeNetConfig {
  std::size_t channels = 16;       // C_f
  std::size_t heads = 2;
  std::size_t loop_count = 4;      // L
  std::size_t decoder_layers = 5;
  std::size_t voxel_bins = 8;      // M
  std::size_t pos_dim = 8;
  std::size_t ffn_mult = 2;        // feed-forward hidden width = ffn_mult * C_f
  std::size_t prompt_hidden = 16;  // width of the inner prompt MLP
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double epsilon = 1e-3;
  std::uint64_t seed = 0;
  PromptMerge merge = PromptMerge::Add;
  BayerOrder bayer = BayerOrder::RGGB;

  void validate() const {
    detail::require(channels > 0 && heads > 0 && channels % heads == 0, "channels must be divisible by heads");
    detail::require(loop_count >= 1, "loop_count must be >= 1");
    detail::require(decoder_layers >= 2, "decoder_layers must be >= 2");
    detail::require(voxel_bins >= 1, "voxel_bins must be >= 1");
    detail::require(pos_dim >= 3, "pos_dim must be >= 3");
    detail::require(ffn_mult >= 1 && prompt_hidden >= 1, "ffn_mult and prompt_hidden must be >= 1");
    detail::require(epsilon >= 0.0 && lambda1 >= 0.0 && lambda2 >= 0.0, "loss weights must be non-negative");
  }

  friend bool operator==(const SeeNetConfig&, const SeeNetConfig&) = default;
};

// Config used to size the model against the published 1.9M parameter count.
inline SeeNetConfig calibration_config() {
  SeeNetConfig c;
  c.channels = 248;
  c.heads = 8;
  c.loop_count = 20;
  c.voxel_bins = 16;
  c.pos_dim = 16;
  c.prompt_hidden = 64;
  return c;
}

// ---- flat key=value config text ------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline std::string config_to_text(const SeeNetConfig& c) {
  std::string s;
  auto put = [&](const char* k, const std::string& v) { s += std::string(k) + "=" + v + "\n"; };
  put("channels", std::to_string(c.channels));
  put("heads", std::to_string(c.heads));
  put("loop_count", std::to_string(c.loop_count));
  put("decoder_layers", std::to_string(c.decoder_layers));
  put("voxel_bins", std::to_string(c.voxel_bins));
  put("pos_dim", std::to_string(c.pos_dim));
  put("ffn_mult", std::to_string(c.ffn_mult));
  put("prompt_hidden", std::to_string(c.prompt_hidden));
  put("lambda1", detail::fmt_double(c.lambda1));
  put("lambda2", detail::fmt_double(c.lambda2));
  put("epsilon", detail::fmt_double(c.epsilon));
  put("seed", std::to_string(c.seed));
  put("merge", c.merge == PromptMerge::Add ? "add" : "mul");
  put("bayer", std::string(to_string(c.bayer)));
  return s;
}

// Applies one key=value assignment; unknown keys are a domain error.
inline void set_config_value(SeeNetConfig& c, const std::string& key, const std::string& value) {
  auto as_size = [&] {
    std::size_t v = 0;
    auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size())
      throw DomainError("config: bad integer for " + key + ": " + value);
    return v;
  };
  auto as_double = [&] {
    double v = 0;
    auto r = std::from_chars(value.data(), value.data() + value.size(), v);
    if (r.ec != std::errc() || r.ptr != value.data() + value.size())
      throw DomainError("config: bad number for " + key + ": " + value);
    return v;
  };
  if (key == "channels") c.channels = as_size();
  else if (key == "heads") c.heads = as_size();
  else if (key == "loop_count") c.loop_count = as_size();
  else if (key == "decoder_layers") c.decoder_layers = as_size();
  else if (key == "voxel_bins") c.voxel_bins = as_size();
  else if (key == "pos_dim") c.pos_dim = as_size();
  else if (key == "ffn_mult") c.ffn_mult = as_size();
  else if (key == "prompt_hidden") c.prompt_hidden = as_size();
  else if (key == "lambda1") c.lambda1 = as_double();
  else if (key == "lambda2") c.lambda2 = as_double();
  else if (key == "epsilon") c.epsilon = as_double();
  else if (key == "seed") c.seed = as_size();
  else if (key == "merge") {
    if (value == "add") c.merge = PromptMerge::Add;
    else if (value == "mul") c.merge = PromptMerge::Multiply;
    else throw DomainError("config: merge must be add or mul");
  } else if (key == "bayer") c.bayer = parse_bayer_order(value);
  else throw DomainError("config: unknown key " + key);
}

inline SeeNetConfig config_from_text(const std::string& text) {
  SeeNetConfig c;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DomainError("config: expected key=value, got '" + line + "'");
    set_config_value(c, line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

// ---- parameters -----------------------------------------------------------

// Named parameter tensors. std::map keeps a stable order for
// serialisation and optimisation.
struct SeeNetParams {
  std::map<std::string, NdArray> tensors;

  const NdArray& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DomainError("missing parameter " + name);
    return it->second;
  }
  NdArray& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DomainError("missing parameter " + name);
    return it->second;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  friend bool operator==(const SeeNetParams&, const SeeNetParams&) = default;
};

inline const std::vector<std::string>& attention_blocks() {
  static const std::vector<std::string> kBlocks = {"c0", "loop.a", "loop.b"};
  return kBlocks;
}

// Exact parameter count from the layer shapes.
inline std::size_t parameter_count(const SeeNetConfig& cfg) {
  cfg.validate();
  const std::size_t C = cfg.channels, P = cfg.pos_dim, M = cfg.voxel_bins;
  const std::size_t hidden = cfg.ffn_mult * C, ph = cfg.prompt_hidden;
  const std::size_t head_e = (M + P) * C + C + C * C + C;
  const std::size_t head_i = (3 + P) * C + C + C * C + C;
  const std::size_t block = 3 * 2 * C            // three pre-norms, gain + shift
                            + 4 * (C * C + C)    // q, k, v, out projections
                            + C * hidden + hidden + hidden * C + C;
  const std::size_t prompt = ph + ph + (ph + 1) * C + C;
  const std::size_t decoder = (cfg.decoder_layers - 1) * (C * C + C) + 3 * C + 3;
  return head_e + head_i + attention_blocks().size() * block + prompt + decoder;
}

namespace detail {

inline NdArray xavier(nn::Shape shape, std::mt19937_64& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(shape[0]), fan_out = static_cast<double>(shape[1]);
  const double a = gain * std::sqrt(6.0 / (fan_in + fan_out));
  return NdArray::uniform(std::move(shape), -a, a, rng);
}

}  // namespace detail

// Xavier-uniform weights, zero biases, unit norm gains; fixed creation
// order so the seed fully determines every value.
inline SeeNetParams init_params(const SeeNetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t C = cfg.channels, P = cfg.pos_dim, M = cfg.voxel_bins;
  const std::size_t hidden = cfg.ffn_mult * C, ph = cfg.prompt_hidden;
  SeeNetParams p;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    p.tensors[name + ".w"] = detail::xavier({in, out}, rng, gain);
    p.tensors[name + ".b"] = NdArray({out}, 0.0);
  };
  linear("head_e.l1", M + P, C);
  linear("head_e.l2", C, C);
  linear("head_i.l1", 3 + P, C);
  linear("head_i.l2", C, C);
  for (const auto& blk : attention_blocks()) {
    for (const char* ln : {".ln_q", ".ln_kv", ".ln_ff"}) {
      p.tensors[blk + ln + ".g"] = NdArray({C}, 1.0);
      p.tensors[blk + ln + ".b"] = NdArray({C}, 0.0);
    }
    linear(blk + ".q", C, C);
    linear(blk + ".k", C, C);
    linear(blk + ".v", C, C);
    linear(blk + ".o", C, C, 0.5);
    linear(blk + ".ff1", C, hidden);
    linear(blk + ".ff2", hidden, C, 0.5);
  }
  linear("prompt.l1", 1, ph);
  linear("prompt.l2", ph + 1, C);
  for (std::size_t k = 0; k + 1 < cfg.decoder_layers; ++k) linear("dec." + std::to_string(k), C, C);
  linear("dec." + std::to_string(cfg.decoder_layers - 1), C, 3);
  return p;
}

// Parameters bound to a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const SeeNetParams& params, bool requires_grad) {
    for (const auto& [name, t] : params.tensors) vars_.emplace(name, tape.leaf(t, requires_grad));
  }
  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw DomainError("missing parameter " + name);
    return it->second;
  }
  const std::map<std::string, Var>& all() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

// ---- building blocks ------------------------------------------------------

inline Var linear(const Var& x, const BoundParams& p, const std::string& name) {
  return nn::add_row(nn::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

inline Var layer_norm(const Var& x, const BoundParams& p, const std::string& name) {
  return nn::add_row(nn::mul_row(nn::layer_norm_lastdim(x), p[name + ".g"]), p[name + ".b"]);
}

struct Features {
  Var events;  // F_e, (H*W) x C
  Var image;   // F_i, (H*W) x C
};

// Two per-pixel linear layers with a ReLU between, on [E, pos] and [I, pos].
inline Features input_heads(const Var& image, const Var& voxels, const Var& pos, const BoundParams& p) {
  if (image.rows() != voxels.rows() || image.rows() != pos.rows())
    throw DomainError("input_heads: image, voxel and position tensors cover different pixel counts");
  auto head = [&](const Var& x, const std::string& name) {
    return linear(nn::relu(linear(nn::concat_lastdim({x, pos}), p, name + ".l1")), p, name + ".l2");
  };
  return {head(voxels, "head_e"), head(image, "head_i")};
}

// Multi-head softmax(Q K^T / sqrt(d)) V on the normalised inputs, heads
// concatenated, before the output projection.
inline Var attention_term(const Var& query, const Var& kv, const BoundParams& p, const std::string& block,
                          std::size_t heads) {
  const std::size_t C = query.last_dim();
  if (kv.last_dim() != C) throw DomainError("cross_attention: feature widths differ");
  if (heads == 0 || C % heads != 0) throw DomainError("cross_attention: channels not divisible by heads");
  const Var qn = layer_norm(query, p, block + ".ln_q");
  const Var kvn = layer_norm(kv, p, block + ".ln_kv");
  const Var q = linear(qn, p, block + ".q");
  const Var k = linear(kvn, p, block + ".k");
  const Var v = linear(kvn, p, block + ".v");
  const std::size_t d = C / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = nn::slice_lastdim(q, h * d, (h + 1) * d);
    const Var kh = nn::slice_lastdim(k, h * d, (h + 1) * d);
    const Var vh = nn::slice_lastdim(v, h * d, (h + 1) * d);
    const Var attn = nn::softmax_lastdim(nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt_d));
    outs.push_back(nn::matmul(attn, vh));
  }
  return heads == 1 ? outs[0] : nn::concat_lastdim(std::span<const Var>(outs));
}

inline void require_finite(const Var& v, const std::string& where) {
  for (double x : v.value())
    if (!std::isfinite(x)) throw NumericError("non-finite value in " + where);
}

// Pre-norm cross-attention block: x = q + O(attn(q, kv)); out = x + FFN(x).
inline Var cross_attention(const Var& query, const Var& kv, const BoundParams& p, const std::string& block,
                           std::size_t heads) {
  require_finite(query, "cross_attention query (" + block + ")");
  require_finite(kv, "cross_attention key/value (" + block + ")");
  const Var x = nn::add(query, linear(attention_term(query, kv, p, block, heads), p, block + ".o"));
  const Var h = nn::relu(linear(layer_norm(x, p, block + ".ln_ff"), p, block + ".ff1"));
  return nn::add(x, linear(h, p, block + ".ff2"));
}

// One refinement step: attend over the event features, then over F_1.
inline Var loop_step(const Var& fe, const Var& f1, const Var& fj, const BoundParams& p, std::size_t heads) {
  const Var mid = cross_attention(fj, fe, p, "loop.a", heads);
  return cross_attention(mid, f1, p, "loop.b", heads);
}

// F_1 = c0(query F_i, key/value F_e), then L weight-shared loop steps.
inline Var encode(const Features& f, const SeeNetConfig& cfg, const BoundParams& p) {
  const Var f1 = cross_attention(f.image, f.events, p, "c0", cfg.heads);
  Var fj = f1;
  for (std::size_t j = 0; j < cfg.loop_count; ++j) {
    fj = loop_step(f.events, f1, fj, p, cfg.heads);
    for (double x : fj.value())
      if (!std::isfinite(x)) throw NumericError("encode: non-finite feature after loop iteration " + std::to_string(j + 1));
  }
  return fj;
}

inline void check_prompt(double b) {
  if (!(b > 0.0 && b < 1.0)) throw DomainError("brightness prompt must lie in (0, 1), got " + detail::fmt_double(b));
}

// B_vec = MLP([relu(MLP(B)), B]), a 1 x C_f row.
inline Var prompt_embed(const Var& prompt, const BoundParams& p) {
  check_prompt(prompt.item());
  const Var b = nn::reshape(prompt, {1, 1});
  const Var inner = nn::relu(linear(b, p, "prompt.l1"));
  return linear(nn::concat_lastdim({inner, b}), p, "prompt.l2");
}

// Pixel-wise MLP; every layer input is merged with B_vec first. Hidden
// layers use ReLU, the last maps to RGB through a sigmoid.
inline Var decode(const Var& blr, const Var& bvec, const SeeNetConfig& cfg, const BoundParams& p) {
  if (bvec.size() != blr.last_dim()) throw DomainError("decode: prompt embedding width differs from BLR width");
  Var x = blr;
  for (std::size_t k = 0; k < cfg.decoder_layers; ++k) {
    const Var in = cfg.merge == PromptMerge::Add ? nn::add_row(x, bvec) : nn::mul_row(x, bvec);
    const Var y = linear(in, p, "dec." + std::to_string(k));
    x = (k + 1 < cfg.decoder_layers) ? nn::relu(y) : nn::sigmoid(y);
  }
  return x;
}

// lambda1 * mean(sqrt((o - t)^2 + eps^2)) + lambda2 * G, where G averages
// |dx o - dx t| and |dy o - dy t| over all 2*H*W*3 forward-difference
// entries (zero on the far border).
inline Var loss(const Var& out, const Var& target, std::size_t height, std::size_t width, double lambda1,
                double lambda2, double epsilon) {
  nn::detail::require_same_shape(out, target, "loss");
  const Var diff = nn::sub(out, target);
  const Var charb = nn::mean(nn::sqrt(nn::add_scalar(nn::square(diff), epsilon * epsilon)));
  const Var gx = nn::mean(nn::abs(nn::sub(nn::diff_x(out, height, width), nn::diff_x(target, height, width))));
  const Var gy = nn::mean(nn::abs(nn::sub(nn::diff_y(out, height, width), nn::diff_y(target, height, width))));
  const Var grad = nn::scale(nn::add(gx, gy), 0.5);
  return nn::add(nn::scale(charb, lambda1), nn::scale(grad, lambda2));
}

inline NdArray image_array(const RgbImage& img) {
  return NdArray({img.pixels(), 3}, img.values);
}

// Input frames are rescaled to mean 0.5 before the image head, so exposure
// information reaches the output only through the prompt.
inline NdArray normalized_image_array(const RgbImage& img) {
  NdArray a = image_array(img);
  const double gain = 0.5 / std::max(brightness(img), 1e-3);
  for (double& v : a.data) v *= gain;
  return a;
}

inline RgbImage array_image(std::span<const double> values, std::uint32_t width, std::uint32_t height) {
  RgbImage img(width, height);
  if (values.size() != img.values.size()) throw DomainError("output size does not match image size");
  std::copy(values.begin(), values.end(), img.values.begin());
  return img;
}

inline double loss_value(const RgbImage& out, const RgbImage& target, const SeeNetConfig& cfg) {
  if (out.width != target.width || out.height != target.height) throw DomainError("loss: image shapes differ");
  Tape t;
  return loss(t.constant(image_array(out)), t.constant(image_array(target)), out.height, out.width, cfg.lambda1,
              cfg.lambda2, cfg.epsilon)
      .item();
}

// ---- full model -----------------------------------------------------------

struct ModelInputs {
  Var image, voxels, pos, prompt;
};

inline ModelInputs bind_inputs(Tape& tape, const RgbImage& img, const VoxelGrid& voxels, double prompt,
                               const SeeNetConfig& cfg) {
  check_prompt(prompt);
  if (voxels.width != img.width || voxels.height != img.height)
    throw DomainError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      " but events are " + std::to_string(voxels.width) + "x" + std::to_string(voxels.height));
  if (voxels.bins != cfg.voxel_bins)
    throw DomainError("voxel grid has " + std::to_string(voxels.bins) + " bins, model expects " +
                      std::to_string(cfg.voxel_bins));
  return {tape.constant(normalized_image_array(img)), tape.constant(voxels.as_array()),
          tape.constant(position_embedding(img.width, img.height, cfg.bayer, cfg.pos_dim)),
          tape.constant(NdArray({1}, {prompt}))};
}

inline Var forward(const ModelInputs& in, const SeeNetConfig& cfg, const BoundParams& p) {
  const Features f = input_heads(in.image, in.voxels, in.pos, p);
  const Var blr = encode(f, cfg, p);
  return decode(blr, prompt_embed(in.prompt, p), cfg, p);
}

// I_o = f_see(I_i, E, B).
inline RgbImage forward(const RgbImage& img, const VoxelGrid& voxels, double prompt, const SeeNetConfig& cfg,
                        const SeeNetParams& params) {
  cfg.validate();
  Tape tape;
  const BoundParams p(tape, params, false);
  const auto in = bind_inputs(tape, img, voxels, prompt, cfg);
  const Var out = forward(in, cfg, p);
  return array_image(out.value(), img.width, img.height);
}

// ---- training -------------------------------------------------------------

struct TrainingExample {
  RgbImage input;
  VoxelGrid voxels;
  RgbImage target;
};

using ExampleSource = std::function<TrainingExample(std::size_t index)>;

struct TrainOptions {
  std::size_t steps = 500;
  double lr = 0.05;
  std::uint64_t seed = 0;  // example order
};

struct TrainResult {
  SeeNetParams params;
  std::vector<double> losses;  // loss at each step, before its update
};

// Loss of one example with B = brightness(target), plus gradients when
// `grads` is given (same keys as params).
inline double example_loss(const TrainingExample& ex, const SeeNetConfig& cfg, const SeeNetParams& params,
                           std::map<std::string, std::vector<double>>* grads) {
  Tape tape;
  const BoundParams p(tape, params, grads != nullptr);
  const double prompt = std::clamp(brightness(ex.target), 1e-3, 1.0 - 1e-3);
  const auto in = bind_inputs(tape, ex.input, ex.voxels, prompt, cfg);
  const Var out = forward(in, cfg, p);
  const Var target = tape.constant(image_array(ex.target));
  const Var l = loss(out, target, ex.input.height, ex.input.width, cfg.lambda1, cfg.lambda2, cfg.epsilon);
  if (grads) {
    tape.backward(l);
    for (const auto& [name, v] : p.all()) {
      auto g = v.grad();
      (*grads)[name] = g.empty() ? std::vector<double>(v.size(), 0.0) : std::vector<double>(g.begin(), g.end());
    }
  }
  return l.item();
}

// Plain SGD on one example per step; the example index is drawn from a
// generator seeded with opt.seed.
inline TrainResult train_toy(std::size_t example_count, const ExampleSource& source, const SeeNetConfig& cfg,
                             const TrainOptions& opt) {
  cfg.validate();
  if (example_count == 0) throw DomainError("train_toy: empty dataset");
  if (!std::isfinite(opt.lr) || opt.lr < 0.0) throw DomainError("train_toy: learning rate must be finite and >= 0");
  TrainResult res{init_params(cfg), {}};
  res.losses.reserve(opt.steps);
  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, example_count - 1);
  std::map<std::string, std::vector<double>> grads;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    const TrainingExample ex = source(pick(rng));
    const double l = example_loss(ex, cfg, res.params, &grads);
    if (!std::isfinite(l)) throw NumericError("train_toy: non-finite loss at step " + std::to_string(step));
    res.losses.push_back(l);
    for (auto& [name, t] : res.params.tensors) {
      const auto& g = grads.at(name);
      for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] -= opt.lr * g[i];
    }
  }
  return res;
}

inline TrainResult train_toy(std::span<const TrainingExample> examples, const SeeNetConfig& cfg,
                             const TrainOptions& opt) {
  return train_toy(examples.size(), [examples](std::size_t i) { return examples[i]; }, cfg, opt);
}

// Mean example loss over a dataset, each with B = brightness(target).
inline double dataset_loss(std::size_t example_count, const ExampleSource& source, const SeeNetConfig& cfg,
                           const SeeNetParams& params) {
  if (example_count == 0) throw DomainError("dataset_loss: empty dataset");
  double s = 0.0;
  for (std::size_t i = 0; i < example_count; ++i) s += example_loss(source(i), cfg, params, nullptr);
  return s / static_cast<double>(example_count);
}

}  // namespace evsee::see
