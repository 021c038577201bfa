#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evsee/evsee.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace evsee;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDomain = 2, kIo = 3, kNumeric = 4 };

// Enhancement runs dense attention over all H*W tokens.
constexpr std::uint32_t kMaxEnhanceSide = 32;

// Provenance record written by every subcommand.
class Manifest {
 public:
  explicit Manifest(std::string command) { doc_["command"] = std::move(command); }

  void arg(const std::string& key, json value) { doc_["args"][key] = std::move(value); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void config_hash(std::string_view text) { doc_["config_hash"] = io::hex64(io::fnv1a(text)); }
  void input(const fs::path& p) { doc_["inputs"].push_back(entry(p)); }
  void output(const fs::path& p) { doc_["outputs"].push_back(entry(p)); }
  void result(const std::string& key, json value) { doc_["result"][key] = std::move(value); }

  void write(const fs::path& path) {
    if (!doc_.contains("inputs")) doc_["inputs"] = json::array();
    if (!doc_.contains("outputs")) doc_["outputs"] = json::array();
    if (!doc_.contains("config_hash")) config_hash(doc_["args"].dump());
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    doc_["timestamp"] = buf;
    io::write_file(path, doc_.dump(2) + "\n");
  }

 private:
  static json entry(const fs::path& p) {
    return {{"path", p.string()}, {"fnv1a", io::hex64(io::fnv1a(io::read_file(p)))}};
  }
  json doc_;
};

fs::path manifest_path(const std::string& override_path, const fs::path& fallback) {
  return override_path.empty() ? fallback : fs::path(override_path);
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  for (auto part : io::detail::split(text, ',')) {
    double v = 0.0;
    if (!io::detail::parse_number(part, v)) throw DomainError("bad exposure scale list: " + text);
    out.push_back(v);
  }
  return out;
}

// "a:b:step" inclusive of b up to rounding.
std::vector<double> parse_sweep(const std::string& text) {
  const auto parts = io::detail::split(text, ':');
  double a = 0, b = 0, step = 0;
  if (parts.size() != 3 || !io::detail::parse_number(parts[0], a) || !io::detail::parse_number(parts[1], b) ||
      !io::detail::parse_number(parts[2], step))
    throw DomainError("prompt sweep must look like a:b:step, got " + text);
  if (!(step > 0.0) || b < a) throw DomainError("prompt sweep needs step > 0 and a <= b");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(std::round((a + static_cast<double>(i) * step) * 1e9) / 1e9);
  return out;
}

see::SeeNetConfig load_config(const std::string& path) {
  see::SeeNetConfig cfg;
  if (!path.empty()) {
    try {
      cfg = see::config_from_text(io::read_file(path));
    } catch (const DomainError& e) {
      throw DomainError(path + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// ---- sweep grid -----------------------------------------------------------

// 3x5 glyphs for digits and '.', one row per string, '#' = ink.
const std::array<std::array<const char*, 5>, 11> kGlyphs = {{
    {"###", "#.#", "#.#", "#.#", "###"}, {".#.", "##.", ".#.", ".#.", "###"}, {"###", "..#", "###", "#..", "###"},
    {"###", "..#", "###", "..#", "###"}, {"#.#", "#.#", "###", "..#", "..#"}, {"###", "#..", "###", "..#", "###"},
    {"###", "#..", "###", "#.#", "###"}, {"###", "..#", "..#", "..#", "..#"}, {"###", "#.#", "###", "#.#", "###"},
    {"###", "#.#", "###", "..#", "###"}, {"...", "...", "...", "...", ".#."},
}};

void draw_label(RgbImage& img, std::uint32_t x0, std::uint32_t y0, std::uint32_t max_w, const std::string& text,
                std::uint32_t scale) {
  std::uint32_t x = x0;
  for (char ch : text) {
    const std::size_t g = ch == '.' ? 10 : static_cast<std::size_t>(ch - '0');
    if (g > 10) continue;
    for (std::uint32_t r = 0; r < 5 * scale; ++r)
      for (std::uint32_t c = 0; c < 3 * scale; ++c)
        if (kGlyphs[g][r / scale][c / scale] == '#' && x + c < x0 + max_w && x + c < img.width)
          for (int k = 0; k < 3; ++k) img.at(y0 + r, x + c, k) = 1.0;
    x += 4 * scale;
  }
}

std::string prompt_label(double b) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", b);
  return buf;
}

// Single row of tiles with the prompt value printed beneath each.
RgbImage sweep_grid(const std::vector<RgbImage>& tiles, const std::vector<double>& prompts) {
  const std::uint32_t w = tiles.front().width, h = tiles.front().height, gap = 2;
  const std::uint32_t scale = std::max<std::uint32_t>(1, w / 20);
  const std::uint32_t label_h = 5 * scale + 4;
  RgbImage grid(static_cast<std::uint32_t>(tiles.size()) * (w + gap) - gap, h + label_h, 0.0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto x0 = static_cast<std::uint32_t>(i) * (w + gap);
    for (std::uint32_t y = 0; y < h; ++y)
      for (std::uint32_t x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) grid.at(y, x0 + x, c) = tiles[i].at(y, x, c);
    draw_label(grid, x0 + 1, h + 2, w, prompt_label(prompts[i]), scale);
  }
  return grid;
}

// ---- subcommands ----------------------------------------------------------

struct SimulateArgs {
  std::uint64_t seed = 0;
  std::uint32_t width = 16, height = 16;
  std::size_t frames = 4, substeps = 4;
  std::int64_t interval_us = 40000;
  double threshold = 0.2, noise_sigma = 0.01, shot_scale = 0.0;
  int bit_depth = 8;
  std::string bayer = "RGGB", scales = "0.15,1,1.2,2.2", out, manifest;
};

int run_simulate(const SimulateArgs& a) {
  data::SynthOptions opt;
  opt.width = a.width;
  opt.height = a.height;
  opt.frames = a.frames;
  opt.substeps = a.substeps;
  opt.frame_interval_us = a.interval_us;
  opt.events.threshold = a.threshold;
  opt.noise.gaussian_sigma = a.noise_sigma;
  opt.noise.shot_scale = a.shot_scale;
  opt.bit_depth = a.bit_depth;
  opt.bayer = parse_bayer_order(a.bayer);
  if (!(a.threshold > 0.0)) throw DomainError("contrast threshold must be > 0");
  const auto scales = parse_scales(a.scales);
  const auto recs = data::synth_scene(a.seed, scales, opt);

  Manifest m("simulate");
  m.seed(a.seed);
  m.arg("width", a.width);
  m.arg("height", a.height);
  m.arg("frames", a.frames);
  m.arg("substeps", a.substeps);
  m.arg("interval_us", a.interval_us);
  m.arg("threshold", a.threshold);
  m.arg("noise_sigma", a.noise_sigma);
  m.arg("shot_scale", a.shot_scale);
  m.arg("bit_depth", a.bit_depth);
  m.arg("bayer", a.bayer);
  m.arg("scales", scales);

  const fs::path out(a.out);
  std::vector<io::ManifestEntry> entries;
  for (std::size_t k = 0; k < recs.size(); ++k) {
    const auto& r = recs[k];
    const std::string name = "rec" + std::to_string(k);
    for (std::size_t f = 0; f < r.frames.size(); ++f) {
      const fs::path p = out / name / ("frame_" + std::to_string(f) + ".ppm");
      io::write_ppm(p, r.frames[f]);
      m.output(p);
    }
    const fs::path ev = out / name / "events.evt";
    io::write_events(ev, r.events);
    m.output(ev);
    entries.push_back({r.scene_id, r.lighting, name + "/frame_%d.ppm", name + "/events.evt", r.exposure_scale});
    std::cout << name << "," << data::to_string(r.lighting) << "," << io::format_double(data::mean_brightness(r.frames))
              << "," << r.events.events.size() << "\n";
  }
  io::write_file(out / "scenes.csv", io::encode_scene_manifest(entries));
  m.output(out / "scenes.csv");
  m.write(manifest_path(a.manifest, out / "manifest.json"));
  return kOk;
}

struct VoxelizeArgs {
  std::string events, out, manifest;
  std::uint32_t bins = 16, width = 0, height = 0;
  std::optional<std::int64_t> t0, t1;
};

int run_voxelize(const VoxelizeArgs& a) {
  const auto stream = io::read_events(a.events, a.width, a.height);
  if (stream.events.empty() && (!a.t0 || !a.t1)) throw DomainError("empty stream needs explicit --t0 and --t1");
  const std::int64_t t0 = a.t0.value_or(stream.events.empty() ? 0 : stream.events.front().t_us);
  const std::int64_t t1 = a.t1.value_or(stream.events.empty() ? 0 : stream.events.back().t_us);
  const auto grid = voxelize(slice_events(stream, t0, t1), a.bins, t0, t1);
  io::write_evsf(a.out, io::voxel_tensor(grid));
  std::cout << "bins=" << grid.bins << " total=" << io::format_double(grid.total()) << "\n";

  Manifest m("voxelize");
  m.arg("bins", a.bins);
  m.arg("t0", t0);
  m.arg("t1", t1);
  m.input(a.events);
  m.output(a.out);
  m.write(manifest_path(a.manifest, a.out + ".manifest.json"));
  return kOk;
}

struct RegisterArgs {
  std::string source, target, manifest;
  std::size_t pool = 32, radius = 2;
  double l_min = 0.5;
  bool oracle = false, denoise = false;
};

int run_register(const RegisterArgs& a) {
  auto src = io::read_imu_csv(a.source);
  auto tgt = io::read_imu_csv(a.target);
  if (a.denoise) {
    src = imu::kalman_denoise(src);
    tgt = imu::kalman_denoise(tgt);
  }
  imu::RegisterOptions opt{a.pool, a.radius, a.l_min};
  imu::RegisterStats stats;
  const auto reg = imu::register_sequences(src, tgt, opt, &stats);
  std::cout << io::registration_line(reg) << "\n";

  Manifest m("register-imu");
  m.arg("pool", a.pool);
  m.arg("radius", a.radius);
  m.arg("l_min_fraction", a.l_min);
  m.arg("denoise", a.denoise);
  m.arg("oracle", a.oracle);
  m.input(a.source);
  m.input(a.target);
  m.result("registration", io::registration_line(reg));
  m.result("evaluations", stats.evaluations);
  int code = kOk;
  if (a.oracle) {
    std::size_t evals = 0;
    const auto ex = imu::register_exhaustive(src, tgt, a.l_min, &evals);
    const bool agree = ex.bias_samples == reg.bias_samples && ex.length == reg.length && ex.score == reg.score;
    std::cout << "oracle," << io::registration_line(ex) << "," << (agree ? "agree" : "disagree") << "\n";
    std::cout << "evaluations," << stats.evaluations << "," << evals << "\n";
    m.result("oracle", io::registration_line(ex));
    m.result("agree", agree);
    if (!agree) code = kNumeric;
  }
  m.write(manifest_path(a.manifest, "evsee-register-imu.manifest.json"));
  return code;
}

struct AlignArgs {
  std::string a, b, transform_out, manifest;
  double ratio = 0.8, inlier_px = 2.0;
  std::size_t iterations = 1000, max_keypoints = 500;
  std::uint64_t seed = 0;
};

int run_eval_align(const AlignArgs& a) {
  const auto ia = io::read_ppm(a.a);
  const auto ib = io::read_ppm(a.b);
  align::AlignOptions opt;
  opt.ratio = a.ratio;
  opt.max_keypoints = a.max_keypoints;
  opt.ransac = {a.iterations, a.inlier_px, a.seed};
  const auto res = align::evaluate_alignment(ia, ib, opt);
  std::cout << io::alignment_line(res.report) << "\n";

  Manifest m("eval-align");
  m.seed(a.seed);
  m.arg("ratio", a.ratio);
  m.arg("inlier_px", a.inlier_px);
  m.arg("iterations", a.iterations);
  m.arg("max_keypoints", a.max_keypoints);
  m.input(a.a);
  m.input(a.b);
  m.result("report", io::alignment_line(res.report));
  m.result("transform", io::transform_line(res.transform));
  if (!a.transform_out.empty()) {
    io::write_file(a.transform_out, io::transform_line(res.transform) + "\n");
    m.output(a.transform_out);
  }
  m.write(manifest_path(a.manifest, "evsee-eval-align.manifest.json"));
  return kOk;
}

struct PairArgs {
  std::string scenes, out, manifest;
};

int run_pair(const PairArgs& a) {
  const auto entries = io::decode_scene_manifest(io::read_file(a.scenes), a.scenes);
  // group rows by scene, keeping first-appearance order
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!rows.contains(entries[i].scene_id)) order.push_back(entries[i].scene_id);
    rows[entries[i].scene_id].push_back(i);
  }
  std::string text = "scene_id,input_row,target_row,input_class,target_class\n";
  std::size_t total = 0;
  for (const auto& id : order) {
    std::vector<data::LightingClass> classes;
    for (auto i : rows[id]) classes.push_back(entries[i].lighting);
    for (const auto& p : data::enumerate_pairs(classes).pairs) {
      const auto& in = entries[rows[id][p.input]];
      const auto& tg = entries[rows[id][p.target]];
      text += id + "," + std::to_string(rows[id][p.input]) + "," + std::to_string(rows[id][p.target]) + "," +
              std::string(data::to_string(in.lighting)) + "," + std::string(data::to_string(tg.lighting)) + "\n";
      ++total;
    }
  }
  Manifest m("pair");
  m.input(a.scenes);
  m.result("pairs", total);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::write_file(a.out, text);
    m.output(a.out);
  }
  std::cerr << "pairs=" << total << "\n";
  m.write(manifest_path(a.manifest, a.out.empty() ? fs::path("evsee-pair.manifest.json") : fs::path(a.out + ".manifest.json")));
  return kOk;
}

struct TrainArgs {
  std::string config, out, manifest, scales = "0.15,0.8,1,1.25,2";
  std::uint64_t seed = 0;
  std::size_t steps = 500;
  double lr = 0.5;
  std::uint32_t width = 16, height = 16;
};

int run_train(const TrainArgs& a) {
  const auto cfg = load_config(a.config);
  data::SynthOptions so;
  so.width = a.width;
  so.height = a.height;
  if (a.width > kMaxEnhanceSide || a.height > kMaxEnhanceSide)
    throw DomainError("toy training is limited to " + std::to_string(kMaxEnhanceSide) + "x" +
                      std::to_string(kMaxEnhanceSide) + " images");
  const auto ds = data::make_dataset(data::synth_scene(a.seed, parse_scales(a.scales), so),
                                     static_cast<std::uint32_t>(cfg.voxel_bins));
  const auto res = see::train_toy(ds.size(), ds.source(), cfg, {a.steps, a.lr, a.seed});
  const fs::path out(a.out);
  io::save_checkpoint(out, cfg, res.params);
  std::string curve = "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) curve += std::to_string(i) + "," + io::format_double(res.losses[i]) + "\n";
  io::write_file(out / "losses.csv", curve);
  const double final_loss = see::dataset_loss(ds.size(), ds.source(), cfg, res.params);
  std::cout << "examples=" << ds.size() << "\n";
  std::cout << "final_loss=" << io::format_double(final_loss) << "\n";

  Manifest m("train-toy");
  m.seed(a.seed);
  m.config_hash(see::config_to_text(cfg));
  m.arg("steps", a.steps);
  m.arg("lr", a.lr);
  m.arg("width", a.width);
  m.arg("height", a.height);
  m.arg("scales", parse_scales(a.scales));
  if (!a.config.empty()) m.input(a.config);
  for (auto name : {"config.txt", "params.index", "params.bin", "losses.csv"}) m.output(out / name);
  m.result("final_loss", final_loss);
  m.write(manifest_path(a.manifest, out / "manifest.json"));
  return kOk;
}

struct EnhanceArgs {
  std::string input, events, checkpoint, out, manifest, sweep;
  std::optional<double> prompt;
  std::optional<std::int64_t> t0, t1;
};

int run_enhance(const EnhanceArgs& a) {
  if (a.prompt && !a.sweep.empty()) throw DomainError("use either --prompt or --prompt-sweep, not both");
  const std::vector<double> prompts = a.sweep.empty() ? std::vector<double>{a.prompt.value_or(0.5)} : parse_sweep(a.sweep);
  for (double b : prompts) see::check_prompt(b);

  const auto img = io::read_ppm(a.input);
  const auto ck = io::load_checkpoint(a.checkpoint);
  const auto stream = io::read_events(a.events, img.width, img.height);
  if (img.width > kMaxEnhanceSide || img.height > kMaxEnhanceSide)
    throw DomainError("input is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      "; enhancement supports at most " + std::to_string(kMaxEnhanceSide) + "x" +
                      std::to_string(kMaxEnhanceSide));
  if (stream.width != img.width || stream.height != img.height)
    throw DomainError("events are " + std::to_string(stream.width) + "x" + std::to_string(stream.height) +
                      " but the image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
  const std::int64_t t0 = a.t0.value_or(stream.events.empty() ? 0 : stream.events.front().t_us);
  const std::int64_t t1 = a.t1.value_or(stream.events.empty() ? 1 : std::max(stream.events.back().t_us, t0 + 1));
  const auto voxels = voxelize(slice_events(stream, t0, t1), static_cast<std::uint32_t>(ck.config.voxel_bins), t0, t1);

  Manifest m("enhance");
  m.config_hash(see::config_to_text(ck.config));
  m.arg("prompts", prompts);
  m.arg("t0", t0);
  m.arg("t1", t1);
  m.input(a.input);
  m.input(a.events);
  for (auto name : {"config.txt", "params.index", "params.bin"}) m.input(fs::path(a.checkpoint) / name);

  const fs::path out(a.out);
  std::vector<RgbImage> tiles;
  for (double b : prompts) {
    tiles.push_back(see::forward(img, voxels, b, ck.config, ck.params));
    const fs::path p = out / ("enhanced_B" + prompt_label(b) + ".ppm");
    io::write_ppm(p, tiles.back());
    m.output(p);
    std::cout << prompt_label(b) << "," << io::format_double(brightness(tiles.back())) << "\n";
  }
  if (!a.sweep.empty()) {
    io::write_ppm(out / "sweep_grid.ppm", sweep_grid(tiles, prompts));
    m.output(out / "sweep_grid.ppm");
  }
  m.write(manifest_path(a.manifest, out / "manifest.json"));
  return kOk;
}

struct GradCheckArgs {
  std::string config, manifest;
  std::uint64_t seed = 0;
  std::uint32_t size = 6;
  double tol = 1e-3;
};

int run_grad_check(const GradCheckArgs& a) {
  see::SeeNetConfig cfg;
  cfg.channels = 8;
  cfg.loop_count = 2;
  cfg.seed = a.seed;
  if (!a.config.empty()) cfg = load_config(a.config);
  cfg.validate();
  if (a.size < 2 || a.size % 2 != 0) throw DomainError("--size must be an even number >= 2");

  // small noisy example drawn from the synthetic scene generator
  data::SynthOptions so;
  so.width = so.height = a.size;
  const double scales[] = {0.3, 1.0};
  const auto recs = data::synth_scene(a.seed, scales, so);
  const see::TrainingExample ex{recs[0].frames[1], data::frame_voxels(recs[0], 1, static_cast<std::uint32_t>(cfg.voxel_bins)),
                                recs[1].frames[1]};
  auto params = see::init_params(cfg);
  std::map<std::string, std::vector<double>> grads;
  see::example_loss(ex, cfg, params, &grads);

  double worst = 0.0;
  std::size_t checked = 0;
  const double h = 1e-6;
  for (auto& [name, t] : params.tensors) {
    const std::size_t stride = std::max<std::size_t>(1, t.size() / 8);
    for (std::size_t i = 0; i < t.size(); i += stride) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double up = see::example_loss(ex, cfg, params, nullptr);
      t.data[i] = keep - h;
      const double down = see::example_loss(ex, cfg, params, nullptr);
      t.data[i] = keep;
      worst = std::max(worst, nn::grad_error(grads.at(name)[i], (up - down) / (2 * h)));
      ++checked;
    }
  }
  const bool pass = worst < a.tol;
  std::cout << (pass ? "PASS" : "FAIL") << " max_rel_err=" << io::format_double(worst) << "\n";

  Manifest m("grad-check");
  m.seed(a.seed);
  m.config_hash(see::config_to_text(cfg));
  m.arg("size", a.size);
  m.arg("tol", a.tol);
  if (!a.config.empty()) m.input(a.config);
  m.result("max_rel_err", worst);
  m.result("checked", checked);
  m.result("pass", pass);
  m.write(manifest_path(a.manifest, "evsee-grad-check.manifest.json"));
  return pass ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evsee: event-guided exposure pipeline tools"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Render a synthetic multi-exposure scene (frames + events)");
  c_sim->add_option("--seed", sim.seed);
  c_sim->add_option("--width", sim.width);
  c_sim->add_option("--height", sim.height);
  c_sim->add_option("--frames", sim.frames);
  c_sim->add_option("--substeps", sim.substeps, "Radiance samples per frame interval");
  c_sim->add_option("--interval-us", sim.interval_us);
  c_sim->add_option("--threshold", sim.threshold, "Event contrast threshold C");
  c_sim->add_option("--noise-sigma", sim.noise_sigma);
  c_sim->add_option("--shot-scale", sim.shot_scale);
  c_sim->add_option("--bit-depth", sim.bit_depth);
  c_sim->add_option("--bayer", sim.bayer);
  c_sim->add_option("--scales", sim.scales, "Comma-separated exposure scales");
  c_sim->add_option("--out", sim.out)->required();
  c_sim->add_option("--manifest", sim.manifest);

  VoxelizeArgs vox;
  auto* c_vox = app.add_subcommand("voxelize", "Bin an event stream into a voxel grid (EVSF)");
  c_vox->add_option("--events", vox.events)->required();
  c_vox->add_option("--bins", vox.bins);
  c_vox->add_option("--width", vox.width, "Sensor width for CSV input");
  c_vox->add_option("--height", vox.height, "Sensor height for CSV input");
  c_vox->add_option("--t0", vox.t0);
  c_vox->add_option("--t1", vox.t1);
  c_vox->add_option("--out", vox.out)->required();
  c_vox->add_option("--manifest", vox.manifest);

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register-imu", "Estimate the time bias between two IMU recordings");
  c_reg->add_option("--source", reg.source)->required();
  c_reg->add_option("--target", reg.target)->required();
  c_reg->add_option("--pool", reg.pool);
  c_reg->add_option("--radius", reg.radius);
  c_reg->add_option("--l-min", reg.l_min, "Minimum overlap as a fraction of the shorter sequence");
  c_reg->add_flag("--denoise", reg.denoise, "Kalman-smooth both sequences first");
  c_reg->add_flag("--oracle", reg.oracle, "Also run exhaustive search and report agreement");
  c_reg->add_option("--manifest", reg.manifest);

  AlignArgs al;
  auto* c_al = app.add_subcommand("eval-align", "Fit an affine between two images and report displacement");
  c_al->add_option("--a", al.a)->required();
  c_al->add_option("--b", al.b)->required();
  c_al->add_option("--ratio", al.ratio);
  c_al->add_option("--inlier-px", al.inlier_px);
  c_al->add_option("--iterations", al.iterations);
  c_al->add_option("--max-keypoints", al.max_keypoints);
  c_al->add_option("--seed", al.seed);
  c_al->add_option("--transform-out", al.transform_out);
  c_al->add_option("--manifest", al.manifest);

  PairArgs pr;
  auto* c_pr = app.add_subcommand("pair", "Enumerate training pairs from a scene manifest");
  c_pr->add_option("--scenes", pr.scenes)->required();
  c_pr->add_option("--out", pr.out);
  c_pr->add_option("--manifest", pr.manifest);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-toy", "Train the toy model on a synthetic scene");
  c_tr->add_option("--config", tr.config, "key=value model config");
  c_tr->add_option("--seed", tr.seed);
  c_tr->add_option("--steps", tr.steps);
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--width", tr.width);
  c_tr->add_option("--height", tr.height);
  c_tr->add_option("--scales", tr.scales);
  c_tr->add_option("--out", tr.out)->required();
  c_tr->add_option("--manifest", tr.manifest);

  EnhanceArgs en;
  auto* c_en = app.add_subcommand("enhance", "Run a checkpoint on an image + events");
  c_en->add_option("--input", en.input)->required();
  c_en->add_option("--events", en.events)->required();
  c_en->add_option("--checkpoint", en.checkpoint)->required();
  c_en->add_option("--prompt", en.prompt, "Brightness prompt in (0, 1); default 0.5");
  c_en->add_option("--prompt-sweep", en.sweep, "a:b:step");
  c_en->add_option("--t0", en.t0);
  c_en->add_option("--t1", en.t1);
  c_en->add_option("--out", en.out)->required();
  c_en->add_option("--manifest", en.manifest);

  GradCheckArgs gc;
  auto* c_gc = app.add_subcommand("grad-check", "Finite-difference check of the end-to-end loss gradient");
  c_gc->add_option("--config", gc.config);
  c_gc->add_option("--seed", gc.seed);
  c_gc->add_option("--size", gc.size);
  c_gc->add_option("--tol", gc.tol);
  c_gc->add_option("--manifest", gc.manifest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr)
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    else
      std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_vox) return run_voxelize(vox);
    if (*c_reg) return run_register(reg);
    if (*c_al) return run_eval_align(al);
    if (*c_pr) return run_pair(pr);
    if (*c_tr) return run_train(tr);
    if (*c_en) return run_enhance(en);
    if (*c_gc) return run_grad_check(gc);
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDomain;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
