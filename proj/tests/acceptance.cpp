// Acceptance suite: one PASS/FAIL line per criterion.
// usage: acceptance <path to ganglionet CLI> <scratch dir> [criterion numbers...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "ganglionet/pipeline.hpp"
#include "image_oracles.hpp"
#include "oracles.hpp"

using namespace ganglionet;
using namespace ganglionet::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_cli, g_work;

int run_cli(const fs::path& dir, const std::string& args, const std::string& log, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + g_cli.string() + "' " + args + " >> '" +
                          log + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// 1 ------------------------------------------------------------------------

/// Max relative error over every entry of `param`, skipping stencils that straddle a ReLU
/// kink or a pooling tie. Counts checked entries.
struct GradStats {
  double max_err = 0.0;
  std::size_t checked = 0, total = 0;
  void add(double analytic, std::optional<double> numeric) {
    ++total;
    if (!numeric) return;
    ++checked;
    max_err = std::max(max_err, relative_error(analytic, *numeric));
  }
};

Signature unit_sig(const UnitCache<double>& c) {
  Signature s;
  append_sign_pattern(s, c.stem_out);
  for (const auto& r : c.rcls)
    for (const auto& z : r.states) append_sign_pattern(s, z);
  return s;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, GradStats> stats;
  auto plain = [](BasicTensor<double>& x, std::size_t i, const std::function<double()>& loss) {
    return std::optional<double>(central_difference(x, i, loss));
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto algo : {ops::ConvAlgo::Gemm, ops::ConvAlgo::Direct}) {
      auto in = random_tensor<double>(Shape{2, 5, 4, 3}, seed);
      auto k = random_tensor<double>(Shape{3, 3, 3, 2}, seed + 10);
      auto b = random_tensor<double>(Shape{2}, seed + 20);
      auto w = random_tensor<double>(Shape{2, 5, 4, 2}, seed + 30);
      auto loss = [&] { return weighted_sum(ops::conv2d_forward(in, k, b, algo), w); };
      auto g = ops::conv2d_backward(w, in, k, true, algo);
      auto& s = stats[algo == ops::ConvAlgo::Gemm ? "conv(gemm)" : "conv(direct)"];
      for (std::size_t i = 0; i < in.size(); ++i) s.add(g.input[i], plain(in, i, loss));
      for (std::size_t i = 0; i < k.size(); ++i) s.add(g.kernel[i], plain(k, i, loss));
      for (std::size_t i = 0; i < b.size(); ++i) s.add(g.bias[i], plain(b, i, loss));
    }
    {
      auto a = NablaArchitecture::with_base_width(2, 3, 3);
      a.patch_side = 8;
      auto store = build_network<double>(a, seed);
      std::uint64_t n = 0;
      for (auto& e : store.entries()) e.weight = random_tensor<double>(e.weight.shape(), derive_seed(seed, n++), -0.4, 0.4);
      auto x = random_tensor<double>(Shape{1, 4, 4, 3}, seed + 40);
      auto w = random_tensor<double>(Shape{1, 4, 4, 2}, seed + 41);
      auto loss = [&] { return weighted_sum(rcu_forward(store, "enc0", a, x), w); };
      auto sig = [&] {
        UnitCache<double> c;
        rcu_forward(store, "enc0", a, x, &c);
        return unit_sig(c);
      };
      UnitCache<double> cache;
      rcu_forward(store, "enc0", a, x, &cache);
      auto grads = zero_gradients(store);
      auto gx = rcu_backward(store, "enc0", a, w, cache, grads);
      auto& s = stats["rcu"];
      for (std::size_t i = 0; i < x.size(); ++i) s.add(gx[i], smooth_central_difference(x, i, loss, sig));
      for (auto& e : store.entries())
        if (e.name.rfind("enc0.", 0) == 0)
          for (std::size_t i = 0; i < e.weight.size(); ++i)
            s.add(grads.at(e.name)[i], smooth_central_difference(e.weight, i, loss, sig));
    }
    {
      BasicTensor<double> in(Shape{1, 4, 6, 2});
      std::vector<double> v;
      for (std::size_t i = 0; i < in.size(); ++i) v.push_back(0.05 * static_cast<double>(i));
      Rng(seed).shuffle(v);
      std::copy(v.begin(), v.end(), in.data().begin());
      auto w = random_tensor<double>(Shape{1, 2, 3, 2}, seed + 50);
      auto loss = [&] { return weighted_sum(ops::maxpool2_forward(in).output, w); };
      const auto r = ops::maxpool2_forward(in);
      auto g = ops::maxpool2_backward(w, r.argmax, in.shape());
      for (std::size_t i = 0; i < in.size(); ++i) stats["maxpool"].add(g[i], plain(in, i, loss));
    }
    {
      auto in = random_tensor<double>(Shape{1, 3, 3, 2}, seed + 60);
      auto w = random_tensor<double>(Shape{1, 6, 6, 2}, seed + 61);
      auto loss = [&] { return weighted_sum(ops::upsample2_nearest(in), w); };
      auto g = ops::upsample2_backward(w);
      for (std::size_t i = 0; i < in.size(); ++i) stats["upsample"].add(g[i], plain(in, i, loss));
    }
    {
      auto x = random_tensor<double>(Shape{1, 3, 3, 2}, seed + 70, -2.0, 2.0);
      auto w = random_tensor<double>(x.shape(), seed + 71);
      auto relu_loss = [&] { return weighted_sum(ops::relu(x), w); };
      auto sig_loss = [&] { return weighted_sum(ops::sigmoid(x), w); };
      auto relu_sig = [&] {
        Signature s;
        append_sign_pattern(s, x);
        return s;
      };
      auto gr = ops::relu_backward(w, ops::relu(x));
      auto gs = ops::sigmoid_backward(w, ops::sigmoid(x));
      for (std::size_t i = 0; i < x.size(); ++i) {
        stats["relu"].add(gr[i], smooth_central_difference(x, i, relu_loss, relu_sig));
        stats["sigmoid"].add(gs[i], plain(x, i, sig_loss));
      }
    }
    {
      auto p = random_tensor<double>(Shape{1, 3, 3, 1}, seed + 80, 0.05, 0.95);
      auto t = random_tensor<double>(p.shape(), seed + 81, 0.0, 1.0);
      auto loss = [&] { return ops::bce_loss(p, t); };
      auto g = ops::bce_backward(p, t);
      for (std::size_t i = 0; i < p.size(); ++i) stats["bce"].add(g[i], plain(p, i, loss));
      auto z = random_tensor<double>(p.shape(), seed + 82, -3.0, 3.0);
      auto zloss = [&] { return ops::bce_loss(ops::sigmoid(z), t); };
      auto gz = ops::bce_logit_backward(ops::sigmoid(z), t);
      for (std::size_t i = 0; i < z.size(); ++i) stats["bce(logits)"].add(gz[i], plain(z, i, zloss));
    }
  }
  const double secs = seconds_since(t0);
  bool pass = secs < 120.0;
  std::string detail;
  for (const auto& [name, s] : stats) {
    pass = pass && s.max_err <= 1e-3 && s.checked * 10 >= s.total * 8;
    detail += fmt("%s %.1e (%zu/%zu) ", name.c_str(), s.max_err, s.checked, s.total);
  }
  return {pass, detail + fmt("over 10 seeds in %.1f s", secs)};
}

// 2 ------------------------------------------------------------------------

// The float64 instantiation must match to 1e-6 absolute. float32 cannot: its rounding is
// about 1e-7 of the accumulated magnitude, which exceeds 1e-6 once outputs pass ~8. The
// float32 path is held to 1e-6 relative to sum |x*w| + |b| instead.
Outcome conv_oracle() {
  Rng rng(2024);
  double max_float = 0.0, max_float_rel = 0.0, max_double = 0.0;
  auto absolute = [](BasicTensor<double> t) {
    for (auto& v : t.data()) v = std::abs(v);
    return t;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(2), h = 1 + rng.below(8), w = 1 + rng.below(8), ci = 1 + rng.below(4),
                      co = 1 + rng.below(4), k = 1 + 2 * rng.below(3);
    const auto seed = rng.next();
    auto in = random_tensor<double>(Shape{b, h, w, ci}, seed);
    auto ker = random_tensor<double>(Shape{k, k, ci, co}, seed + 1);
    auto bias = random_tensor<double>(Shape{co}, seed + 2);
    // Round the inputs to float so both precisions see identical values.
    Tensor fin(in.shape()), fker(ker.shape()), fbias(bias.shape());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = fin[i] = static_cast<float>(in[i]);
    for (std::size_t i = 0; i < ker.size(); ++i) ker[i] = fker[i] = static_cast<float>(ker[i]);
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = fbias[i] = static_cast<float>(bias[i]);
    const auto ref = naive_conv2d(in, ker, bias);
    const auto mag = naive_conv2d(absolute(in), absolute(ker), absolute(bias));
    for (auto algo : {ops::ConvAlgo::Gemm, ops::ConvAlgo::Direct}) {
      const auto d = ops::conv2d_forward(in, ker, bias, algo);
      const auto f = ops::conv2d_forward(fin, fker, fbias, algo);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const double fe = std::abs(static_cast<double>(f[i]) - ref[i]);
        max_double = std::max(max_double, std::abs(d[i] - ref[i]));
        max_float = std::max(max_float, fe);
        max_float_rel = std::max(max_float_rel, fe / std::max(mag[i], 1e-30));
      }
    }
  }
  return {max_double <= 1e-6 && max_float_rel <= 1e-6,
          fmt("50 shapes up to 8x8x4->4, kernels 1/3/5, gemm and direct: float64 max |err| %.2e; float32 max |err| "
              "%.2e, max |err|/sum|x*w| %.2e",
              max_double, max_float, max_float_rel)};
}

// 3 ------------------------------------------------------------------------

Outcome parameter_count() {
  const NablaArchitecture a;
  const auto n = count_parameters(build_network(a, 0));
  const double rel = (static_cast<double>(n) - 18.98e6) / 18.98e6;
  std::string desc = a.describe();
  for (auto& c : desc)
    if (c == '\n') c = ' ';
  return {std::abs(rel) <= 0.15, fmt("%zu parameters (%+.2f%% vs 18.98M); ", n, 100.0 * rel) + desc};
}

// 4 ------------------------------------------------------------------------

Outcome tiling() {
  const auto plan = plan_tiles(2560, 1920);
  Plane<std::uint8_t> cover(2560, 1920, 0);
  bool disjoint_cover = plan.tiles.size() == 300;
  for (const auto& t : plan.tiles)
    for (std::size_t y = t.y0; y < t.y0 + 128; ++y)
      for (std::size_t x = t.x0; x < t.x0 + 128; ++x) ++cover.at(x, y);
  for (auto c : cover.data) disjoint_cover = disjoint_cover && c == 1;

  bool round_trip = true;
  for (auto [w, h] : std::vector<std::pair<std::size_t, std::size_t>>{{2560, 1920}, {1000, 777}, {129, 5}}) {
    ProbabilityMap m(w, h);
    Rng rng(w + h);
    for (auto& v : m.data) v = static_cast<float>(rng.uniform());
    const auto p = plan_tiles(w, h);
    round_trip = round_trip && merge_tiles(split_tiles(m, p), p) == m;
  }

  auto a = NablaArchitecture::with_base_width(2, 4, 3);
  a.patch_side = 32;
  auto store = build_network(a, 4);
  Rng rng(4);
  for (auto& e : store.entries())
    for (auto& v : e.weight.data()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  RgbImage img(150, 97);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  const auto ref = infer_image(img, store, a, 1);
  double max_diff = 0.0;
  for (std::size_t bs : {2, 5, 64}) {
    const auto p = infer_image(img, store, a, bs);
    for (std::size_t i = 0; i < p.data.size(); ++i)
      max_diff = std::max(max_diff, std::abs(static_cast<double>(p.data[i]) - ref.data[i]));
  }
  return {disjoint_cover && round_trip && max_diff <= 1e-5,
          fmt("%zu tiles, disjoint cover %s, split/merge bit-exact %s, batch-size max diff %.1e", plan.tiles.size(),
              disjoint_cover ? "yes" : "no", round_trip ? "yes" : "no", max_diff)};
}

// 5 ------------------------------------------------------------------------

Outcome mask_construction() {
  // Oracle: a pixel is in the mask iff some pixel within Chebyshev distance k/2 has G > 0.5.
  const int side = 96, k = 13, r = k / 2;
  const double sigma = 6.0;
  const Point c{47, 51};
  std::size_t oracle = 0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      bool hit = false;
      for (int qy = y - r; qy <= y + r && !hit; ++qy)
        for (int qx = x - r; qx <= x + r && !hit; ++qx)
          hit = qx >= 0 && qy >= 0 && qx < side && qy < side &&
                std::exp(-((qx - c.x) * (qx - c.x) + (qy - c.y) * (qy - c.y)) / (2.0 * sigma * sigma)) > 0.5;
      oracle += hit;
    }
  const auto m = make_mask(density_surface({c}, sigma, side, side), MaskSpec{sigma, std::size_t(k), 0.5});
  const auto comps = connected_components(m).components;
  const std::size_t area = comps.size() == 1 ? comps[0].area : 0;

  Rng rng(55);
  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Point> pts;
    const std::size_t n = 1 + rng.below(12);
    for (std::size_t i = 0; i < n; ++i) pts.push_back({static_cast<int>(rng.below(120)), static_cast<int>(rng.below(90))});
    const auto g = density_surface(pts, MaskSpec{}.sigma, 120, 90);
    for (std::size_t kk = 5; kk < 13; kk += 2) {
      const auto small = make_mask(g, {MaskSpec{}.sigma, kk, 0.5}), big = make_mask(g, {MaskSpec{}.sigma, kk + 2, 0.5});
      for (std::size_t i = 0; i < small.data.size(); ++i) violations += small.data[i] && !big.data[i];
    }
  }
  return {comps.size() == 1 && area == oracle && violations == 0,
          fmt("sigma 6 k 13 single point: %zu px vs enumeration %zu px; monotonicity violations over 100 point sets: %zu",
              area, oracle, violations)};
}

// 6 ------------------------------------------------------------------------

Outcome overfit() {
  SynthSpec s;
  s.width = 512;
  s.height = 384;
  s.cell_count_min = s.cell_count_max = 30;
  s.seed = 6;
  const auto hpf = generate_hpf(s, "overfit");
  const auto mask = make_mask(hpf.annotations, s.width, s.height, MaskSpec{});
  std::vector<PatchPair> pairs;
  for (auto& p : extract_training_patches(hpf.image, mask, "overfit", 64, 128))
    if (count_positive(p.mask) > 500 && pairs.size() < 8) pairs.push_back(std::move(p));
  if (pairs.size() < 8) return {false, fmt("only %zu patches with foreground", pairs.size())};

  auto arch = NablaArchitecture::with_base_width(4, 6, 3);
  TrainConfig tc;
  tc.epochs = 2000;  // one step per epoch with 8 patches and batch 8
  tc.batch_size = 8;
  tc.learning_rate = 3e-4;
  tc.seed = 6;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t steps = 0;
  double best = 0.0;
  // Scored on the same patches after each update; the running train dice lags one step behind.
  const auto r = train(build_network(arch), arch, pairs, pairs, tc, [&](const EpochStats& e) {
    steps = e.steps;
    best = std::max(best, *e.val_dice);
    return *e.val_dice < 0.95;
  });
  const double secs = seconds_since(t0);
  const double dice = evaluate_dice(r.best, arch, pairs, 8);
  return {best >= 0.95 && dice >= 0.95 && steps <= 2000 && secs < 1800.0,
          fmt("base width 4, 8 patches, lr 3e-4: dice %.4f after %zu steps (re-evaluated %.4f), %.0f s", best,
              steps, dice, secs)};
}

// 7 ------------------------------------------------------------------------

Outcome counting_rules() {
  auto cal = [](ScanType s, double avg) {
    CountingCalibration c;
    c.scan_type = s;
    c.avg_pixels_per_cell = avg;
    return c;
  };
  const std::size_t a = count_region(350, cal(ScanType::H, 350)), b = count_region(1000, cal(ScanType::H, 350)),
                    c = count_region(1400, cal(ScanType::H, 350)), d = count_region(540, cal(ScanType::N, 270));
  return {a == 1 && b == 1 && c == 2 && d == 2,
          fmt("(H,350,350)->%zu (H,1000,350)->%zu (H,1400,350)->%zu (N,540,270)->%zu", a, b, c, d)};
}

// 8 ------------------------------------------------------------------------

Outcome counting_oracle() {
  Rng rng(88);
  std::size_t exact = 0, area_ok = 0, regions = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto scan = trial % 2 ? ScanType::H : ScanType::N;
    const auto c = default_calibration(scan, 13);
    const double avg = c.avg_pixels_per_cell;
    const std::size_t m = 1 + rng.below(50);
    // Radii chosen so that rasterised areas stay inside [0.75, 1.5] * avg.
    const auto field =
        disjoint_discs(520, 520, m, std::sqrt(0.8 * avg / std::numbers::pi), std::sqrt(1.4 * avg / std::numbers::pi), rng);
    const auto r = count_image(field.mask, c, "disc");
    for (const auto& g : r.regions) {
      ++regions;
      area_ok += g.area >= 0.75 * avg && g.area <= 1.5 * avg;
    }
    exact += r.total_cells == m;
  }
  return {exact == 200 && area_ok == regions,
          fmt("%zu/200 trials exact, %zu/%zu disc areas within [0.75,1.5]*avg", exact, area_ok, regions)};
}

// 9 ------------------------------------------------------------------------

std::optional<nlohmann::json> read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

Outcome end_to_end() {
  const auto dir = g_work / "e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "pipeline.conf",
                    "seed = 1\nscan_type = N\nnet.base_width = 4\npatch.stride = 128\ntrain.epochs = 8\n"
                    "train.batch_size = 8\ntrain.learning_rate = 0.001\nsynth.width = 1280\nsynth.height = 960\n");
  const auto log = (dir / "cli.log").string();
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* stage : {"synth", "make-masks", "extract-patches", "train", "infer", "count", "eval"})
    if (const int rc = run_cli(dir, std::string("--config pipeline.conf ") + stage, log); rc != 0)
      return {false, fmt("stage %s exited with %d (see %s)", stage, rc, log.c_str())};
  const double secs = seconds_since(t0);
  const auto j = read_json(dir / "out" / "evaluation.json");
  if (!j) return {false, "evaluation.json missing or malformed"};
  const double agg = j->at("aggregate_accuracy"), f1 = j->at("f1");
  const auto m = read_json(dir / "out" / "train_metrics.json");
  const double val = m ? m->at("best_score").get<double>() : 0.0;
  return {agg >= 0.95 && f1 >= 0.95,
          fmt("10 train / 2 test N-type 1280x960 HPFs, base width 4: best val dice %.4f, test manual %zu predicted %zu, "
              "aggregate accuracy %.4f, F1 %.4f (tp %zu fp %zu fn %zu), %.0f s",
              val, j->at("manual_total").get<std::size_t>(), j->at("predicted_total").get<std::size_t>(), agg, f1,
              j->at("tp").get<std::size_t>(), j->at("fp").get<std::size_t>(), j->at("fn").get<std::size_t>(), secs)};
}

// 10 -----------------------------------------------------------------------

Outcome calibration() {
  bool pass = true;
  std::string detail;
  for (double radius : {8.0, 10.0, 12.0}) {
    const double truth = static_cast<double>(disc_area(radius));
    std::vector<CalibrationSample> samples;
    std::size_t clusters = 0;
    for (std::uint64_t i = 0; i < 3; ++i) {
      SynthSpec s;
      s.width = 800;
      s.height = 600;
      s.radius_mean = radius;
      s.radius_std = 0.0;
      s.max_eccentricity = 1.0;
      s.cluster_probability = 0.3;
      s.seed = derive_seed(10, i);
      const auto hpf = generate_hpf(s);
      BinaryMask m(s.width, s.height);
      for (const auto& c : hpf.cells) {
        paint_disc(m, c.centre.x, c.centre.y, radius);
        clusters += c.cluster >= 0;
      }
      // Unannotated debris regions must not influence the estimate.
      paint_disc(m, 5 + 30 * static_cast<int>(i), 5, 4.0);
      samples.push_back({m, hpf.annotations.points});
    }
    const auto c = calibrate_cell_area(samples, ScanType::N, 13);
    const double rel = (c.avg_pixels_per_cell - truth) / truth;
    pass = pass && std::abs(rel) <= 0.05;
    detail += fmt("r=%.0f A=%.0f est %.1f (%+.2f%%, %zu clustered cells); ", radius, truth, c.avg_pixels_per_cell,
                  100.0 * rel, clusters);
  }
  return {pass, detail};
}

// 11 -----------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "cli.log")
      files[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
  return files;
}

Outcome determinism() {
  const auto dir = g_work / "determinism";
  const std::string conf =
      "seed = 1\nscan_type = N\nnet.base_width = 4\npatch.stride = 128\ntrain.epochs = 4\ntrain.batch_size = 8\n"
      "train.learning_rate = 0.001\nsynth.width = 640\nsynth.height = 480\nsynth.cell_count_min = 20\n"
      "synth.cell_count_max = 35\n";
  const std::vector<std::string> stages = {"synth", "make-masks", "extract-patches", "train",
                                           "infer --split all", "calibrate", "count", "eval"};
  std::map<std::string, std::string> first;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file_atomic(dir / "pipeline.conf", conf);
    const auto log = (dir / "cli.log").string();
    for (const auto& stage : stages)
      if (const int rc = run_cli(dir, "--config pipeline.conf " + stage, log, "GANGLIONET_THREADS=1"); rc != 0)
        return {false, fmt("run %d stage %s exited with %d", run + 1, stage.c_str(), rc)};
    if (run == 0) {
      first = snapshot(dir);
      continue;
    }
    const auto second = snapshot(dir);
    std::size_t differing = 0;
    std::string which;
    for (const auto& [name, bytes] : first) {
      const auto it = second.find(name);
      if (it == second.end() || it->second != bytes) {
        ++differing;
        which += " " + name;
      }
    }
    differing += second.size() > first.size() ? second.size() - first.size() : 0;
    const bool ckpt = first.contains("out/model.ckpt") && second.contains("out/model.ckpt") &&
                      first.at("out/model.ckpt") == second.at("out/model.ckpt");
    return {differing == 0 && ckpt,
            fmt("two single-threaded runs of all 8 stages: %zu files compared, %zu differ%s; checkpoint identical: %s",
                first.size(), differing, which.c_str(), ckpt ? "yes" : "no")};
  }
  return {false, "unreachable"};
}

// 12 -----------------------------------------------------------------------

Outcome runtime() {
  const auto dir = g_work / "runtime";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SynthSpec s;  // 2560x1920
  s.seed = 12;
  const auto hpf = generate_hpf(s, "hpf");
  write_rgb_png(dir / "hpf.png", hpf.image);
  const NablaArchitecture arch;
  save_checkpoint(build_network(arch, 0), arch, dir / "full.ckpt", false);
  const auto log = (dir / "cli.log").string();
  const auto t0 = std::chrono::steady_clock::now();
  int rc = run_cli(dir, "--checkpoint full.ckpt --out out infer --image hpf.png", log);
  const double infer_s = seconds_since(t0);
  if (rc == 0) rc = run_cli(dir, "--checkpoint full.ckpt --out out count --mask out/pred/hpf.png --image hpf.png", log);
  const double total = seconds_since(t0);
  const bool report = fs::exists(dir / "out" / "count" / "hpf.json") && fs::exists(dir / "out" / "count" / "hpf_overlay.png");
  return {rc == 0 && report && total < 600.0,
          fmt("full network (%zu params) on 2560x1920 via the CLI: infer %.1f s, infer+count %.1f s, %zu worker(s)",
              count_parameters(build_network(arch, 0)), infer_s, total, worker_count())};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: %s <ganglionet cli> <scratch dir> [criteria...]\n", argv[0]);
    return 2;
  }
  g_cli = fs::absolute(argv[1]);
  g_work = fs::absolute(argv[2]);
  fs::create_directories(g_work);
  std::set<int> only;
  for (int i = 3; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"gradient suite", gradient_suite},   {"convolution oracle", conv_oracle},
      {"parameter count", parameter_count}, {"tiling", tiling},
      {"mask construction", mask_construction}, {"overfit", overfit},
      {"counting rules", counting_rules},   {"counting oracle", counting_oracle},
      {"end-to-end synthetic", end_to_end}, {"calibration", calibration},
      {"determinism", determinism},         {"runtime", runtime}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(static_cast<int>(i + 1))) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
