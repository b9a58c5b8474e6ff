#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "ganglionet/pipeline.hpp"

using namespace ganglionet;

namespace {

// Exit codes: 0 ok, 1 unexpected failure, 2 usage, 10 + ErrorCode for library errors.
int exit_code(ErrorCode c) { return 10 + static_cast<int>(c); }

void print_error(std::string_view code, const std::string& message) {
  std::string m = message;
  for (auto& ch : m)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error: code=" << code << " message=" << m << '\n';
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scan_type;
  std::optional<std::size_t> kernel;
  std::optional<std::string> checkpoint, out, data, calibration;
  std::optional<std::string> split;
  std::optional<std::string> image, mask;
};

PipelineConfig resolve_config(const Options& o) {
  KeyValues kv;
  std::string origin = "<defaults>";
  if (!o.config.empty()) {
    require(std::filesystem::exists(o.config), ErrorCode::MissingInput, "config '" + o.config + "' does not exist");
    kv = KeyValues::load(o.config);
    origin = o.config;
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::Config, "--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.scan_type) kv.set("scan_type", *o.scan_type);
  if (o.kernel) kv.set("mask.dilation_k", std::to_string(*o.kernel));
  if (o.checkpoint) kv.set("checkpoint", *o.checkpoint);
  if (o.out) kv.set("output_dir", *o.out);
  if (o.data) kv.set("data_dir", *o.data);
  if (o.calibration) {
    require(std::filesystem::exists(*o.calibration), ErrorCode::MissingInput,
            "calibration '" + *o.calibration + "' does not exist");
    const auto cal = KeyValues::load(*o.calibration);
    kv.set("count.avg_pixels_per_cell", cal.get("count.avg_pixels_per_cell"));
  }
  return PipelineConfig::from_values(kv, origin);
}

std::string stem(const std::string& p) { return std::filesystem::path(p).stem().string(); }

void print_epoch(const EpochStats& s) {
  std::printf("epoch %zu  steps %zu  loss %.5f  train_dice %.4f", s.epoch, s.steps, s.loss, s.train_dice);
  if (s.val_dice) std::printf("  val_dice %.4f", *s.val_dice);
  std::printf("\n");
  std::fflush(stdout);
}

int run(const std::string& cmd, const Options& o) {
  const auto cfg = resolve_config(o);
  const std::string split = o.split.value_or(cmd == "calibrate" ? "train" : "test");
  if (cmd == "synth") {
    const auto e = run_synth(cfg);
    std::printf("wrote %zu images to %s\n", e.size(), cfg.data_dir.c_str());
  } else if (cmd == "make-masks") {
    std::printf("wrote %zu masks\n", run_make_masks(cfg));
  } else if (cmd == "extract-patches") {
    std::printf("indexed %zu patches in %s\n", run_extract_patches(cfg), patches_csv_path(cfg).c_str());
  } else if (cmd == "train") {
    const auto r = run_train(cfg, [](const EpochStats& s) {
      print_epoch(s);
      return true;
    });
    std::printf("best epoch %zu  dice %.4f  -> %s\n", r.best_epoch, r.best_score, cfg.checkpoint.c_str());
  } else if (cmd == "infer") {
    auto images = o.image ? std::vector<std::pair<std::string, std::filesystem::path>>{{stem(*o.image), *o.image}}
                          : split_images(cfg, split);
    const auto workers = worker_count();
    double total = 0.0;
    for (const auto& t : run_infer(cfg, images, workers)) {
      std::printf("infer %s  %zux%zu  %.2f s\n", t.image_id.c_str(), t.width, t.height, t.seconds);
      total += t.seconds;
    }
    std::printf("infer total %.2f s on %zu worker(s)\n", total, workers);
  } else if (cmd == "count") {
    std::vector<CountJob> jobs;
    if (o.mask) {
      std::optional<std::filesystem::path> img;
      if (o.image) img = *o.image;
      jobs.push_back({stem(*o.mask), *o.mask, img});
    } else {
      jobs = split_count_jobs(cfg, split);
    }
    for (const auto& r : run_count(cfg, jobs))
      std::printf("count %s  cells %zu  regions %zu  ganglia %zu\n", r.image_id.c_str(), r.total_cells,
                  r.total_regions, r.total_ganglia);
  } else if (cmd == "eval") {
    const auto j = run_eval(cfg, split);
    std::printf("aggregate accuracy %.4f  mean accuracy %.4f  f1 %.4f  (manual %zu, predicted %zu)\n",
                j.at("aggregate_accuracy").get<double>(), j.at("mean_accuracy").get<double>(),
                j.at("f1").get<double>(), j.at("manual_total").get<std::size_t>(),
                j.at("predicted_total").get<std::size_t>());
  } else if (cmd == "calibrate") {
    const auto c = run_calibrate(cfg, split);
    std::printf("avg_pixels_per_cell %.2f -> %s\n", c.avg_pixels_per_cell,
                (out_dir(cfg) / "calibration.conf").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ganglionet: ganglion cell segmentation and counting pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Pipeline configuration file");
  app.add_option("--set", o.sets, "Override one config key (key=value); repeatable");
  app.add_option("--seed", o.seed, "Seed (overrides the config)");
  app.add_option("--scan-type", o.scan_type, "Scan type")->check(CLI::IsMember({"H", "N"}));
  app.add_option("--kernel", o.kernel, "Dilation kernel size")->check(CLI::IsMember({5, 7, 9, 11, 13}));
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--data", o.data, "Synthetic suite directory");

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"synth", "Generate the synthetic HPF suite"},
      {"make-masks", "Build training masks from point annotations"},
      {"extract-patches", "Index training patches and their folds"},
      {"train", "Train the segmentation network"},
      {"infer", "Predict probability maps and masks"},
      {"count", "Count cells in predicted masks"},
      {"eval", "Score counts against annotations"},
      {"calibrate", "Measure the single-cell area on predicted masks"}};
  std::string chosen;
  for (const auto& [name, help] : subs) {
    auto* s = app.add_subcommand(name, help);
    s->callback([&chosen, n = name] { chosen = n; });
    if (name == "infer" || name == "count" || name == "eval" || name == "calibrate") {
      s->add_option("--split", o.split, "Suite split: train, test or all (calibrate defaults to train, others to test)")
          ->check(CLI::IsMember({"train", "test", "all"}));
    }
    if (name == "infer" || name == "count") s->add_option("--image", o.image, "Single image instead of a split");
    if (name == "count") {
      s->add_option("--mask", o.mask, "Single predicted mask instead of a split");
      s->add_option("--calibration", o.calibration, "Calibration file written by calibrate");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    return run(chosen, o);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
