#pragma once

#include <Eigen/Core>
#include <chrono>
#include <filesystem>
#include <map>
#include <png.h>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ganglionet/checkpoint.hpp"
#include "ganglionet/config.hpp"
#include "ganglionet/counting.hpp"
#include "ganglionet/eval.hpp"
#include "ganglionet/synth.hpp"
#include "ganglionet/tiling.hpp"

// Pipeline stages on a directory layout. Every stage reads its inputs from the data
// directory or the output directory, writes its artifacts under the output directory and
// finishes with `run_<stage>.manifest` describing what it consumed and produced.
//
//   <out>/masks/<id>.png          make-masks
//   <out>/patches.csv             extract-patches
//   <checkpoint>, <out>/train_*   train
//   <out>/prob/<id>.png           infer (probability map)
//   <out>/pred/<id>.png           infer (thresholded mask)
//   <out>/count/<id>.json|_overlay.png   count
//   <out>/evaluation.json         eval
//   <out>/calibration.conf        calibrate

namespace ganglionet {

inline constexpr const char* kVersion = "0.1.0";

/// Key=value record of one stage run: config snapshot, versions, input and output hashes.
/// Holds no timestamps so identical runs produce identical manifests.
class RunManifest {
 public:
  RunManifest(const std::string& stage, const PipelineConfig& cfg) {
    kv_.set("stage", stage);
    kv_.set("ganglionet", kVersion);
    kv_.set("eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION));
    kv_.set("libpng", PNG_LIBPNG_VER_STRING);
    kv_.set("nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                 std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                 std::to_string(NLOHMANN_JSON_VERSION_PATCH));
    kv_.set("seed", std::to_string(cfg.seed));
    const auto values = cfg.to_values();
    for (const auto& [k, v] : values.items()) kv_.set("config." + k, v);
  }

  void input(const std::filesystem::path& p) { kv_.set("input." + p.generic_string(), hash(p)); }
  void output(const std::filesystem::path& p) { kv_.set("output." + p.generic_string(), hash(p)); }
  void note(const std::string& key, const std::string& value) { kv_.set(key, value); }

  std::filesystem::path save(const std::filesystem::path& dir) const {
    const auto path = dir / ("run_" + kv_.get("stage") + ".manifest");
    kv_.save(path);
    return path;
  }

  const KeyValues& values() const { return kv_; }

 private:
  static std::string hash(const std::filesystem::path& p) { return hex64(fnv1a64(read_file(p))); }
  KeyValues kv_;
};

namespace detail {

inline void require_exists(const std::filesystem::path& p, const std::string& what) {
  require(std::filesystem::exists(p), ErrorCode::MissingInput, what + " '" + p.string() + "' does not exist");
}

inline void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::Io, "cannot create '" + dir.string() + "': " + ec.message());
}

}  // namespace detail

inline std::filesystem::path out_dir(const PipelineConfig& cfg) { return cfg.output_dir; }
inline std::filesystem::path mask_path(const PipelineConfig& c, const std::string& id) {
  return out_dir(c) / "masks" / (id + ".png");
}
inline std::filesystem::path prob_path(const PipelineConfig& c, const std::string& id) {
  return out_dir(c) / "prob" / (id + ".png");
}
inline std::filesystem::path pred_path(const PipelineConfig& c, const std::string& id) {
  return out_dir(c) / "pred" / (id + ".png");
}
inline std::filesystem::path count_json_path(const PipelineConfig& c, const std::string& id) {
  return out_dir(c) / "count" / (id + ".json");
}
inline std::filesystem::path overlay_path(const PipelineConfig& c, const std::string& id) {
  return out_dir(c) / "count" / (id + "_overlay.png");
}
inline std::filesystem::path patches_csv_path(const PipelineConfig& c) { return out_dir(c) / "patches.csv"; }

/// Suite entries of one split: "train", "test" or "all".
inline std::vector<SuiteEntry> suite_split(const PipelineConfig& cfg, const std::string& split) {
  require(split == "train" || split == "test" || split == "all", ErrorCode::InvalidArgument,
          "split must be train, test or all, got '" + split + "'");
  detail::require_exists(std::filesystem::path(cfg.data_dir) / kSuiteManifest, "suite manifest");
  std::vector<SuiteEntry> out;
  for (auto& e : load_suite(cfg.data_dir))
    if (split == "all" || e.split == split) out.push_back(std::move(e));
  return out;
}

// synth -------------------------------------------------------------------

inline std::vector<SuiteEntry> run_synth(const PipelineConfig& cfg) {
  auto entries = generate_suite(cfg.data_dir, cfg.synth_n_train, cfg.synth_n_test, cfg.synth_spec(), cfg.seed);
  detail::make_dirs(out_dir(cfg));
  RunManifest m("synth", cfg);
  m.output(std::filesystem::path(cfg.data_dir) / kSuiteManifest);
  for (const auto& e : entries) {
    m.output(e.image);
    m.output(e.points);
    m.output(e.manifest);
  }
  m.save(out_dir(cfg));
  return entries;
}

// make-masks --------------------------------------------------------------

inline std::size_t run_make_masks(const PipelineConfig& cfg) {
  const auto entries = suite_split(cfg, "all");
  detail::make_dirs(out_dir(cfg) / "masks");
  RunManifest m("make-masks", cfg);
  for (const auto& e : entries) {
    const auto ann = load_annotations(e.points, e.manifest);
    const auto img = read_rgb_png(e.image);
    write_mask_png(mask_path(cfg, e.image_id), make_mask(ann, img.width, img.height, cfg.mask));
    m.input(e.image);
    m.input(e.points);
    m.input(e.manifest);
    m.output(mask_path(cfg, e.image_id));
  }
  m.save(out_dir(cfg));
  return entries.size();
}

// extract-patches ---------------------------------------------------------

/// One row of patches.csv: window origin, flip code (bit 0 horizontal, bit 1 vertical) and
/// the validation fold of the source image.
struct PatchRecord {
  std::string image_id;
  int x0 = 0, y0 = 0, flip = 0;
  std::size_t fold = 0;
};

inline std::string format_patch_csv(const std::vector<PatchRecord>& rows) {
  std::string out = "image_id,x0,y0,flip,fold\n";
  for (const auto& r : rows)
    out += r.image_id + "," + std::to_string(r.x0) + "," + std::to_string(r.y0) + "," + std::to_string(r.flip) + "," +
           std::to_string(r.fold) + "\n";
  return out;
}

inline std::vector<PatchRecord> parse_patch_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  require(line == "image_id,x0,y0,flip,fold", ErrorCode::Config, origin + ": unexpected header '" + line + "'");
  std::vector<PatchRecord> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    PatchRecord r;
    std::string f[5];
    for (auto& s : f) std::getline(ls, s, ',');
    try {
      r.image_id = f[0];
      r.x0 = std::stoi(f[1]);
      r.y0 = std::stoi(f[2]);
      r.flip = std::stoi(f[3]);
      r.fold = std::stoul(f[4]);
    } catch (const std::exception&) {
      fail(ErrorCode::Config, origin + ":" + std::to_string(n) + ": malformed row '" + line + "'");
    }
    require(!r.image_id.empty() && r.x0 >= 0 && r.y0 >= 0 && r.flip >= 0 && r.flip < 4 && r.fold < 5,
            ErrorCode::Config, origin + ":" + std::to_string(n) + ": field out of range in '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

inline std::size_t run_extract_patches(const PipelineConfig& cfg) {
  const auto entries = suite_split(cfg, "train");
  RunManifest m("extract-patches", cfg);
  std::vector<PatchPair> pairs;
  for (const auto& e : entries) {
    detail::require_exists(mask_path(cfg, e.image_id), "mask (run make-masks first)");
    auto p = extract_training_patches(read_rgb_png(e.image), read_mask_png(mask_path(cfg, e.image_id)), e.image_id,
                                      cfg.patch_stride, cfg.net_patch_side);
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    m.input(e.image);
    m.input(mask_path(cfg, e.image_id));
  }
  if (cfg.patch_augment) pairs = augment_flips(pairs);
  const auto folds = fivefold_split(pairs, cfg.seed);
  std::vector<PatchRecord> rows(pairs.size());
  for (std::size_t f = 0; f < folds.size(); ++f)
    for (auto i : folds[f].val) rows[i] = {pairs[i].image_id, pairs[i].x0, pairs[i].y0, pairs[i].flip, f};
  write_file_atomic(patches_csv_path(cfg), format_patch_csv(rows));
  m.output(patches_csv_path(cfg));
  m.save(out_dir(cfg));
  return rows.size();
}

// train -------------------------------------------------------------------

struct TrainingSet {
  std::vector<PatchPair> train, val;
};

/// Rebuilds the pairs listed in patches.csv. The held-out fold validates on unflipped windows.
inline TrainingSet load_training_set(const PipelineConfig& cfg, RunManifest* m = nullptr) {
  detail::require_exists(patches_csv_path(cfg), "patch index (run extract-patches first)");
  const auto rows = parse_patch_csv(read_file(patches_csv_path(cfg)), patches_csv_path(cfg).string());
  require(!rows.empty(), ErrorCode::MissingInput, "patch index '" + patches_csv_path(cfg).string() + "' is empty");
  std::map<std::string, SuiteEntry> by_id;
  for (auto& e : suite_split(cfg, "train")) by_id.emplace(e.image_id, e);

  std::map<std::string, std::pair<RgbImage, BinaryMask>> cache;
  if (m) m->input(patches_csv_path(cfg));
  TrainingSet set;
  const std::size_t side = cfg.net_patch_side;
  for (const auto& r : rows) {
    auto it = cache.find(r.image_id);
    if (it == cache.end()) {
      const auto e = by_id.find(r.image_id);
      require(e != by_id.end(), ErrorCode::MissingInput,
              "patch index names image '" + r.image_id + "' which is not in the training split");
      detail::require_exists(mask_path(cfg, r.image_id), "mask");
      it = cache.emplace(r.image_id, std::pair{read_rgb_png(e->second.image), read_mask_png(mask_path(cfg, r.image_id))})
               .first;
      if (m) {
        m->input(e->second.image);
        m->input(mask_path(cfg, r.image_id));
      }
    }
    const auto& [img, mask] = it->second;
    require(r.x0 + side <= img.width && r.y0 + side <= img.height, ErrorCode::Config,
            "patch at (" + std::to_string(r.x0) + "," + std::to_string(r.y0) + ") leaves image '" + r.image_id + "'");
    const bool h = r.flip & 1, v = r.flip & 2;
    PatchPair p{flip_image(crop(img, r.x0, r.y0, side, side), h, v), flip_plane(crop(mask, r.x0, r.y0, side, side), h, v),
                r.image_id, r.x0, r.y0, r.flip};
    if (r.fold != cfg.train_val_fold)
      set.train.push_back(std::move(p));
    else if (r.flip == 0)
      set.val.push_back(std::move(p));
  }
  require(!set.train.empty(), ErrorCode::MissingInput, "no training patches outside the validation fold");
  return set;
}

inline TrainResult run_train(const PipelineConfig& cfg, const EpochCallback& on_epoch = {}) {
  RunManifest m("train", cfg);
  const auto set = load_training_set(cfg, &m);
  const auto arch = cfg.architecture();
  auto result = train(build_network(arch), arch, set.train, set.val, cfg.train_config(), on_epoch);

  detail::make_dirs(out_dir(cfg));
  if (const auto parent = std::filesystem::path(cfg.checkpoint).parent_path(); !parent.empty())
    detail::make_dirs(parent);
  save_checkpoint(result.best, arch, cfg.checkpoint);
  write_file_atomic(out_dir(cfg) / "train_history.csv", history_csv(result.history));
  auto j = to_json(result, cfg.train_config());
  j["train_patches"] = set.train.size();
  j["val_patches"] = set.val.size();
  write_file_atomic(out_dir(cfg) / "train_metrics.json", j.dump(2) + "\n");
  m.output(cfg.checkpoint);
  m.output(out_dir(cfg) / "train_history.csv");
  m.output(out_dir(cfg) / "train_metrics.json");
  m.save(out_dir(cfg));
  return result;
}

// infer -------------------------------------------------------------------

struct InferTiming {
  std::string image_id;
  std::size_t width = 0, height = 0;
  double seconds = 0.0;
};

/// Writes the probability map and the thresholded mask for one image.
inline InferTiming infer_to_files(const PipelineConfig& cfg, const Checkpoint& ck, const std::filesystem::path& image,
                                  const std::string& id, std::size_t workers) {
  const auto img = read_rgb_png(image);
  const auto t0 = std::chrono::steady_clock::now();
  const auto prob = infer_image(img, ck.store, ck.arch, cfg.infer_batch_size, workers);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_probability_png(prob_path(cfg, id), prob);
  write_mask_png(pred_path(cfg, id), threshold_map(prob, cfg.infer_threshold));
  return {id, img.width, img.height, s};
}

inline Checkpoint load_config_checkpoint(const PipelineConfig& cfg) {
  detail::require_exists(cfg.checkpoint, "checkpoint");
  return load_checkpoint(cfg.checkpoint, cfg.architecture());
}

/// `images` pairs an image id with its path; ids name the output files.
inline std::vector<InferTiming> run_infer(const PipelineConfig& cfg,
                                          const std::vector<std::pair<std::string, std::filesystem::path>>& images,
                                          std::size_t workers) {
  for (const auto& [id, p] : images) detail::require_exists(p, "image");
  const auto ck = load_config_checkpoint(cfg);
  detail::make_dirs(out_dir(cfg) / "prob");
  detail::make_dirs(out_dir(cfg) / "pred");
  RunManifest m("infer", cfg);
  m.input(cfg.checkpoint);
  std::vector<InferTiming> out;
  for (const auto& [id, p] : images) {
    out.push_back(infer_to_files(cfg, ck, p, id, workers));
    m.input(p);
    m.output(prob_path(cfg, id));
    m.output(pred_path(cfg, id));
  }
  m.save(out_dir(cfg));
  return out;
}

inline std::vector<std::pair<std::string, std::filesystem::path>> split_images(const PipelineConfig& cfg,
                                                                               const std::string& split) {
  std::vector<std::pair<std::string, std::filesystem::path>> out;
  for (const auto& e : suite_split(cfg, split)) out.emplace_back(e.image_id, e.image);
  return out;
}

// count -------------------------------------------------------------------

/// Count job: predicted mask plus the optional image the overlay is drawn on.
struct CountJob {
  std::string image_id;
  std::filesystem::path mask;
  std::optional<std::filesystem::path> image;
};

inline std::vector<CountReport> run_count(const PipelineConfig& cfg, const std::vector<CountJob>& jobs) {
  for (const auto& j : jobs) {
    detail::require_exists(j.mask, "predicted mask (run infer first)");
    if (j.image) detail::require_exists(*j.image, "image");
  }
  const auto calib = cfg.calibration();
  detail::make_dirs(out_dir(cfg) / "count");
  RunManifest m("count", cfg);
  std::vector<CountReport> reports;
  for (const auto& j : jobs) {
    const auto refined = refine_mask(read_mask_png(j.mask), cfg.mask.dilation_k, cfg.count_min_area);
    auto r = count_image(refined, calib, j.image_id);
    write_file_atomic(count_json_path(cfg, j.image_id), to_json(r).dump(2) + "\n");
    m.input(j.mask);
    m.output(count_json_path(cfg, j.image_id));
    if (j.image) {
      const auto img = read_rgb_png(*j.image);
      require_same_extents(refined, img.width, img.height, "mask vs image '" + j.image_id + "'");
      write_rgb_png(overlay_path(cfg, j.image_id), render_overlay(img, r));
      m.input(*j.image);
      m.output(overlay_path(cfg, j.image_id));
    }
    reports.push_back(std::move(r));
  }
  m.save(out_dir(cfg));
  return reports;
}

inline std::vector<CountJob> split_count_jobs(const PipelineConfig& cfg, const std::string& split) {
  std::vector<CountJob> out;
  for (const auto& e : suite_split(cfg, split)) out.push_back({e.image_id, pred_path(cfg, e.image_id), e.image});
  return out;
}

// eval --------------------------------------------------------------------

/// Reads the fields of a CountReport JSON that evaluation needs.
inline std::pair<std::size_t, std::vector<Detection>> read_count_json(const std::filesystem::path& p) {
  try {
    const auto j = nlohmann::json::parse(read_file(p));
    std::vector<Detection> d;
    for (const auto& g : j.at("regions"))
      d.push_back({g.at("centroid").at(0).get<double>(), g.at("centroid").at(1).get<double>(),
                   g.at("cell_count").get<std::size_t>()});
    return {j.at("total_cells").get<std::size_t>(), d};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, "'" + p.string() + "' is not a count report: " + e.what());
  }
}

inline nlohmann::ordered_json run_eval(const PipelineConfig& cfg, const std::string& split) {
  const auto entries = suite_split(cfg, split);
  require(!entries.empty(), ErrorCode::MissingInput, "split '" + split + "' has no images");
  for (const auto& e : entries) detail::require_exists(count_json_path(cfg, e.image_id), "count report (run count first)");
  RunManifest m("eval", cfg);
  std::vector<CountRecord> records;
  std::vector<DetectionCounts> det;
  for (const auto& e : entries) {
    const auto points = load_annotations(e.points, e.manifest).points;
    const auto [total, found] = read_count_json(count_json_path(cfg, e.image_id));
    records.push_back({e.image_id, points.size(), total});
    det.push_back(detection_match(found, points, cfg.eval_match_radius));
    m.input(e.points);
    m.input(count_json_path(cfg, e.image_id));
  }
  auto j = evaluation_json(records, det, cfg.eval_match_radius);
  const auto path = out_dir(cfg) / "evaluation.json";
  write_file_atomic(path, j.dump(2) + "\n");
  m.output(path);
  m.save(out_dir(cfg));
  return j;
}

// calibrate ---------------------------------------------------------------

/// Measures the single-cell area on predicted masks and writes it as a config fragment.
inline CountingCalibration run_calibrate(const PipelineConfig& cfg, const std::string& split) {
  const auto entries = suite_split(cfg, split);
  for (const auto& e : entries) detail::require_exists(pred_path(cfg, e.image_id), "predicted mask (run infer first)");
  RunManifest m("calibrate", cfg);
  std::vector<CalibrationSample> samples;
  for (const auto& e : entries) {
    samples.push_back({refine_mask(read_mask_png(pred_path(cfg, e.image_id)), cfg.mask.dilation_k, cfg.count_min_area),
                       load_annotations(e.points, e.manifest).points});
    m.input(pred_path(cfg, e.image_id));
    m.input(e.points);
  }
  const auto c = calibrate_cell_area(samples, cfg.scan_type, cfg.mask.dilation_k);
  PipelineConfig tmp;
  tmp.count_avg_pixels_per_cell = c.avg_pixels_per_cell;
  const auto path = out_dir(cfg) / "calibration.conf";
  write_file_atomic(path, "# measured on " + std::to_string(entries.size()) + " " + split + " images, scan type " +
                              to_string(cfg.scan_type) + ", kernel " + std::to_string(cfg.mask.dilation_k) +
                              "\ncount.avg_pixels_per_cell = " + tmp.to_values().get("count.avg_pixels_per_cell") +
                              "\n");
  m.output(path);
  m.save(out_dir(cfg));
  return c;
}

}  // namespace ganglionet
