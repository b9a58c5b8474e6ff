#pragma once

#include <charconv>
#include <optional>
#include <string>

#include "ganglionet/annotation.hpp"
#include "ganglionet/counting.hpp"
#include "ganglionet/eval.hpp"
#include "ganglionet/key_value.hpp"
#include "ganglionet/nabla_net.hpp"
#include "ganglionet/synth.hpp"

namespace ganglionet {

/// Everything a pipeline run needs, stored as a flat key=value file. Keys absent from the
/// file keep their defaults; unknown keys are rejected so typos do not pass silently.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string output_dir = "out";
  std::string checkpoint = "out/model.ckpt";
  ScanType scan_type = ScanType::H;

  MaskSpec mask;
  std::size_t patch_stride = 64;
  bool patch_augment = true;

  std::size_t net_base_width = 16;
  std::size_t net_levels = 6;
  std::size_t net_decode_levels = 3;
  std::size_t net_patch_side = 128;
  std::size_t net_t_steps = 2;
  std::size_t net_rcl_per_unit = 2;

  std::size_t train_epochs = 500;
  std::size_t train_batch_size = 32;
  double train_learning_rate = 3e-4;
  std::size_t train_val_fold = 0;  // which of the five image-level folds is held out

  std::size_t infer_batch_size = 8;
  double infer_threshold = 0.5;

  std::optional<double> count_avg_pixels_per_cell;  // unset: published default for (scan type, kernel)
  double count_t1 = 900.0;
  double count_t2 = 1250.0;
  std::size_t count_min_area = 60;

  double eval_match_radius = kDefaultMatchRadius;

  SynthSpec synth;
  std::size_t synth_n_train = 10;
  std::size_t synth_n_test = 2;

  /// Calls f(key, member) for every serialised field, in file order.
  template <typename Self, typename F>
  static void visit(Self& c, F&& f) {
    f("seed", c.seed);
    f("data_dir", c.data_dir);
    f("output_dir", c.output_dir);
    f("checkpoint", c.checkpoint);
    f("scan_type", c.scan_type);
    f("mask.sigma", c.mask.sigma);
    f("mask.dilation_k", c.mask.dilation_k);
    f("mask.threshold", c.mask.threshold);
    f("patch.stride", c.patch_stride);
    f("patch.augment", c.patch_augment);
    f("net.base_width", c.net_base_width);
    f("net.levels", c.net_levels);
    f("net.decode_levels", c.net_decode_levels);
    f("net.patch_side", c.net_patch_side);
    f("net.t_steps", c.net_t_steps);
    f("net.rcl_per_unit", c.net_rcl_per_unit);
    f("train.epochs", c.train_epochs);
    f("train.batch_size", c.train_batch_size);
    f("train.learning_rate", c.train_learning_rate);
    f("train.val_fold", c.train_val_fold);
    f("infer.batch_size", c.infer_batch_size);
    f("infer.threshold", c.infer_threshold);
    f("count.avg_pixels_per_cell", c.count_avg_pixels_per_cell);
    f("count.t1", c.count_t1);
    f("count.t2", c.count_t2);
    f("count.min_area", c.count_min_area);
    f("eval.match_radius", c.eval_match_radius);
    f("synth.width", c.synth.width);
    f("synth.height", c.synth.height);
    f("synth.cell_count_min", c.synth.cell_count_min);
    f("synth.cell_count_max", c.synth.cell_count_max);
    f("synth.radius_mean", c.synth.radius_mean);
    f("synth.radius_std", c.synth.radius_std);
    f("synth.max_eccentricity", c.synth.max_eccentricity);
    f("synth.cluster_probability", c.synth.cluster_probability);
    f("synth.cluster_size_min", c.synth.cluster_size_min);
    f("synth.cluster_size_max", c.synth.cluster_size_max);
    f("synth.separation_gap", c.synth.separation_gap);
    f("synth.max_overlap", c.synth.max_overlap);
    f("synth.stain_jitter", c.synth.stain_jitter);
    f("synth.distractors_per_megapixel", c.synth.distractors_per_megapixel);
    f("synth.max_retries", c.synth.max_retries);
    f("synth.n_train", c.synth_n_train);
    f("synth.n_test", c.synth_n_test);
  }

  NablaArchitecture architecture() const {
    auto a = NablaArchitecture::with_base_width(net_base_width, net_levels, net_decode_levels);
    a.patch_side = net_patch_side;
    a.t_steps = net_t_steps;
    a.rcl_per_unit = net_rcl_per_unit;
    a.seed = seed;
    return a;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = train_epochs;
    t.batch_size = train_batch_size;
    t.learning_rate = train_learning_rate;
    t.seed = seed;
    t.dilation_k = mask.dilation_k;
    return t;
  }

  CountingCalibration calibration() const {
    CountingCalibration c;
    if (count_avg_pixels_per_cell) {
      c.scan_type = scan_type;
      c.dilation_k = mask.dilation_k;
      c.avg_pixels_per_cell = *count_avg_pixels_per_cell;
    } else {
      c = default_calibration(scan_type, mask.dilation_k);
    }
    c.t1 = count_t1;
    c.t2 = count_t2;
    c.validate();
    return c;
  }

  SynthSpec synth_spec() const {
    SynthSpec s = synth;
    s.scan_type = scan_type;
    s.seed = seed;
    return s;
  }

  void validate() const {
    mask.validate();
    architecture().validate();
    train_config().validate();
    synth_spec().validate();
    require(mask.threshold > 0.0 && mask.threshold < 1.0, ErrorCode::Config, "mask.threshold must be in (0,1)");
    require(patch_stride >= 1, ErrorCode::Config, "patch.stride must be >= 1");
    require(train_val_fold < 5, ErrorCode::Config, "train.val_fold must be in 0..4");
    require(infer_batch_size >= 1, ErrorCode::Config, "infer.batch_size must be >= 1");
    require(infer_threshold > 0.0 && infer_threshold < 1.0, ErrorCode::Config, "infer.threshold must be in (0,1)");
    require(!count_avg_pixels_per_cell || *count_avg_pixels_per_cell > 0.0, ErrorCode::Config,
            "count.avg_pixels_per_cell must be positive");
    require(count_t1 < count_t2, ErrorCode::Config, "count.t1 must be below count.t2");
    require(eval_match_radius > 0.0, ErrorCode::Config, "eval.match_radius must be positive");
    require(synth_n_train >= 5, ErrorCode::Config, "synth.n_train must be >= 5");
  }

  friend bool operator==(const PipelineConfig& a, const PipelineConfig& b) { return a.to_values() == b.to_values(); }

  KeyValues to_values() const {
    KeyValues kv;
    visit(*this, [&](const char* key, const auto& v) { kv.set(key, format_value(v)); });
    return kv;
  }

  std::string serialize() const {
    std::string out = "# ganglionet pipeline configuration\n";
    std::string section;
    const auto values = to_values();
    for (const auto& [k, v] : values.items()) {
      const auto dot = k.find('.');
      const std::string s = dot == std::string::npos ? "" : k.substr(0, dot);
      if (s != section) {
        out += "\n# " + s + "\n";
        section = s;
      }
      out += k + " = " + v + "\n";
    }
    return out;
  }

  static PipelineConfig from_values(const KeyValues& kv, const std::string& origin = "<config>") {
    PipelineConfig c;
    std::size_t used = 0;
    visit(c, [&](const char* key, auto& v) {
      if (auto s = kv.find(key)) {
        parse_value(*s, v, origin + ": " + key);
        ++used;
      }
    });
    if (used != kv.items().size()) {
      const auto known = PipelineConfig{}.to_values();
      for (const auto& [k, v] : kv.items())
        require(known.contains(k), ErrorCode::Config, origin + ": unknown key '" + k + "'");
    }
    c.validate();
    return c;
  }

  static PipelineConfig parse(const std::string& text, const std::string& origin = "<config>") {
    return from_values(KeyValues::parse(text, origin), origin);
  }

  static PipelineConfig load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

 private:
  static std::string format_value(const std::string& v) { return v; }
  static std::string format_value(bool v) { return v ? "true" : "false"; }
  static std::string format_value(ScanType v) { return to_string(v); }
  static std::string format_value(std::size_t v) { return std::to_string(v); }
  static std::string format_value(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    return std::string(buf, r.ptr);
  }
  static std::string format_value(const std::optional<double>& v) { return v ? format_value(*v) : ""; }

  static void parse_value(const std::string& s, std::string& v, const std::string&) { v = s; }
  static void parse_value(const std::string& s, ScanType& v, const std::string&) { v = parse_scan_type(s); }
  static void parse_value(const std::string& s, bool& v, const std::string& what) {
    require(s == "true" || s == "false", ErrorCode::Config, what + ": expected true or false, got '" + s + "'");
    v = s == "true";
  }
  static void parse_value(const std::string& s, std::size_t& v, const std::string& what) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc{} && r.ptr == s.data() + s.size(), ErrorCode::Config,
            what + ": expected a non-negative integer, got '" + s + "'");
  }
  static void parse_value(const std::string& s, double& v, const std::string& what) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    require(r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(v), ErrorCode::Config,
            what + ": expected a number, got '" + s + "'");
  }
  static void parse_value(const std::string& s, std::optional<double>& v, const std::string& what) {
    if (s.empty()) {
      v.reset();
      return;
    }
    double d = 0.0;
    parse_value(s, d, what);
    v = d;
  }
};

}  // namespace ganglionet
