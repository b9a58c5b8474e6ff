#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "ganglionet/ops.hpp"
#include "ganglionet/param_store.hpp"

namespace ganglionet {

/// Topology of a NABLA-N segmentation network.
///
/// The encoder is one recurrent convolutional unit per entry of
/// `encoder_widths`, with 2x max-pooling between levels. Each of the last
/// `n_decode_levels` encoder outputs (the bottleneck first) starts its own
/// decoding stream: a chain of (2x upsample, unit) stages that walks the
/// decoder widths back to full resolution. Stream outputs are summed and a
/// 1x1 convolution plus sigmoid produces the per-pixel probability.
///
/// A unit is a 3x3 forward convolution with ReLU followed by `rcl_per_unit`
/// recurrent convolutional layers, each unrolled for `t_steps` steps.
struct NablaArchitecture {
  std::vector<std::size_t> encoder_widths{16, 32, 64, 128, 256, 512};
  std::vector<std::size_t> decoder_widths{256, 128, 64, 32, 16};
  std::size_t n_decode_levels = 3;
  std::size_t input_channels = 3;
  std::size_t output_channels = 1;
  std::size_t patch_side = 128;
  std::size_t t_steps = 2;
  std::size_t rcl_per_unit = 2;
  std::uint64_t seed = 0;

  std::size_t levels() const { return encoder_widths.size(); }

  /// Same topology with every width divided by `divisor` (minimum 1).
  NablaArchitecture narrowed(std::size_t divisor) const {
    NablaArchitecture a = *this;
    for (auto& w : a.encoder_widths) w = std::max<std::size_t>(1, w / divisor);
    for (auto& w : a.decoder_widths) w = std::max<std::size_t>(1, w / divisor);
    return a;
  }

  /// Doubling encoder widths starting at `base` over `levels` levels, mirrored decoder.
  static NablaArchitecture with_base_width(std::size_t base, std::size_t levels = 6, std::size_t decode_levels = 3) {
    NablaArchitecture a;
    a.encoder_widths.clear();
    a.decoder_widths.clear();
    for (std::size_t i = 0; i < levels; ++i) a.encoder_widths.push_back(base << i);
    for (std::size_t i = levels - 1; i-- > 0;) a.decoder_widths.push_back(base << i);
    a.n_decode_levels = decode_levels;
    return a;
  }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::InvalidArgument, "invalid architecture: " + m); };
    if (encoder_widths.empty()) bad("no encoder levels");
    for (auto w : encoder_widths)
      if (w == 0) bad("zero encoder width");
    if (decoder_widths.size() + 1 != encoder_widths.size()) bad("decoder must have one level fewer than encoder");
    for (std::size_t i = 0; i < decoder_widths.size(); ++i)
      if (decoder_widths[i] != encoder_widths[encoder_widths.size() - 2 - i])
        bad("decoder widths must mirror the encoder widths");
    if (n_decode_levels < 1 || n_decode_levels > levels()) bad("n_decode_levels must be in [1, levels]");
    if (input_channels == 0 || output_channels == 0) bad("channel counts must be positive");
    if (t_steps < 1) bad("t_steps must be >= 1");
    const std::size_t div = std::size_t{1} << (levels() - 1);
    if (patch_side == 0 || patch_side % div != 0)
      bad("patch_side " + std::to_string(patch_side) + " not divisible by " + std::to_string(div));
  }

  /// Encoder level whose output feeds decoding stream `s` (stream 0 starts at the bottleneck).
  std::size_t stream_origin(std::size_t s) const { return levels() - 1 - s; }

  bool same_structure(const NablaArchitecture& o) const {
    return encoder_widths == o.encoder_widths && decoder_widths == o.decoder_widths &&
           n_decode_levels == o.n_decode_levels && input_channels == o.input_channels &&
           output_channels == o.output_channels && patch_side == o.patch_side && t_steps == o.t_steps &&
           rcl_per_unit == o.rcl_per_unit;
  }
  friend bool operator==(const NablaArchitecture&, const NablaArchitecture&) = default;

  std::string describe() const {
    std::ostringstream os;
    auto list = [&](const std::vector<std::size_t>& v) {
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    };
    os << "encoder_widths=";
    list(encoder_widths);
    os << "\ndecoder_widths=";
    list(decoder_widths);
    os << "\nn_decode_levels=" << n_decode_levels << "\ninput_channels=" << input_channels
       << "\noutput_channels=" << output_channels << "\npatch_side=" << patch_side << "\nt_steps=" << t_steps
       << "\nrcl_per_unit=" << rcl_per_unit << "\nseed=" << seed << "\n";
    return os.str();
  }
};

enum class ParamInit { He, Zero };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init;
};

namespace detail {

inline void add_conv_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t k, std::size_t cin,
                           std::size_t cout, ParamInit kernel_init = ParamInit::He) {
  out.push_back({prefix + ".w", Shape{k, k, cin, cout}, kernel_init});
  out.push_back({prefix + ".b", Shape{cout}, ParamInit::Zero});
}

inline void add_unit_specs(std::vector<ParamSpec>& out, const std::string& prefix, const NablaArchitecture& a,
                           std::size_t cin, std::size_t cout) {
  add_conv_specs(out, prefix + ".stem", 3, cin, cout);
  for (std::size_t i = 0; i < a.rcl_per_unit; ++i) {
    add_conv_specs(out, prefix + ".rcl" + std::to_string(i) + ".f", 3, cout, cout);
    add_conv_specs(out, prefix + ".rcl" + std::to_string(i) + ".r", 3, cout, cout, ParamInit::Zero);
  }
}

inline std::string enc_prefix(std::size_t level) { return "enc" + std::to_string(level); }
inline std::string dec_prefix(std::size_t stream, std::size_t level) {
  return "dec" + std::to_string(stream) + ".l" + std::to_string(level);
}

}  // namespace detail

/// Canonical parameter list (names, shapes) in store order.
inline std::vector<ParamSpec> parameter_layout(const NablaArchitecture& a) {
  a.validate();
  std::vector<ParamSpec> out;
  std::size_t cin = a.input_channels;
  for (std::size_t l = 0; l < a.levels(); ++l) {
    detail::add_unit_specs(out, detail::enc_prefix(l), a, cin, a.encoder_widths[l]);
    cin = a.encoder_widths[l];
  }
  for (std::size_t s = 0; s < a.n_decode_levels; ++s) {
    const std::size_t origin = a.stream_origin(s);
    std::size_t c = a.encoder_widths[origin];
    for (std::size_t l = origin; l-- > 0;) {
      detail::add_unit_specs(out, detail::dec_prefix(s, l), a, c, a.encoder_widths[l]);
      c = a.encoder_widths[l];
    }
  }
  detail::add_conv_specs(out, "head", 1, a.encoder_widths[0], a.output_channels, ParamInit::Zero);
  return out;
}

/// Fails with ArchMismatch unless every tensor of the architecture is present, in order, with the right shape.
template <typename T>
void require_store_matches(const BasicParamStore<T>& store, const NablaArchitecture& arch) {
  const auto layout = parameter_layout(arch);
  require(layout.size() == store.size(), ErrorCode::ArchMismatch,
          "parameter store has " + std::to_string(store.size()) + " tensors, architecture expects " +
              std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = store.entries()[i];
    require(e.name == layout[i].name && e.weight.shape() == layout[i].shape, ErrorCode::ArchMismatch,
            "parameter '" + e.name + "' " + shape_string(e.weight.shape()) + " does not match '" + layout[i].name +
                "' " + shape_string(layout[i].shape));
  }
}

/// Stem and feed-forward kernels are He-initialised, each from its own derived
/// seed stream. Recurrent kernels, the 1x1 head and all biases start at zero:
/// every RCL then begins as a plain conv+ReLU and the initial output is 0.5
/// everywhere, which keeps activations bounded through the unnormalised stack.
template <typename T = float>
BasicParamStore<T> build_network(const NablaArchitecture& arch, std::uint64_t seed) {
  BasicParamStore<T> store;
  std::uint64_t stream = 0;
  for (const auto& spec : parameter_layout(arch)) {
    if (spec.init == ParamInit::Zero)
      store.add(spec.name, BasicTensor<T>(spec.shape));
    else
      store.add(spec.name, he_init<T>(spec.shape, derive_seed(seed, stream)));
    ++stream;
  }
  return store;
}

template <typename T = float>
BasicParamStore<T> build_network(const NablaArchitecture& arch) {
  return build_network<T>(arch, arch.seed);
}

// ---------------------------------------------------------------------------
// Recurrent convolutional layer

template <typename T>
struct RclCache {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> states;  // z_0 .. z_t
};

template <typename T>
struct ConvParams {
  const BasicTensor<T>& w;
  const BasicTensor<T>& b;
};

/// z_0 = relu(f(x)); z_k = relu(f(x) + r(z_{k-1})) for k = 1..t_steps. Returns z_t.
template <typename T>
BasicTensor<T> rcl_forward(const BasicTensor<T>& x, ConvParams<T> f, ConvParams<T> r, std::size_t t_steps,
                           RclCache<T>* cache = nullptr) {
  require(t_steps >= 1, ErrorCode::InvalidArgument, "rcl_forward: t_steps must be >= 1");
  require(r.w.dim(2) == r.w.dim(3) && r.w.dim(3) == f.w.dim(3), ErrorCode::ShapeMismatch,
          "rcl_forward: recurrent kernel " + shape_string(r.w.shape()) + " incompatible with forward kernel " +
              shape_string(f.w.shape()));
  const auto fx = ops::conv2d_forward(x, f.w, f.b);
  auto z = ops::relu(fx);
  if (cache) {
    cache->input = x;
    cache->states.clear();
    cache->states.push_back(z);
  }
  for (std::size_t k = 1; k <= t_steps; ++k) {
    auto pre = ops::conv2d_forward(z, r.w, r.b);
    pre += fx;
    z = ops::relu(std::move(pre));
    if (cache) cache->states.push_back(z);
  }
  return z;
}

template <typename T>
struct ConvGradRefs {
  BasicTensor<T>& w;
  BasicTensor<T>& b;
};

/// Accumulates parameter gradients into `gf`/`gr`; returns the input gradient (empty if not needed).
template <typename T>
BasicTensor<T> rcl_backward(const BasicTensor<T>& grad_out, const RclCache<T>& cache, ConvParams<T> f,
                            ConvParams<T> r, ConvGradRefs<T> gf, ConvGradRefs<T> gr, bool need_input = true) {
  const std::size_t t_steps = cache.states.size() - 1;
  BasicTensor<T> grad_z = grad_out;
  BasicTensor<T> grad_fx(grad_out.shape());
  for (std::size_t k = t_steps; k >= 1; --k) {
    auto gpre = ops::relu_backward(std::move(grad_z), cache.states[k]);
    grad_fx += gpre;
    auto cg = ops::conv2d_backward(gpre, cache.states[k - 1], r.w);
    gr.w += cg.kernel;
    gr.b += cg.bias;
    grad_z = std::move(cg.input);
  }
  grad_fx += ops::relu_backward(std::move(grad_z), cache.states[0]);
  auto cf = ops::conv2d_backward(grad_fx, cache.input, f.w, need_input);
  gf.w += cf.kernel;
  gf.b += cf.bias;
  return std::move(cf.input);
}

// ---------------------------------------------------------------------------
// Recurrent convolutional unit: stem conv + relu, then RCLs.

template <typename T>
struct UnitCache {
  BasicTensor<T> input;
  BasicTensor<T> stem_out;
  std::vector<RclCache<T>> rcls;
};

template <typename T>
BasicTensor<T> rcu_forward(const BasicParamStore<T>& store, const std::string& prefix, const NablaArchitecture& arch,
                           const BasicTensor<T>& x, UnitCache<T>* cache = nullptr) {
  require(arch.t_steps >= 1, ErrorCode::InvalidArgument, "rcu_forward: t_steps must be >= 1");
  const auto& sw = store.weight(prefix + ".stem.w");
  require_rank4(x.shape(), "rcu_forward input");
  require(x.channels() == sw.dim(2), ErrorCode::ShapeMismatch,
          "rcu_forward(" + prefix + "): input " + shape_string(x.shape()) + " has " + std::to_string(x.channels()) +
              " channels, unit expects " + std::to_string(sw.dim(2)));
  auto h = ops::relu(ops::conv2d_forward(x, sw, store.weight(prefix + ".stem.b")));
  if (cache) {
    cache->input = x;
    cache->stem_out = h;
    cache->rcls.assign(arch.rcl_per_unit, {});
  }
  for (std::size_t i = 0; i < arch.rcl_per_unit; ++i) {
    const std::string p = prefix + ".rcl" + std::to_string(i);
    h = rcl_forward<T>(h, {store.weight(p + ".f.w"), store.weight(p + ".f.b")},
                       {store.weight(p + ".r.w"), store.weight(p + ".r.b")}, arch.t_steps,
                       cache ? &cache->rcls[i] : nullptr);
  }
  return h;
}

template <typename T>
BasicTensor<T> rcu_backward(const BasicParamStore<T>& store, const std::string& prefix, const NablaArchitecture& arch,
                            const BasicTensor<T>& grad_out, const UnitCache<T>& cache, GradMap<T>& grads,
                            bool need_input = true) {
  BasicTensor<T> g = grad_out;
  for (std::size_t i = arch.rcl_per_unit; i-- > 0;) {
    const std::string p = prefix + ".rcl" + std::to_string(i);
    g = rcl_backward<T>(g, cache.rcls[i], {store.weight(p + ".f.w"), store.weight(p + ".f.b")},
                        {store.weight(p + ".r.w"), store.weight(p + ".r.b")}, {grads[p + ".f.w"], grads[p + ".f.b"]},
                        {grads[p + ".r.w"], grads[p + ".r.b"]});
  }
  g = ops::relu_backward(std::move(g), cache.stem_out);
  auto cg = ops::conv2d_backward(g, cache.input, store.weight(prefix + ".stem.w"), need_input);
  grads[prefix + ".stem.w"] += cg.kernel;
  grads[prefix + ".stem.b"] += cg.bias;
  return std::move(cg.input);
}

// ---------------------------------------------------------------------------
// Whole network

template <typename T>
struct NetworkCache {
  std::vector<UnitCache<T>> encoder;
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // pool feeding level l+1
  std::vector<Shape> pool_input_shape;
  std::vector<std::vector<UnitCache<T>>> streams;  // [stream][stage]
  BasicTensor<T> fused;
  BasicTensor<T> probabilities;
};

template <typename T>
GradMap<T> zero_gradients(const BasicParamStore<T>& store) {
  GradMap<T> g;
  for (const auto& e : store.entries()) g.emplace(e.name, BasicTensor<T>::zeros_like(e.weight));
  return g;
}

inline void check_network_input(const NablaArchitecture& arch, const Shape& s) {
  const Shape expected{0, arch.patch_side, arch.patch_side, arch.input_channels};
  const bool ok = s.size() == 4 && s[1] == expected[1] && s[2] == expected[2] && s[3] == expected[3];
  require(ok, ErrorCode::ShapeMismatch,
          "network input must be [B," + std::to_string(arch.patch_side) + "," + std::to_string(arch.patch_side) + "," +
              std::to_string(arch.input_channels) + "], got " + shape_string(s));
}

/// Forward pass returning pre-sigmoid logits. Fills `cache` when given.
template <typename T>
BasicTensor<T> network_logits(const BasicParamStore<T>& store, const NablaArchitecture& arch,
                              const BasicTensor<T>& batch, NetworkCache<T>* cache = nullptr) {
  check_network_input(arch, batch.shape());
  const std::size_t L = arch.levels();
  if (cache) {
    cache->encoder.assign(L, {});
    cache->pool_argmax.assign(L, {});
    cache->pool_input_shape.assign(L, {});
    cache->streams.assign(arch.n_decode_levels, {});
  }

  // Only the stream origins need to outlive the encoder walk.
  std::vector<BasicTensor<T>> origin_out(L);
  BasicTensor<T> h = batch;
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) {
      auto pooled = ops::maxpool2_forward(h);
      if (cache) {
        cache->pool_argmax[l] = std::move(pooled.argmax);
        cache->pool_input_shape[l] = h.shape();
      }
      h = std::move(pooled.output);
    }
    h = rcu_forward(store, detail::enc_prefix(l), arch, h, cache ? &cache->encoder[l] : nullptr);
    if (l + arch.n_decode_levels >= L) origin_out[l] = h;
  }

  BasicTensor<T> fused;
  for (std::size_t s = 0; s < arch.n_decode_levels; ++s) {
    const std::size_t origin = arch.stream_origin(s);
    BasicTensor<T> d = std::move(origin_out[origin]);
    if (cache) cache->streams[s].assign(origin, {});
    for (std::size_t l = origin; l-- > 0;) {
      d = ops::upsample2_nearest(d);
      d = rcu_forward(store, detail::dec_prefix(s, l), arch, d, cache ? &cache->streams[s][origin - 1 - l] : nullptr);
    }
    if (fused.empty())
      fused = std::move(d);
    else
      fused += d;
  }
  auto logits = ops::conv2d_forward(fused, store.weight("head.w"), store.weight("head.b"));
  if (cache) cache->fused = std::move(fused);
  return logits;
}

/// Per-pixel foreground probabilities, shape [B, side, side, output_channels].
template <typename T>
BasicTensor<T> network_forward(const BasicParamStore<T>& store, const NablaArchitecture& arch,
                               const BasicTensor<T>& batch) {
  return ops::sigmoid(network_logits(store, arch, batch));
}

/// Parameter gradients given d(loss)/d(logits) and the cache of the matching forward pass.
template <typename T>
GradMap<T> network_backward(const BasicParamStore<T>& store, const NablaArchitecture& arch,
                            const NetworkCache<T>& cache, const BasicTensor<T>& grad_logits) {
  GradMap<T> grads = zero_gradients(store);
  const std::size_t L = arch.levels();

  auto head = ops::conv2d_backward(grad_logits, cache.fused, store.weight("head.w"));
  grads["head.w"] += head.kernel;
  grads["head.b"] += head.bias;

  std::vector<BasicTensor<T>> enc_grad(L);
  auto accumulate = [&](std::size_t l, BasicTensor<T>&& g) {
    if (enc_grad[l].empty())
      enc_grad[l] = std::move(g);
    else
      enc_grad[l] += g;
  };

  for (std::size_t s = 0; s < arch.n_decode_levels; ++s) {
    const std::size_t origin = arch.stream_origin(s);
    BasicTensor<T> g = head.input;
    for (std::size_t l = 0; l < origin; ++l) {
      g = rcu_backward(store, detail::dec_prefix(s, l), arch, g, cache.streams[s][origin - 1 - l], grads);
      g = ops::upsample2_backward(g);
    }
    accumulate(origin, std::move(g));
  }

  for (std::size_t l = L; l-- > 0;) {
    if (enc_grad[l].empty()) continue;
    auto g = rcu_backward(store, detail::enc_prefix(l), arch, enc_grad[l], cache.encoder[l], grads, l > 0);
    if (l > 0) accumulate(l - 1, ops::maxpool2_backward(g, cache.pool_argmax[l], cache.pool_input_shape[l]));
  }
  return grads;
}

}  // namespace ganglionet
