#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iterator>
#include <type_traits>
#include <utility>
#include <vector>

#include "ganglionet/tensor.hpp"

namespace ganglionet::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Upper bound on the im2col scratch size (elements) per GEMM call.
inline constexpr std::size_t kMaxColumnElements = std::size_t{1} << 23;

struct ConvGeometry {
  std::size_t batch, height, width, cin, kh, kw, cout;
  std::size_t pad_y() const { return kh / 2; }
  std::size_t pad_x() const { return kw / 2; }
  std::size_t pixels() const { return height * width; }
  std::size_t patch() const { return kh * kw * cin; }
  bool pointwise() const { return kh == 1 && kw == 1; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernel) {
  require_rank4(input.shape(), "conv2d input");
  require(kernel.rank() == 4, ErrorCode::ShapeMismatch,
          "conv2d kernel must be rank 4 (Kh,Kw,Cin,Cout), got " + shape_string(kernel.shape()));
  require(kernel.dim(0) % 2 == 1 && kernel.dim(1) % 2 == 1, ErrorCode::ShapeMismatch,
          "conv2d kernel extents must be odd, got " + shape_string(kernel.shape()));
  require(input.channels() == kernel.dim(2), ErrorCode::ShapeMismatch,
          "conv2d channel mismatch: input " + shape_string(input.shape()) + " vs kernel " +
              shape_string(kernel.shape()));
  return {input.batch(), input.height(), input.width(), input.channels(),
          kernel.dim(0),  kernel.dim(1),  kernel.dim(3)};
}

// Samples per GEMM chunk so that the column buffer stays bounded.
inline std::size_t chunk_samples(const ConvGeometry& g) {
  const std::size_t per = g.pixels() * g.patch();
  return std::max<std::size_t>(1, std::min(g.batch, kMaxColumnElements / std::max<std::size_t>(per, 1)));
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, std::size_t samples, T* cols) {
  const std::size_t py = g.pad_y(), px = g.pad_x();
  const std::size_t row_len = g.patch();
  for (std::size_t b = 0; b < samples; ++b) {
    const T* img = in + b * g.pixels() * g.cin;
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        T* dst = cols + ((b * g.height + y) * g.width + x) * row_len;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(py);
          for (std::size_t kx = 0; kx < g.kw; ++kx, dst += g.cin) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(px);
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(g.height) ||
                sx >= static_cast<std::ptrdiff_t>(g.width)) {
              std::fill(dst, dst + g.cin, T{0});
            } else {
              std::memcpy(dst, img + (static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx)) * g.cin,
                          g.cin * sizeof(T));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, std::size_t samples, T* grad_in) {
  const std::size_t py = g.pad_y(), px = g.pad_x();
  const std::size_t row_len = g.patch();
  for (std::size_t b = 0; b < samples; ++b) {
    T* img = grad_in + b * g.pixels() * g.cin;
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const T* src = cols + ((b * g.height + y) * g.width + x) * row_len;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(py);
          for (std::size_t kx = 0; kx < g.kw; ++kx, src += g.cin) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - static_cast<std::ptrdiff_t>(px);
            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(g.height) ||
                sx >= static_cast<std::ptrdiff_t>(g.width))
              continue;
            T* dst = img + (static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx)) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
};

enum class ConvAlgo { Auto, Gemm, Direct };

namespace detail {

// Channel counts with a compile-time specialised direct kernel. For these the GEMM operands
// are too skinny for Eigen's packing to pay off.
inline constexpr std::size_t kDirectChannels[] = {1, 2, 3, 4, 8, 16};
inline constexpr std::size_t kDirectMaxChannelProduct = 256;

inline bool direct_channels(std::size_t c) {
  return std::find(std::begin(kDirectChannels), std::end(kDirectChannels), c) != std::end(kDirectChannels);
}

inline ConvAlgo pick_algo(const ConvGeometry& g, ConvAlgo requested) {
  if (requested != ConvAlgo::Auto) return requested;
  const bool direct = !g.pointwise() && direct_channels(g.cin) && direct_channels(g.cout) &&
                      g.cin * g.cout <= kDirectMaxChannelProduct;
  return direct ? ConvAlgo::Direct : ConvAlgo::Gemm;
}

// Calls f(std::integral_constant<std::size_t, c>) for a channel count in kDirectChannels.
template <typename F>
void with_channels(std::size_t c, F&& f) {
  switch (c) {
    case 1: return f(std::integral_constant<std::size_t, 1>{});
    case 2: return f(std::integral_constant<std::size_t, 2>{});
    case 3: return f(std::integral_constant<std::size_t, 3>{});
    case 4: return f(std::integral_constant<std::size_t, 4>{});
    case 8: return f(std::integral_constant<std::size_t, 8>{});
    case 16: return f(std::integral_constant<std::size_t, 16>{});
  }
  fail(ErrorCode::InvalidArgument, "no direct convolution kernel for " + std::to_string(c) + " channels");
}

// Valid x range [lo, hi) for a horizontal tap offset dx.
inline std::pair<std::size_t, std::size_t> tap_span(std::size_t width, std::ptrdiff_t dx) {
  const auto w = static_cast<std::ptrdiff_t>(width);
  return {static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx)),
          static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(w - dx, 0, w))};
}

// out[p] = bias + sum over taps of in[p + tap] * w[tap]; w laid out (kh, kw, CI, CO).
template <typename T, std::size_t CI, std::size_t CO>
void direct_conv(const T* __restrict in, const T* __restrict w, const T* bias, const ConvGeometry& g,
                 T* __restrict out) {
  using Vec = Eigen::Matrix<T, CO, 1>;
  using Weights = Eigen::Matrix<T, CO, CI>;
  const std::size_t W = g.width;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* img = in + b * g.pixels() * CI;
    T* o = out + b * g.pixels() * CO;
    for (std::size_t p = 0; p < g.pixels(); ++p)
      for (std::size_t co = 0; co < CO; ++co) o[p * CO + co] = bias ? bias[co] : T{0};
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad_x());
        const auto [x0, x1] = tap_span(W, dx);
        // Column ci of the (CO x CI) matrix holds w[tap][ci][:], so out += wt * in.
        const Weights wt = Eigen::Map<const Weights>(w + (ky * g.kw + kx) * CI * CO);
        for (std::size_t y = 0; y < g.height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(g.pad_y());
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const T* row = img + static_cast<std::size_t>(sy) * W * CI;
          T* orow = o + y * W * CO;
          for (std::size_t x = x0; x < x1; ++x) {
            const T* ip = row + (x + dx) * CI;
            Vec acc = Eigen::Map<Vec>(orow + x * CO);
            for (std::size_t ci = 0; ci < CI; ++ci) acc += wt.col(ci) * ip[ci];
            Eigen::Map<Vec>(orow + x * CO) = acc;
          }
        }
      }
  }
}

// gw[tap][ci][co] += sum_p in[p + tap][ci] * go[p][co]
template <typename T, std::size_t CI, std::size_t CO>
void direct_kernel_grad(const T* __restrict in, const T* __restrict go, const ConvGeometry& g, T* __restrict gw) {
  using Acc = Eigen::Matrix<T, CO, CI>;
  const std::size_t W = g.width;
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad_x());
      const auto [x0, x1] = tap_span(W, dx);
      Acc acc = Acc::Zero();
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* img = in + b * g.pixels() * CI;
        const T* gb = go + b * g.pixels() * CO;
        for (std::size_t y = 0; y < g.height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(g.pad_y());
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const T* row = img + static_cast<std::size_t>(sy) * W * CI;
          const T* grow = gb + y * W * CO;
          for (std::size_t x = x0; x < x1; ++x)
            acc.noalias() += Eigen::Map<const Eigen::Matrix<T, CO, 1>>(grow + x * CO) *
                             Eigen::Map<const Eigen::Matrix<T, 1, CI>>(row + (x + dx) * CI);
        }
      }
      Eigen::Map<Acc>(gw + (ky * g.kw + kx) * CI * CO) += acc;
    }
}

// Kernel of the adjoint convolution: spatially flipped with input and output channels swapped.
template <typename T>
std::vector<T> adjoint_kernel(const BasicTensor<T>& kernel, const ConvGeometry& g) {
  std::vector<T> k(kernel.size());
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx)
      for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t co = 0; co < g.cout; ++co)
          k[(((g.kh - 1 - ky) * g.kw + (g.kw - 1 - kx)) * g.cout + co) * g.cin + ci] =
              kernel[((ky * g.kw + kx) * g.cin + ci) * g.cout + co];
  return k;
}

template <typename T>
void conv_forward_gemm(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                       const ConvGeometry& g, BasicTensor<T>& out) {
  Eigen::Map<const RowMat<T>> weights(kernel.raw(), g.patch(), g.cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias_row(bias.raw(), g.cout);
  const std::size_t chunk = chunk_samples(g);
  std::vector<T> cols;
  for (std::size_t b0 = 0; b0 < g.batch; b0 += chunk) {
    const std::size_t n = std::min(chunk, g.batch - b0);
    const std::size_t rows = n * g.pixels();
    const T* in = input.raw() + b0 * g.pixels() * g.cin;
    const T* lhs = in;
    if (!g.pointwise()) {
      cols.resize(rows * g.patch());
      im2col(in, g, n, cols.data());
      lhs = cols.data();
    }
    Eigen::Map<const RowMat<T>> a(lhs, rows, g.patch());
    Eigen::Map<RowMat<T>> o(out.raw() + b0 * g.pixels() * g.cout, rows, g.cout);
    o.noalias() = a * weights;
    o.rowwise() += bias_row;
  }
}

template <typename T>
void conv_forward_direct(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                         const ConvGeometry& g, BasicTensor<T>& out) {
  with_channels(g.cin, [&](auto ci) {
    with_channels(g.cout, [&](auto co) {
      direct_conv<T, decltype(ci)::value, decltype(co)::value>(input.raw(), kernel.raw(), bias.raw(), g, out.raw());
    });
  });
}

template <typename T>
void conv_backward_gemm(const BasicTensor<T>& grad_out, const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                        const ConvGeometry& g, ConvGrads<T>& grads, bool need_input) {
  Eigen::Map<const RowMat<T>> weights(kernel.raw(), g.patch(), g.cout);
  Eigen::Map<RowMat<T>> grad_w(grads.kernel.raw(), g.patch(), g.cout);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> grad_b(grads.bias.raw(), g.cout);
  const std::size_t chunk = chunk_samples(g);
  std::vector<T> cols;
  std::vector<T> grad_cols;
  for (std::size_t b0 = 0; b0 < g.batch; b0 += chunk) {
    const std::size_t n = std::min(chunk, g.batch - b0);
    const std::size_t rows = n * g.pixels();
    const T* in = input.raw() + b0 * g.pixels() * g.cin;
    const T* lhs = in;
    if (!g.pointwise()) {
      cols.resize(rows * g.patch());
      im2col(in, g, n, cols.data());
      lhs = cols.data();
    }
    Eigen::Map<const RowMat<T>> a(lhs, rows, g.patch());
    Eigen::Map<const RowMat<T>> go(grad_out.raw() + b0 * g.pixels() * g.cout, rows, g.cout);
    grad_w.noalias() += a.transpose() * go;
    grad_b += go.colwise().sum();
    if (!need_input) continue;
    T* gin = grads.input.raw() + b0 * g.pixels() * g.cin;
    if (g.pointwise()) {
      Eigen::Map<RowMat<T>> gi(gin, rows, g.cin);
      gi.noalias() = go * weights.transpose();
    } else {
      grad_cols.resize(rows * g.patch());
      Eigen::Map<RowMat<T>> gc(grad_cols.data(), rows, g.patch());
      gc.noalias() = go * weights.transpose();
      col2im_add(grad_cols.data(), g, n, gin);
    }
  }
}

template <typename T>
void conv_backward_direct(const BasicTensor<T>& grad_out, const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                          const ConvGeometry& g, ConvGrads<T>& grads, bool need_input) {
  for (std::size_t p = 0; p < g.batch * g.pixels(); ++p)
    for (std::size_t co = 0; co < g.cout; ++co) grads.bias[co] += grad_out[p * g.cout + co];
  with_channels(g.cin, [&](auto ci) {
    with_channels(g.cout, [&](auto co) {
      direct_kernel_grad<T, decltype(ci)::value, decltype(co)::value>(input.raw(), grad_out.raw(), g,
                                                                      grads.kernel.raw());
    });
  });
  if (!need_input) return;
  const auto adj = adjoint_kernel(kernel, g);
  // The adjoint maps cout channels back to cin, so the template arguments swap.
  with_channels(g.cout, [&](auto co) {
    with_channels(g.cin, [&](auto ci) {
      direct_conv<T, decltype(co)::value, decltype(ci)::value>(grad_out.raw(), adj.data(), static_cast<const T*>(nullptr),
                                                               g, grads.input.raw());
    });
  });
}

}  // namespace detail

/// Stride-1 convolution with zero "same" padding. Output spatial extents equal the input's.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                              ConvAlgo algo = ConvAlgo::Auto) {
  const auto g = detail::conv_geometry(input, kernel);
  require(bias.size() == g.cout, ErrorCode::ShapeMismatch,
          "conv2d bias " + shape_string(bias.shape()) + " does not match kernel " + shape_string(kernel.shape()));
  BasicTensor<T> out(Shape{g.batch, g.height, g.width, g.cout});
  if (detail::pick_algo(g, algo) == ConvAlgo::Direct)
    detail::conv_forward_direct(input, kernel, bias, g, out);
  else
    detail::conv_forward_gemm(input, kernel, bias, g, out);
  return out;
}

/// Adjoint of conv2d_forward. When `need_input` is false the input gradient is left empty.
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                             bool need_input = true, ConvAlgo algo = ConvAlgo::Auto) {
  const auto g = detail::conv_geometry(input, kernel);
  require(grad_out.shape() == Shape{g.batch, g.height, g.width, g.cout}, ErrorCode::ShapeMismatch,
          "conv2d_backward: grad_out " + shape_string(grad_out.shape()) + " inconsistent with input " +
              shape_string(input.shape()) + " and kernel " + shape_string(kernel.shape()));
  ConvGrads<T> grads;
  grads.kernel = BasicTensor<T>(kernel.shape());
  grads.bias = BasicTensor<T>(Shape{g.cout});
  if (need_input) grads.input = BasicTensor<T>(input.shape());
  if (detail::pick_algo(g, algo) == ConvAlgo::Direct)
    detail::conv_backward_direct(grad_out, input, kernel, g, grads, need_input);
  else
    detail::conv_backward_gemm(grad_out, input, kernel, g, grads, need_input);
  return grads;
}

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 max-pooling with stride 2. Ties resolve to the first element in raster order.
template <typename T>
PoolResult<T> maxpool2_forward(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "maxpool2 input");
  const std::size_t B = input.batch(), H = input.height(), W = input.width(), C = input.channels();
  require(H % 2 == 0 && W % 2 == 0, ErrorCode::ShapeMismatch,
          "maxpool2 requires even spatial extents, got " + shape_string(input.shape()));
  PoolResult<T> r{BasicTensor<T>(Shape{B, H / 2, W / 2, C}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H / 2; ++y)
      for (std::size_t x = 0; x < W / 2; ++x)
        for (std::size_t c = 0; c < C; ++c, ++o) {
          std::size_t best = input.offset(b, 2 * y, 2 * x, c);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = input.offset(b, 2 * y + dy, 2 * x + dx, c);
              if (input[idx] > input[best]) best = idx;
            }
          r.output[o] = input[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2_backward(const BasicTensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                                 const Shape& input_shape) {
  require(grad_out.size() == argmax.size(), ErrorCode::ShapeMismatch, "maxpool2_backward: argmax size mismatch");
  BasicTensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

/// Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block.
template <typename T>
BasicTensor<T> upsample2_nearest(const BasicTensor<T>& input) {
  require_rank4(input.shape(), "upsample2 input");
  const std::size_t B = input.batch(), H = input.height(), W = input.width(), C = input.channels();
  BasicTensor<T> out(Shape{B, 2 * H, 2 * W, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t x = 0; x < 2 * W; ++x)
        std::memcpy(&out.at(b, y, x, 0), &input.at(b, y / 2, x / 2, 0), C * sizeof(T));
  return out;
}

template <typename T>
BasicTensor<T> upsample2_backward(const BasicTensor<T>& grad_out) {
  require_rank4(grad_out.shape(), "upsample2 gradient");
  require(grad_out.height() % 2 == 0 && grad_out.width() % 2 == 0, ErrorCode::ShapeMismatch,
          "upsample2_backward requires even extents, got " + shape_string(grad_out.shape()));
  const std::size_t B = grad_out.batch(), H = grad_out.height() / 2, W = grad_out.width() / 2, C = grad_out.channels();
  BasicTensor<T> grad(Shape{B, H, W, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t x = 0; x < 2 * W; ++x)
        for (std::size_t c = 0; c < C; ++c) grad.at(b, y / 2, x / 2, c) += grad_out.at(b, y, x, c);
  return grad;
}

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  for (auto& v : x.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return x;
}

/// Gradient through relu given the forward *output*.
template <typename T>
BasicTensor<T> relu_backward(BasicTensor<T> grad_out, const BasicTensor<T>& output) {
  require(grad_out.shape() == output.shape(), ErrorCode::ShapeMismatch, "relu_backward shape mismatch");
  for (std::size_t i = 0; i < grad_out.size(); ++i)
    if (!(output[i] > T{0})) grad_out[i] = T{0};
  return grad_out;
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
BasicTensor<T> sigmoid(BasicTensor<T> x) {
  for (auto& v : x.data()) v = sigmoid(v);
  return x;
}

/// Gradient through sigmoid given the forward *output*.
template <typename T>
BasicTensor<T> sigmoid_backward(BasicTensor<T> grad_out, const BasicTensor<T>& output) {
  require(grad_out.shape() == output.shape(), ErrorCode::ShapeMismatch, "sigmoid_backward shape mismatch");
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] *= output[i] * (T{1} - output[i]);
  return grad_out;
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy, accumulated in double. Predictions are clamped to [1e-7, 1-1e-7].
template <typename T>
double bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require(pred.shape() == target.shape(), ErrorCode::ShapeMismatch,
          "bce_loss: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double t = static_cast<double>(target[i]);
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(pred.size());
}

/// d(bce_loss)/d(pred). Zero where the clamp is active.
template <typename T>
BasicTensor<T> bce_backward(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require(pred.shape() == target.shape(), ErrorCode::ShapeMismatch,
          "bce_backward: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
  BasicTensor<T> grad(pred.shape());
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = static_cast<double>(pred[i]);
    if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) continue;
    const double t = static_cast<double>(target[i]);
    grad[i] = static_cast<T>((-t / p + (1.0 - t) / (1.0 - p)) / n);
  }
  return grad;
}

/// Gradient of mean BCE with respect to the logits feeding a sigmoid: (p - t) / n.
template <typename T>
BasicTensor<T> bce_logit_backward(const BasicTensor<T>& prob, const BasicTensor<T>& target) {
  require(prob.shape() == target.shape(), ErrorCode::ShapeMismatch, "bce_logit_backward shape mismatch");
  BasicTensor<T> grad(prob.shape());
  const T inv_n = T{1} / static_cast<T>(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) grad[i] = (prob[i] - target[i]) * inv_n;
  return grad;
}

/// Dice overlap of two binary masks (nonzero = foreground). Two empty masks score 1.
inline double dice_coefficient(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch,
          "dice_coefficient: mask sizes differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] != 0, pb = b[i] != 0;
    na += pa;
    nb += pb;
    both += pa && pb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Running dice counts; lets a training epoch aggregate over many batches.
struct DiceCounter {
  std::size_t predicted = 0, target = 0, overlap = 0;

  template <typename T>
  void add(const BasicTensor<T>& prob, const BasicTensor<T>& target_mask, T threshold = T{0.5}) {
    require(prob.shape() == target_mask.shape(), ErrorCode::ShapeMismatch, "DiceCounter shape mismatch");
    for (std::size_t i = 0; i < prob.size(); ++i) {
      const bool p = prob[i] > threshold, t = target_mask[i] > T{0.5};
      predicted += p;
      target += t;
      overlap += p && t;
    }
  }
  double value() const {
    if (predicted + target == 0) return 1.0;
    return 2.0 * static_cast<double>(overlap) / static_cast<double>(predicted + target);
  }
};

}  // namespace ganglionet::ops
