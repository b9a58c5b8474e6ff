#include <gtest/gtest.h>

#include <cmath>

#include "ganglionet/nabla_net.hpp"
#include "oracles.hpp"

using namespace ganglionet;
using ganglionet::testing::append_sign_pattern;
using ganglionet::testing::central_difference;
using ganglionet::testing::Signature;
using ganglionet::testing::smooth_central_difference;
using ganglionet::testing::random_tensor;
using ganglionet::testing::relative_error;
using ganglionet::testing::weighted_sum;

namespace {

NablaArchitecture toy_arch(std::size_t side = 32) {
  auto a = NablaArchitecture::with_base_width(2, 4, 3);
  a.patch_side = side;
  return a;
}

// Randomises every parameter so recurrent kernels and the head carry signal.
template <typename T>
void randomise(BasicParamStore<T>& store, std::uint64_t seed, double scale = 0.4) {
  std::uint64_t k = 0;
  for (auto& e : store.entries()) e.weight = random_tensor<T>(e.weight.shape(), derive_seed(seed, k++), -scale, scale);
}

Signature unit_signature(const UnitCache<double>& c) {
  Signature sig;
  append_sign_pattern(sig, c.stem_out);
  for (const auto& r : c.rcls)
    for (const auto& z : r.states) append_sign_pattern(sig, z);
  return sig;
}

Signature network_signature(const BasicParamStore<double>& store, const NablaArchitecture& a,
                            const BasicTensor<double>& x) {
  NetworkCache<double> c;
  network_logits(store, a, x, &c);
  Signature sig;
  for (const auto& u : c.encoder) {
    auto s = unit_signature(u);
    sig.insert(sig.end(), s.begin(), s.end());
  }
  for (const auto& am : c.pool_argmax) sig.insert(sig.end(), am.begin(), am.end());
  for (const auto& stream : c.streams)
    for (const auto& u : stream) {
      auto s = unit_signature(u);
      sig.insert(sig.end(), s.begin(), s.end());
    }
  return sig;
}

// Checks every smooth entry of `param`; returns {checked, total}.
std::pair<std::size_t, std::size_t> check_gradient(BasicTensor<double>& param, const BasicTensor<double>& grad,
                                                   const std::function<double()>& loss,
                                                   const std::function<Signature()>& sig, double tol,
                                                   const std::string& label) {
  std::size_t checked = 0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    auto numeric = smooth_central_difference(param, i, loss, sig);
    if (!numeric) continue;
    ++checked;
    EXPECT_LE(relative_error(grad[i], *numeric), tol) << label << "[" << i << "]";
  }
  return {checked, param.size()};
}

}  // namespace

TEST(NablaArchitecture, DefaultMirrorsLayerString) {
  NablaArchitecture a;
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.encoder_widths, (std::vector<std::size_t>{16, 32, 64, 128, 256, 512}));
  EXPECT_EQ(a.decoder_widths, (std::vector<std::size_t>{256, 128, 64, 32, 16}));
  EXPECT_EQ(NablaArchitecture::with_base_width(16), a);
}

TEST(NablaArchitecture, RejectsInvalid) {
  NablaArchitecture a;
  a.t_steps = 0;
  EXPECT_THROW(a.validate(), Error);
  a = {};
  a.decoder_widths[0] = 255;
  EXPECT_THROW(a.validate(), Error);
  a = {};
  a.patch_side = 100;
  EXPECT_THROW(a.validate(), Error);
  a = {};
  a.n_decode_levels = 7;
  EXPECT_THROW(a.validate(), Error);
}

TEST(NablaNet, FullParameterCountNearPublishedFigure) {
  const auto store = build_network(NablaArchitecture{}, 1);
  const auto n = count_parameters(store);
  EXPECT_EQ(n, 20340225u);
  EXPECT_LE(std::abs(static_cast<double>(n) - 18.98e6) / 18.98e6, 0.15);
}

TEST(NablaNet, ZeroImageGivesValidProbabilities) {
  NablaArchitecture a = NablaArchitecture{}.narrowed(4);
  const auto store = build_network(a, 3);
  const auto out = network_forward(store, a, Tensor(Shape{1, 128, 128, 3}));
  EXPECT_EQ(out.shape(), (Shape{1, 128, 128, 1}));
  for (auto v : out.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(NablaNet, SameSeedBitIdentical) {
  auto a = toy_arch();
  EXPECT_TRUE(build_network(a, 9) == build_network(a, 9));
  EXPECT_FALSE(build_network(a, 9) == build_network(a, 10));
}

TEST(NablaNet, WrongExtentRejectedWithShapes) {
  auto a = toy_arch();
  const auto store = build_network(a, 1);
  try {
    network_forward(store, a, Tensor(Shape{1, 64, 64, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("[1,64,64,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[B,32,32,3]"), std::string::npos);
  }
}

TEST(NablaNet, PureAndPerSampleIndependent) {
  auto a = toy_arch();
  auto store = build_network(a, 4);
  randomise(store, 4);
  auto x = random_tensor<float>(Shape{1, 32, 32, 3}, 5, 0.0, 1.0);
  const auto y1 = network_forward(store, a, x);
  EXPECT_EQ(network_forward(store, a, x), y1);

  Tensor twice(Shape{2, 32, 32, 3});
  std::copy(x.data().begin(), x.data().end(), twice.data().begin());
  std::copy(x.data().begin(), x.data().end(), twice.data().begin() + x.size());
  const auto y2 = network_forward(store, a, twice);
  for (std::size_t i = 0; i < y1.size(); ++i) {
    EXPECT_EQ(y2[i], y1[i]);
    EXPECT_EQ(y2[i + y1.size()], y1[i]);
  }
}

TEST(Rcl, ZeroRecurrentKernelIsPlainConvRelu) {
  auto x = random_tensor<float>(Shape{1, 6, 6, 3}, 1);
  auto fw = random_tensor<float>(Shape{3, 3, 3, 4}, 2);
  auto fb = random_tensor<float>(Shape{4}, 3);
  Tensor rw(Shape{3, 3, 4, 4}), rb(Shape{4});
  const auto plain = ops::relu(ops::conv2d_forward(x, fw, fb));
  for (std::size_t t : {1, 2, 5}) EXPECT_EQ(rcl_forward<float>(x, {fw, fb}, {rw, rb}, t), plain);
  EXPECT_THROW(rcl_forward<float>(x, {fw, fb}, {rw, rb}, 0), Error);
}

TEST(Rcl, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = random_tensor<double>(Shape{1, 4, 4, 2}, seed);
    auto fw = random_tensor<double>(Shape{3, 3, 2, 3}, seed + 1, -0.5, 0.5);
    auto fb = random_tensor<double>(Shape{3}, seed + 2, -0.1, 0.1);
    auto rw = random_tensor<double>(Shape{3, 3, 3, 3}, seed + 3, -0.3, 0.3);
    auto rb = random_tensor<double>(Shape{3}, seed + 4, -0.1, 0.1);
    auto w = random_tensor<double>(Shape{1, 4, 4, 3}, seed + 5);
    auto loss = [&] { return weighted_sum(rcl_forward<double>(x, {fw, fb}, {rw, rb}, 2), w); };

    RclCache<double> cache;
    rcl_forward<double>(x, {fw, fb}, {rw, rb}, 2, &cache);
    BasicTensor<double> gfw(fw.shape()), gfb(fb.shape()), grw(rw.shape()), grb(rb.shape());
    auto gx = rcl_backward<double>(w, cache, {fw, fb}, {rw, rb}, {gfw, gfb}, {grw, grb});

    auto sig = [&] {
      RclCache<double> c;
      rcl_forward<double>(x, {fw, fb}, {rw, rb}, 2, &c);
      Signature s;
      for (const auto& z : c.states) append_sign_pattern(s, z);
      return s;
    };
    std::size_t checked = 0, total = 0;
    auto check = [&](BasicTensor<double>& param, const BasicTensor<double>& grad, const char* label) {
      auto [c, t] = check_gradient(param, grad, loss, sig, 1e-3, label + std::string(" seed ") + std::to_string(seed));
      checked += c;
      total += t;
    };
    check(x, gx, "x");
    check(fw, gfw, "f.w");
    check(fb, gfb, "f.b");
    check(rw, grw, "r.w");
    check(rb, grb, "r.b");
    EXPECT_GE(checked * 10, total * 8) << "too many stencils straddle a ReLU kink";
  }
}

TEST(Rcu, GradientMatchesFiniteDifferences) {
  NablaArchitecture a = toy_arch(8);
  auto store = build_network<double>(a, 2);
  randomise(store, 2);
  auto x = random_tensor<double>(Shape{1, 4, 4, 3}, 8);
  auto w = random_tensor<double>(Shape{1, 4, 4, 2}, 9);
  auto loss = [&] { return weighted_sum(rcu_forward(store, "enc0", a, x), w); };
  UnitCache<double> cache;
  rcu_forward(store, "enc0", a, x, &cache);
  auto grads = zero_gradients(store);
  auto gx = rcu_backward(store, "enc0", a, w, cache, grads);
  auto sig = [&] {
    UnitCache<double> c;
    rcu_forward(store, "enc0", a, x, &c);
    return unit_signature(c);
  };
  auto [checked, total] = check_gradient(x, gx, loss, sig, 1e-3, "x");
  for (auto& e : store.entries()) {
    if (e.name.rfind("enc0.", 0) != 0) continue;
    auto [c, t] = check_gradient(e.weight, grads.at(e.name), loss, sig, 1e-3, e.name);
    checked += c;
    total += t;
  }
  EXPECT_GE(checked * 10, total * 8);
}

TEST(Rcu, ChannelMismatchRejected) {
  auto a = toy_arch();
  const auto store = build_network(a, 1);
  EXPECT_THROW(rcu_forward(store, "enc1", a, Tensor(Shape{1, 8, 8, 3})), Error);
}

TEST(NablaNet, WholeNetworkGradientMatchesFiniteDifferences) {
  const auto a = toy_arch(32);
  auto store = build_network<double>(a, 21);
  randomise(store, 21, 0.3);
  auto x = random_tensor<double>(Shape{2, 32, 32, 3}, 22, 0.0, 1.0);
  auto target = random_tensor<double>(Shape{2, 32, 32, 1}, 23, 0.0, 1.0);
  for (auto& v : target.data()) v = v > 0.7 ? 1.0 : 0.0;

  NetworkCache<double> cache;
  const auto logits = network_logits(store, a, x, &cache);
  const auto grads = network_backward(store, a, cache, ops::bce_logit_backward(ops::sigmoid(logits), target));
  auto loss = [&] { return ops::bce_loss(network_forward(store, a, x), target); };

  auto sig = [&] { return network_signature(store, a, x); };

  Rng rng(99);
  int checked = 0, attempts = 0;
  while (checked < 24 && attempts < 200) {
    ++attempts;
    auto& e = store.entries()[rng.below(store.size())];
    const std::size_t i = rng.below(e.weight.size());
    const auto numeric = smooth_central_difference(e.weight, i, loss, sig);
    if (!numeric) continue;
    EXPECT_LE(relative_error(grads.at(e.name)[i], *numeric), 2e-3) << e.name << "[" << i << "]";
    ++checked;
  }
  EXPECT_EQ(checked, 24);
}
