#include <doctest.h>

#include <cmath>

#include "fg/layers.hpp"
#include "support.hpp"

using namespace fg;

namespace {

// Direct cross-correlation sum, independent of the engine's im2col path.
std::vector<double> conv2d_oracle(const std::vector<double>& x, int N, int C,
                                  int H, int W, const std::vector<double>& w,
                                  int F, int kh, int kw,
                                  const std::vector<double>& b, int sh, int sw,
                                  int ph, int pw, int& oh, int& ow) {
  oh = (H + 2 * ph - kh) / sh + 1;
  ow = (W + 2 * pw - kw) / sw + 1;
  std::vector<double> out(static_cast<size_t>(N) * F * oh * ow, 0.0);
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b[f];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * sh - ph + ky;
                const int ix = ox * sw - pw + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((static_cast<size_t>(n) * C + c) * H + iy) * W + ix] *
                       w[((static_cast<size_t>(f) * C + c) * kh + ky) * kw + kx];
              }
          out[((static_cast<size_t>(n) * F + f) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d: identity kernel reproduces the input") {
  Tensor x = Tensor::constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor w = Tensor::constant({1, 1, 1, 1}, {1.0});
  Tensor b = Tensor::constant({1}, {0.0});
  Tensor y = conv2d(x, w, b, {1, 1}, {0, 0});
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("conv2d: hand-checked diagonal kernel") {
  Tensor x = Tensor::constant({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::constant({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::constant({1}, {0.0});
  Tensor y = conv2d(x, w, b, {1, 1}, {0, 0});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(5.0));  // 1*1 + 4*1
}

TEST_CASE("conv2d: strided output shape") {
  Tensor x = Tensor::constant({1, 1, 4, 4}, std::vector<double>(16, 0.5));
  Tensor w = Tensor::constant({1, 1, 2, 2}, std::vector<double>(4, 1.0));
  Tensor b = Tensor::constant({1}, {0.0});
  CHECK(conv2d(x, w, b, {2, 2}, {0, 0}).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d matches the direct summation oracle on random instances") {
  fg::Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    const int N = 1 + static_cast<int>(rng.uniform_int(2));
    const int C = 1 + static_cast<int>(rng.uniform_int(3));
    const int F = 1 + static_cast<int>(rng.uniform_int(3));
    const int kh = 1 + static_cast<int>(rng.uniform_int(3));
    const int kw = 1 + static_cast<int>(rng.uniform_int(3));
    const int sh = 1 + static_cast<int>(rng.uniform_int(2));
    const int sw = 1 + static_cast<int>(rng.uniform_int(2));
    const int ph = static_cast<int>(rng.uniform_int(2));
    const int pw = static_cast<int>(rng.uniform_int(2));
    const int H = kh + static_cast<int>(rng.uniform_int(5));
    const int W = kw + static_cast<int>(rng.uniform_int(5));
    auto xv = fgtest::random_values(rng, static_cast<int64_t>(N) * C * H * W);
    auto wv = fgtest::random_values(rng, static_cast<int64_t>(F) * C * kh * kw);
    auto bv = fgtest::random_values(rng, F);
    int oh = 0, ow = 0;
    const auto expect = conv2d_oracle(xv, N, C, H, W, wv, F, kh, kw, bv, sh, sw,
                                      ph, pw, oh, ow);
    Tensor y = conv2d(Tensor::constant({N, C, H, W}, xv),
                      Tensor::constant({F, C, kh, kw}, wv),
                      Tensor::constant({F}, bv), {sh, sw}, {ph, pw});
    REQUIRE(y.shape() == Shape{N, F, oh, ow});
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects mismatched shapes with the offending axis named") {
  Tensor x = Tensor::constant({1, 2, 4, 4}, std::vector<double>(32, 0.0));
  Tensor w = Tensor::constant({1, 3, 2, 2}, std::vector<double>(12, 0.0));
  Tensor b = Tensor::constant({1}, {0.0});
  CHECK_THROWS_WITH_AS(conv2d(x, w, b, {1, 1}, {0, 0}),
                       doctest::Contains("channel axis"), ShapeError);
  Tensor w2 = Tensor::constant({1, 2, 6, 2}, std::vector<double>(24, 0.0));
  CHECK_THROWS_AS(conv2d(x, w2, b, {1, 1}, {0, 0}), ShapeError);
}

TEST_CASE("conv_transpose2d: single element scatters the kernel") {
  Tensor x = Tensor::constant({1, 1, 1, 1}, {2.0});
  Tensor w = Tensor::constant({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor b = Tensor::constant({1}, {0.0});
  Tensor y = conv_transpose2d(x, w, b, {1, 1}, {0, 0});
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.values()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv_transpose2d: stride-2 output shape") {
  Tensor x = Tensor::constant({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w = Tensor::constant({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::constant({1}, {0.0});
  CHECK(conv_transpose2d(x, w, b, {2, 2}, {0, 0}).shape() == Shape{1, 1, 4, 4});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  fg::Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int N = 1, C = 1 + static_cast<int>(rng.uniform_int(2));
    const int F = 1 + static_cast<int>(rng.uniform_int(3));
    const int kh = 1 + static_cast<int>(rng.uniform_int(3));
    const int kw = 1 + static_cast<int>(rng.uniform_int(3));
    const int sh = 1 + static_cast<int>(rng.uniform_int(3));
    const int sw = 1 + static_cast<int>(rng.uniform_int(3));
    const int ph = static_cast<int>(rng.uniform_int(2));
    const int pw = static_cast<int>(rng.uniform_int(2));
    const int oh = 1 + static_cast<int>(rng.uniform_int(4));
    const int ow = 1 + static_cast<int>(rng.uniform_int(4));
    const int H = (oh - 1) * sh - 2 * ph + kh;
    const int W = (ow - 1) * sw - 2 * pw + kw;
    if (H < 1 || W < 1 || H + 2 * ph < kh || W + 2 * pw < kw) continue;

    Tensor x = Tensor::constant({N, C, H, W},
                                fgtest::random_values(rng, static_cast<int64_t>(N) * C * H * W));
    Tensor w = Tensor::constant({F, C, kh, kw},
                                fgtest::random_values(rng, static_cast<int64_t>(F) * C * kh * kw));
    Tensor y = Tensor::constant({N, F, oh, ow},
                                fgtest::random_values(rng, static_cast<int64_t>(N) * F * oh * ow));
    Tensor zero_f = Tensor::constant({F}, std::vector<double>(F, 0.0));
    Tensor zero_c = Tensor::constant({C}, std::vector<double>(C, 0.0));
    Tensor cx = conv2d(x, w, zero_f, {sh, sw}, {ph, pw});
    REQUIRE(cx.shape() == y.shape());
    Tensor ty = conv_transpose2d(y, w, zero_c, {sh, sw}, {ph, pw});
    REQUIRE(ty.shape() == x.shape());
    CHECK(dot(cx.values(), y.values()) ==
          doctest::Approx(dot(x.values(), ty.values())).epsilon(1e-10));
  }
}

TEST_CASE("batchnorm2d: train mode standardizes each channel") {
  fg::Rng rng(3);
  Tensor x = Tensor::constant({2, 3, 4, 4}, fgtest::random_values(rng, 96, -2.0, 5.0));
  Tensor gamma = Tensor::constant({3}, {1, 1, 1});
  Tensor beta = Tensor::constant({3}, {0, 0, 0});
  BatchNormState state(3, 0.1, 1e-8);
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::kTrain);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = y.values()[(n * 3 + c) * 16 + i];
        s += v;
        s2 += v * v;
      }
    const double mean = s / 32.0;
    const double var = s2 / 32.0 - mean * mean;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("batchnorm2d: constant channel collapses to beta") {
  Tensor x = Tensor::constant({1, 1, 2, 3}, std::vector<double>(6, 7.5));
  Tensor gamma = Tensor::constant({1}, {3.0});
  Tensor beta = Tensor::constant({1}, {1.0});
  BatchNormState state(1);
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::kTrain);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("batchnorm2d: eval mode uses running statistics") {
  Tensor x = Tensor::constant({1, 1, 1, 1}, {4.0});
  Tensor gamma = Tensor::constant({1}, {1.0});
  Tensor beta = Tensor::constant({1}, {0.0});
  BatchNormState state(1, 0.1, 0.0);
  state.running_mean = {2.0};
  state.running_var = {4.0};
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::kEval);
  CHECK(y.item() == doctest::Approx(1.0));  // (4-2)/sqrt(4)
}

TEST_CASE("batchnorm2d: train mode rejects singleton batches") {
  Tensor x = Tensor::constant({1, 2, 1, 1}, {1.0, 2.0});
  Tensor gamma = Tensor::constant({2}, {1, 1});
  Tensor beta = Tensor::constant({2}, {0, 0});
  BatchNormState state(2);
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, state, Mode::kTrain), EngineError);
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, state, Mode::kEval));
}

TEST_CASE("activations: relu and leaky_relu definitions") {
  Tensor x = Tensor::constant({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[2] == 2.0);
  Tensor z = leaky_relu(Tensor::constant({2}, {-2.0, 3.0}), 0.2);
  CHECK(z.values()[0] == doctest::Approx(-0.4));
  CHECK(z.values()[1] == doctest::Approx(3.0));
  CHECK_THROWS_AS(leaky_relu(x, 1.0), ConfigError);
}

TEST_CASE("mfm: pairs channels and takes the max") {
  Tensor x = Tensor::constant({1, 2, 1, 1}, {1.0, 3.0});
  Tensor y = mfm(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(3.0));

  // identical halves reproduce either half exactly
  Tensor x2 = Tensor::constant({1, 4, 1, 2}, {1, 2, 3, 4, 1, 2, 3, 4});
  Tensor y2 = mfm(x2);
  for (int i = 0; i < 4; ++i) CHECK(y2.values()[i] == x2.values()[i]);

  Tensor odd = Tensor::constant({1, 3, 1, 1}, {1, 2, 3});
  CHECK_THROWS_AS(mfm(odd), ShapeError);
}

TEST_CASE("mfm matches brute force on a random tensor") {
  fg::Rng rng(5);
  const int C = 4, H = 2, W = 2;
  auto xv = fgtest::random_values(rng, C * H * W);
  Tensor y = mfm(Tensor::constant({1, C, H, W}, xv));
  for (int k = 0; k < C / 2; ++k)
    for (int i = 0; i < H * W; ++i) {
      const double a = xv[static_cast<size_t>(k) * H * W + i];
      const double b = xv[static_cast<size_t>(k + C / 2) * H * W + i];
      CHECK(y.values()[static_cast<size_t>(k) * H * W + i] == std::max(a, b));
    }
}

TEST_CASE("maxpool2d: definition, ties, and brute force") {
  Tensor x = Tensor::constant({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = maxpool2d(x, {2, 2}, {2, 2});
  CHECK(y.item() == doctest::Approx(4.0));

  // constant input routes gradient to the first element of each window
  Tensor c = Tensor::param({1, 1, 2, 2}, {5, 5, 5, 5});
  Tensor yc = maxpool2d(c, {2, 2}, {2, 2});
  backward(sum(yc));
  CHECK(c.grad()[0] == 1.0);
  CHECK(c.grad()[1] == 0.0);
  CHECK(c.grad()[2] == 0.0);
  CHECK(c.grad()[3] == 0.0);

  CHECK_THROWS_AS(maxpool2d(x, {3, 3}, {1, 1}), ShapeError);

  fg::Rng rng(9);
  auto xv = fgtest::random_values(rng, 36);
  Tensor big = Tensor::constant({1, 1, 6, 6}, xv);
  Tensor pooled = maxpool2d(big, {3, 3}, {3, 3});
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      double best = -1e300;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          best = std::max(best, xv[static_cast<size_t>(oy * 3 + ky) * 6 + ox * 3 + kx]);
      CHECK(pooled.values()[oy * 2 + ox] == best);
    }
}

TEST_CASE("affine: identity, hand dot product, and shape errors") {
  Tensor x = Tensor::constant({1, 3}, {1, 2, 3});
  Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor zero = Tensor::constant({3}, {0, 0, 0});
  Tensor y = affine(x, eye, zero);
  for (int i = 0; i < 3; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]));

  Tensor ones = Tensor::constant({3, 1}, {1, 1, 1});
  Tensor b1 = Tensor::constant({1}, {1.0});
  CHECK(affine(x, ones, b1).item() == doctest::Approx(7.0));

  Tensor bad = Tensor::constant({4, 1}, {1, 1, 1, 1});
  CHECK_THROWS_AS(affine(x, bad, b1), ShapeError);
}

TEST_CASE("dropout: eval and p=0 are bit-identical to the input") {
  fg::Rng rng(1);
  Tensor x = Tensor::constant({64}, fgtest::random_values(rng, 64));
  fg::Rng r1(10);
  Tensor ye = dropout(x, 0.4, Mode::kEval, &r1);
  REQUIRE(ye.size() == x.size());
  for (int64_t i = 0; i < x.size(); ++i) CHECK(ye.values()[i] == x.values()[i]);
  Tensor y0 = dropout(x, 0.0, Mode::kTrain, &r1);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(y0.values()[i] == x.values()[i]);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, &r1), ConfigError);
}

TEST_CASE("dropout: mask is reproducible and mean-preserving") {
  const int64_t n = 100000;
  Tensor x = Tensor::constant({static_cast<int>(n)}, std::vector<double>(n, 1.0));
  fg::Rng r1(77), r2(77);
  Tensor y1 = dropout(x, 0.4, Mode::kTrain, &r1);
  Tensor y2 = dropout(x, 0.4, Mode::kTrain, &r2);
  for (int64_t i = 0; i < n; ++i) REQUIRE(y1.values()[i] == y2.values()[i]);

  double mean = 0.0;
  for (double v : y1.values()) mean += v;
  mean /= static_cast<double>(n);
  // survivors scale to 1/(1-p): mean 1, per-element variance p/(1-p)
  const double sigma = std::sqrt(0.4 / 0.6 / static_cast<double>(n));
  CHECK(std::abs(mean - 1.0) < 3.0 * sigma);
}

TEST_CASE("losses: closed forms") {
  Tensor x = Tensor::constant({4}, {1, 2, 3, 4});
  CHECK(mse_loss(x, x).item() == 0.0);

  Tensor logits = Tensor::constant({1, 2}, {0.0, 0.0});
  CHECK(softmax_cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)));

  Tensor pred = Tensor::param({3}, {1.0, -2.0, 0.5});
  Tensor target = Tensor::constant({3}, {0.0, 1.0, 0.5});
  Tensor loss = mse_loss(pred, target);
  backward(loss);
  for (int i = 0; i < 3; ++i) {
    const double expect = 2.0 * (pred.values()[i] - target.values()[i]) / 3.0;
    CHECK(pred.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  Tensor bad = Tensor::constant({2}, {1.0, 2.0});
  CHECK_THROWS_AS(mse_loss(x, bad), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}), ContractError);
}

TEST_CASE("stack shape inference rejects bad stacks with a trace") {
  std::vector<LayerSpec> specs{LayerSpec::conv2d(1, 3, 3, 1, 1), LayerSpec::mfm()};
  CHECK_THROWS_WITH_AS(infer_stack_shapes(specs, {1, 1, 8, 8}),
                       doctest::Contains("even"), ShapeError);

  std::vector<LayerSpec> ok{LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::mfm(),
                            LayerSpec::maxpool2d(2, 2), LayerSpec::batchnorm2d(),
                            LayerSpec::affine(2 * 4 * 4, 2)};
  const auto shapes = infer_stack_shapes(ok, {1, 1, 8, 8});
  CHECK(shapes.back() == Shape{1, 2});
}
