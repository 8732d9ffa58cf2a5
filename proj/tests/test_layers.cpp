#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "robodet/layers.hpp"
#include "robodet/sparse.hpp"

using namespace robodet;

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<Scalar> t(s);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
ConvParams<Scalar> random_conv(int kernel, int stride, int in_ch, int out_ch, std::mt19937_64& rng) {
  ConvParams<Scalar> p(kernel, stride, in_ch, out_ch);
  p.weights = random_tensor<Scalar>(p.weights.shape(), rng);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int o = 0; o < out_ch; ++o) p.bias[o] = static_cast<Scalar>(dist(rng));
  return p;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("im2col convolution equals the direct loop") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 40; ++trial) {
      const int kernel = trial % 2 ? 3 : 1;
      const int stride = trial % 4 < 2 ? 1 : 2;
      const int in_ch = 1 + trial % 3;
      const int out_ch = 1 + trial % 4;
      const Shape s{1 + trial % 2, in_ch, 2 * (1 + trial % 5), 2 * (1 + trial % 3)};
      const auto x = random_tensor<double>(s, rng);
      const auto p = random_conv<double>(kernel, stride, in_ch, out_ch, rng);
      const auto got = conv2d_forward(x, p);
      CHECK(got.shape() == Shape{s.n, out_ch, s.h / stride, s.w / stride});
      CHECK(max_abs_diff(got, oracle::naive_conv(x, p)) < 1e-12);
    }
  }

  TEST_CASE("float convolution matches the oracle within 1e-5") {
    std::mt19937_64 rng(2);
    const auto x = random_tensor<float>({2, 3, 12, 16}, rng);
    const auto p = random_conv<float>(3, 2, 3, 5, rng);
    const auto got = conv2d_forward(x, p).cast<double>();
    CHECK(max_abs_diff(got, oracle::naive_conv(x, p)) < 1e-5);
  }

  TEST_CASE("1x1 stride-2 convolution subsamples") {
    ConvParams<double> p(1, 2, 1, 1);
    p.weights(0, 0, 0, 0) = 1.0;
    Tensor<double> x({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) x.values()[i] = i;
    const auto y = conv2d_forward(x, p);
    CHECK(y(0, 0, 0, 0) == 0.0);
    CHECK(y(0, 0, 0, 1) == 2.0);
    CHECK(y(0, 0, 1, 0) == 8.0);
    CHECK(y(0, 0, 1, 1) == 10.0);
  }

  TEST_CASE("convolution rejects bad shapes") {
    ConvParams<double> p(3, 2, 2, 1);
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>({1, 3, 4, 4}), p), ShapeError);
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>({1, 2, 5, 4}), p), ShapeError);
  }

  TEST_CASE("col2im is the adjoint of im2col") {
    std::mt19937_64 rng(3);
    for (int stride : {1, 2}) {
      const int c = 2, h = 6, w = 8, k = 3;
      const auto x = random_tensor<double>({1, c, h, w}, rng);
      RowMatrix<double> col;
      im2col(x.data(), c, h, w, k, stride, col);
      RowMatrix<double> r = RowMatrix<double>::Random(col.rows(), col.cols());
      Tensor<double> back({1, c, h, w});
      col2im(r.data(), c, h, w, k, stride, back.data());
      // <im2col(x), r> == <x, col2im(r)>
      CHECK(doctest::Approx((col.array() * r.array()).sum()).epsilon(1e-12) == x.values().dot(back.values()));
    }
  }

  TEST_CASE("convolution gradients match finite differences") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const int kernel = trial % 2 ? 3 : 1;
      const int stride = trial % 3 == 0 ? 2 : 1;
      auto x = random_tensor<double>({2, 2, 4, 6}, rng);
      auto p = random_conv<double>(kernel, stride, 2, 3, rng);
      const auto r = random_tensor<double>(conv_output_shape(x.shape(), p), rng);
      auto loss = [&] { return conv2d_forward(x, p).values().dot(r.values()); };
      const auto g = conv2d_backward(x, p, r);
      CHECK(oracle::relative_error(oracle::to_vector(g.weights.values()),
                                   oracle::numeric_gradient(loss, p.weights.data(), p.weights.size())) < 1e-6);
      CHECK(oracle::relative_error(oracle::to_vector(g.bias),
                                   oracle::numeric_gradient(loss, p.bias.data(), p.bias.size())) < 1e-6);
      CHECK(oracle::relative_error(oracle::to_vector(g.input.values()),
                                   oracle::numeric_gradient(loss, x.data(), x.size())) < 1e-6);
    }
  }

  TEST_CASE("leaky ReLU forward and gradient") {
    Tensor<double> x({1, 1, 1, 4});
    x.values() << -2.0, -0.5, 0.5, 3.0;
    const auto y = leaky_relu(x);
    CHECK(y.values()[0] == doctest::Approx(-0.2));
    CHECK(y.values()[3] == 3.0);
    Tensor<double> g({1, 1, 1, 4}, 1.0);
    const auto dx = leaky_relu_backward(x, g);
    CHECK(dx.values()[1] == doctest::Approx(0.1));
    CHECK(dx.values()[2] == 1.0);

    auto z = x;
    leaky_relu_inplace(z, 2.0);  // slope above 1 takes the select path
    CHECK(z.values()[0] == -4.0);
    CHECK(z.values()[3] == 3.0);
  }

  TEST_CASE("batch norm train mode normalizes and tracks running statistics") {
    std::mt19937_64 rng(5);
    auto x = random_tensor<double>({4, 3, 2, 2}, rng, 3.0);
    x.values().array() += 2.0;
    BatchNormParams<double> bn(3);
    const auto y = batch_norm(x, bn, Mode::train);
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      double sq = 0.0;
      for (int n = 0; n < 4; ++n) {
        for (int i = 0; i < 4; ++i) {
          const double v = y.sample(n)(c, i);
          sum += v;
          sq += v * v;
        }
      }
      CHECK(sum / 16 == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(sq / 16 == doctest::Approx(1.0).epsilon(1e-4));
    }
    CHECK(bn.running_mean.cwiseAbs().maxCoeff() > 0.0);
  }

  TEST_CASE("batch norm gradients match finite differences") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      auto x = random_tensor<double>({3, 2, 2, 3}, rng, 2.0);
      BatchNormParams<double> bn(2);
      bn.gamma = Vector<double>::Random(2);
      bn.beta = Vector<double>::Random(2);
      const auto r = random_tensor<double>(x.shape(), rng);
      auto loss = [&] { return batch_norm(x, bn, Mode::train).values().dot(r.values()); };
      BatchNormCache<double> cache;
      batch_norm(x, bn, Mode::train, &cache);
      const auto g = batch_norm_backward(r, bn, cache);
      CHECK(oracle::relative_error(oracle::to_vector(g.input.values()),
                                   oracle::numeric_gradient(loss, x.data(), x.size())) < 1e-3);
      CHECK(oracle::relative_error(oracle::to_vector(g.gamma),
                                   oracle::numeric_gradient(loss, bn.gamma.data(), 2)) < 1e-3);
      CHECK(oracle::relative_error(oracle::to_vector(g.beta), oracle::numeric_gradient(loss, bn.beta.data(), 2)) <
            1e-3);
    }
  }

  TEST_CASE("folding batch norm into the convolution preserves inference output") {
    std::mt19937_64 rng(7);
    const auto x = random_tensor<double>({2, 3, 6, 6}, rng);
    const auto p = random_conv<double>(3, 1, 3, 4, rng);
    BatchNormParams<double> bn(4);
    bn.gamma = Vector<double>::Random(4);
    bn.beta = Vector<double>::Random(4);
    bn.running_mean = Vector<double>::Random(4);
    bn.running_var = Vector<double>::Random(4).cwiseAbs().array() + 0.5;
    const auto expect = batch_norm(conv2d_forward(x, p), bn);
    const auto got = conv2d_forward(x, fold_batch_norm(p, bn));
    CHECK(max_abs_diff(got, expect) < 1e-12);
  }

  TEST_CASE("sparse convolution equals dense convolution") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution keep(0.15);
    for (int kernel : {1, 3}) {
      for (int stride : {1, 2}) {
        auto p = random_conv<float>(kernel, stride, 5, 7, rng);
        for (Eigen::Index i = 0; i < p.weights.size(); ++i) {
          if (!keep(rng)) p.weights.values()[i] = 0.0f;
        }
        const auto x = random_tensor<float>({2, 5, 10, 14}, rng);
        const auto sparse = SparseConvWeights<float>::from(p);
        CHECK(sparse.density() < 0.35);
        const auto dense_out = conv2d_forward(x, p);
        const auto sparse_out = conv2d_forward_sparse(x, p, sparse);
        CHECK((dense_out.values() - sparse_out.values()).cwiseAbs().maxCoeff() < 1e-5f);
      }
    }
  }

  TEST_CASE("sparse convolution with an all-zero weight matrix yields the bias") {
    ConvParams<float> p(3, 1, 2, 3);
    p.bias << 1.0f, -2.0f, 0.5f;
    const Tensor<float> x({1, 2, 4, 4}, 1.0f);
    const auto out = conv2d_forward_sparse(x, p, SparseConvWeights<float>::from(p));
    CHECK(out(0, 0, 2, 2) == 1.0f);
    CHECK(out(0, 1, 0, 3) == -2.0f);
    CHECK(out(0, 2, 3, 0) == 0.5f);
  }
}
