#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "robodet/tensor.hpp"

namespace robodet {

enum class Mode { train, infer };

inline constexpr double kLeakySlope = 0.1;

/// Convolution with fixed "same" zero padding (kernel / 2).
template <typename Scalar>
struct ConvParams {
  int kernel = 1;
  int stride = 1;
  int in_ch = 0;
  int out_ch = 0;
  Tensor<Scalar> weights;  // (out_ch, in_ch, kernel, kernel)
  Vector<Scalar> bias;

  ConvParams() = default;
  ConvParams(int kernel_size, int stride_, int in_channels, int out_channels)
      : kernel(kernel_size),
        stride(stride_),
        in_ch(in_channels),
        out_ch(out_channels),
        weights(Shape{out_channels, in_channels, kernel_size, kernel_size}),
        bias(Vector<Scalar>::Zero(out_channels)) {}

  [[nodiscard]] int padding() const { return kernel / 2; }
  [[nodiscard]] int patch_size() const { return in_ch * kernel * kernel; }

  /// Weights viewed as an (out_ch × in_ch·k·k) matrix.
  typename Tensor<Scalar>::SampleMap weight_matrix() {
    return typename Tensor<Scalar>::SampleMap(weights.data(), out_ch, patch_size());
  }
  typename Tensor<Scalar>::ConstSampleMap weight_matrix() const {
    return typename Tensor<Scalar>::ConstSampleMap(weights.data(), out_ch, patch_size());
  }
};

template <typename Scalar>
struct BatchNormParams {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar epsilon = Scalar(1e-5);

  BatchNormParams() = default;
  explicit BatchNormParams(int channels)
      : gamma(Vector<Scalar>::Ones(channels)),
        beta(Vector<Scalar>::Zero(channels)),
        running_mean(Vector<Scalar>::Zero(channels)),
        running_var(Vector<Scalar>::Ones(channels)) {}

  [[nodiscard]] int channels() const { return static_cast<int>(gamma.size()); }
};

/// Intermediate values kept by a training-mode batch norm for its backward pass.
template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;  // x̂
  Vector<Scalar> inv_std;
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;    // empty when not requested
  Tensor<Scalar> weights;  // shaped like ConvParams::weights
  Vector<Scalar> bias;
};

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

/// Output spatial extent of a same-padded convolution.
inline int conv_output_extent(int extent, int stride) { return (extent + stride - 1) / stride; }

// ---------------------------------------------------------------------------
// im2col lowering

/// Lowers one (channels, height, width) sample into a (channels·k·k × h_out·w_out) patch matrix.
namespace detail {

// FixedStride > 0 lets the compiler specialize the strided gather; 0 reads `stride` at run time.
template <int FixedStride, typename Scalar>
void im2col_impl(const Scalar* input, int channels, int height, int width, int kernel, int runtime_stride,
                 Scalar* dst) {
  const int stride = FixedStride > 0 ? FixedStride : runtime_stride;
  const int pad = kernel / 2;
  const int out_h = conv_output_extent(height, stride);
  const int out_w = conv_output_extent(width, stride);
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = input + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            dst += out_w;
            continue;
          }
          const Scalar* row = plane + static_cast<std::ptrdiff_t>(iy) * width;
          if (stride == 1) {
            // ix = ox + kx - pad; copy the valid span and zero the borders
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(out_w, width + pad - kx);
            std::fill(dst, dst + lo, Scalar(0));
            if (hi > lo) std::copy(row + lo + kx - pad, row + hi + kx - pad, dst + lo);
            std::fill(dst + std::max(lo, hi), dst + out_w, Scalar(0));
          } else {
            // valid ox satisfy 0 <= ox·stride + kx - pad < width
            const int offset = kx - pad;
            const int lo = std::min(out_w, offset >= 0 ? 0 : (-offset + stride - 1) / stride);
            const int last = width - 1 - offset;
            const int hi = last < 0 ? lo : std::max(lo, std::min(out_w, last / stride + 1));
            std::fill(dst, dst + lo, Scalar(0));
            const Scalar* src = row + offset;
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
            std::fill(dst + hi, dst + out_w, Scalar(0));
          }
          dst += out_w;
        }
      }
    }
  }
}

}  // namespace detail

/// `dst` must hold channels·k·k·h_out·w_out values.
template <typename Scalar>
void im2col(const Scalar* input, int channels, int height, int width, int kernel, int stride, Scalar* dst) {
  switch (stride) {
    case 1: detail::im2col_impl<1>(input, channels, height, width, kernel, stride, dst); break;
    case 2: detail::im2col_impl<2>(input, channels, height, width, kernel, stride, dst); break;
    default: detail::im2col_impl<0>(input, channels, height, width, kernel, stride, dst); break;
  }
}

template <typename Scalar>
void im2col(const Scalar* input, int channels, int height, int width, int kernel, int stride,
            RowMatrix<Scalar>& col) {
  col.resize(static_cast<Eigen::Index>(channels) * kernel * kernel,
             static_cast<Eigen::Index>(conv_output_extent(height, stride)) * conv_output_extent(width, stride));
  im2col(input, channels, height, width, kernel, stride, col.data());
}

/// Adjoint of im2col: scatters patch-matrix gradients (`src`, laid out as im2col writes
/// them) back onto the input sample.
template <typename Scalar>
void col2im(const Scalar* src, int channels, int height, int width, int kernel, int stride, Scalar* input_grad) {
  const int pad = kernel / 2;
  const int out_h = conv_output_extent(height, stride);
  const int out_w = conv_output_extent(width, stride);
  for (int c = 0; c < channels; ++c) {
    Scalar* plane = input_grad + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy >= 0 && iy < height) {
            Scalar* row = plane + static_cast<std::ptrdiff_t>(iy) * width;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < width) row[ix] += src[ox];
            }
          }
          src += out_w;
        }
      }
    }
  }
}

namespace detail {

template <typename Scalar>
void check_conv_input(const Shape& in, const ConvParams<Scalar>& params) {
  if (!in.positive()) throw ShapeError("conv input has a zero dimension: " + to_string(in));
  if (in.c != params.in_ch) {
    throw ShapeError("conv input channels " + std::to_string(in.c) + " != in_ch " + std::to_string(params.in_ch));
  }
  if (in.h % params.stride != 0) {
    throw ShapeError("conv input height " + std::to_string(in.h) + " not divisible by stride " +
                     std::to_string(params.stride));
  }
  if (in.w % params.stride != 0) {
    throw ShapeError("conv input width " + std::to_string(in.w) + " not divisible by stride " +
                     std::to_string(params.stride));
  }
}

/// Grow-only per-thread scratch matrix. `Slot` separates buffers that are live at the same time.
template <typename Scalar, int Slot>
Eigen::Map<RowMatrix<Scalar>> workspace(Eigen::Index rows, Eigen::Index cols) {
  thread_local std::vector<Scalar> storage;
  if (static_cast<Eigen::Index>(storage.size()) < rows * cols) storage.resize(static_cast<std::size_t>(rows * cols));
  return {storage.data(), rows, cols};
}

template <typename Scalar>
bool is_pointwise(const ConvParams<Scalar>& params) {
  return params.kernel == 1 && params.stride == 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convolution

template <typename Scalar>
Shape conv_output_shape(const Shape& in, const ConvParams<Scalar>& params) {
  return {in.n, params.out_ch, in.h / params.stride, in.w / params.stride};
}

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const ConvParams<Scalar>& params) {
  const Shape& in = input.shape();
  detail::check_conv_input(in, params);
  Tensor<Scalar> output(conv_output_shape(in, params));
  const auto weights = params.weight_matrix();
  auto col = detail::workspace<Scalar, 0>(params.patch_size(), static_cast<Eigen::Index>(output.shape().plane()));
  for (int n = 0; n < in.n; ++n) {
    auto out = output.sample(n);
    for (Eigen::Index c = 0; c < out.rows(); ++c) out.row(c).setConstant(params.bias[c]);
    if (detail::is_pointwise(params)) {
      out.noalias() += weights * input.sample(n);
    } else {
      im2col(input.sample(n).data(), in.c, in.h, in.w, params.kernel, params.stride, col.data());
      out.noalias() += weights * col;
    }
  }
  return output;
}

/// Gradients of ⟨grad_out, conv2d_forward(input, params)⟩. The input gradient is
/// skipped when `need_input_grad` is false (first layer of a network).
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const ConvParams<Scalar>& params,
                                  const Tensor<Scalar>& grad_out, bool need_input_grad = true) {
  const Shape& in = input.shape();
  detail::check_conv_input(in, params);
  const Shape expected = conv_output_shape(in, params);
  if (grad_out.shape() != expected) {
    throw ShapeError("conv grad_out shape " + to_string(grad_out.shape()) + " != output shape " +
                     to_string(expected));
  }
  ConvGrads<Scalar> grads;
  grads.weights = Tensor<Scalar>(params.weights.shape());
  grads.bias = Vector<Scalar>::Zero(params.out_ch);
  if (need_input_grad) grads.input = Tensor<Scalar>(in);

  typename Tensor<Scalar>::SampleMap grad_w(grads.weights.data(), params.out_ch, params.patch_size());
  const auto weights = params.weight_matrix();
  const auto plane = static_cast<Eigen::Index>(expected.plane());
  auto col = detail::workspace<Scalar, 0>(params.patch_size(), plane);
  auto grad_col = detail::workspace<Scalar, 1>(params.patch_size(), plane);
  for (int n = 0; n < in.n; ++n) {
    const auto g = grad_out.sample(n);
    grads.bias += g.rowwise().sum();
    if (detail::is_pointwise(params)) {
      grad_w.noalias() += g * input.sample(n).transpose();
      if (need_input_grad) grads.input.sample(n).noalias() = weights.transpose() * g;
    } else {
      im2col(input.sample(n).data(), in.c, in.h, in.w, params.kernel, params.stride, col.data());
      grad_w.noalias() += g * col.transpose();
      if (need_input_grad) {
        grad_col.noalias() = weights.transpose() * g;
        col2im(grad_col.data(), in.c, in.h, in.w, params.kernel, params.stride, grads.input.sample(n).data());
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// leaky ReLU

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope = Scalar(kLeakySlope)) {
  const auto& x = input.values().array();
  return Tensor<Scalar>(input.shape(), (x >= Scalar(0)).select(x, slope * x).matrix().eval());
}

template <typename Scalar>
void leaky_relu_inplace(Tensor<Scalar>& t, Scalar slope = Scalar(kLeakySlope)) {
  auto x = t.values().array();
  if (slope >= Scalar(0) && slope <= Scalar(1)) {
    x = x.max(slope * x);  // same result, vectorizes
  } else {
    x = (x >= Scalar(0)).select(x, slope * x);
  }
}

/// Gradient w.r.t. the pre-activation `input`.
template <typename Scalar>
Tensor<Scalar> leaky_relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& grad_out,
                                   Scalar slope = Scalar(kLeakySlope)) {
  if (input.shape() != grad_out.shape()) {
    throw ShapeError("leaky_relu grad_out shape " + to_string(grad_out.shape()) + " != input shape " +
                     to_string(input.shape()));
  }
  const auto& x = input.values().array();
  const auto& g = grad_out.values().array();
  return Tensor<Scalar>(input.shape(), (x >= Scalar(0)).select(g, slope * g).matrix().eval());
}

// ---------------------------------------------------------------------------
// batch normalization

namespace detail {

template <typename Scalar>
void check_bn_input(const Shape& in, const BatchNormParams<Scalar>& params) {
  if (in.c != params.channels()) {
    throw ShapeError("batch_norm input channels " + std::to_string(in.c) + " != parameter channels " +
                     std::to_string(params.channels()));
  }
}

/// Applies out = x·scale[c] + shift[c] channelwise.
template <typename Scalar>
Tensor<Scalar> channel_affine(const Tensor<Scalar>& input, const Vector<Scalar>& scale,
                              const Vector<Scalar>& shift) {
  const Shape& s = input.shape();
  Tensor<Scalar> out(s);
  for (int n = 0; n < s.n; ++n) {
    auto dst = out.sample(n);
    dst.noalias() = scale.asDiagonal() * input.sample(n);
    dst.colwise() += shift;
  }
  return out;
}

}  // namespace detail

/// Inference-mode batch norm using running statistics.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const BatchNormParams<Scalar>& params) {
  detail::check_bn_input(input.shape(), params);
  const Vector<Scalar> scale =
      (params.gamma.array() / (params.running_var.array() + params.epsilon).sqrt()).matrix();
  const Vector<Scalar> shift = params.beta - scale.cwiseProduct(params.running_mean);
  return detail::channel_affine(input, scale, shift);
}

/// Batch norm in either mode. Train mode normalizes with batch statistics, updates
/// running statistics with momentum and, when `cache` is given, records what the
/// backward pass needs.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, BatchNormParams<Scalar>& params, Mode mode,
                          BatchNormCache<Scalar>* cache = nullptr) {
  if (mode == Mode::infer) return batch_norm(input, std::as_const(params));
  const Shape& s = input.shape();
  detail::check_bn_input(s, params);
  const Eigen::Index count = static_cast<Eigen::Index>(s.n) * s.plane();

  Vector<Scalar> mean = Vector<Scalar>::Zero(s.c);
  for (int n = 0; n < s.n; ++n) mean += input.sample(n).rowwise().sum();
  mean /= Scalar(count);
  Vector<Scalar> var = Vector<Scalar>::Zero(s.c);
  for (int n = 0; n < s.n; ++n) {
    var += (input.sample(n).colwise() - mean).rowwise().squaredNorm();
  }
  var /= Scalar(count);

  const Vector<Scalar> inv_std = (var.array() + params.epsilon).rsqrt().matrix();
  Tensor<Scalar> normalized = detail::channel_affine(input, inv_std, Vector<Scalar>(-inv_std.cwiseProduct(mean)));
  Tensor<Scalar> out = detail::channel_affine(normalized, params.gamma, params.beta);

  const Scalar unbias = count > 1 ? Scalar(count) / Scalar(count - 1) : Scalar(1);
  params.running_mean = (Scalar(1) - params.momentum) * params.running_mean + params.momentum * mean;
  params.running_var = (Scalar(1) - params.momentum) * params.running_var + params.momentum * unbias * var;

  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

/// Backward of train-mode batch norm.
template <typename Scalar>
BatchNormGrads<Scalar> batch_norm_backward(const Tensor<Scalar>& grad_out, const BatchNormParams<Scalar>& params,
                                           const BatchNormCache<Scalar>& cache) {
  const Shape& s = grad_out.shape();
  detail::check_bn_input(s, params);
  if (cache.normalized.shape() != s) {
    throw ShapeError("batch_norm grad_out shape " + to_string(s) + " != cached shape " +
                     to_string(cache.normalized.shape()));
  }
  const Scalar count = Scalar(static_cast<Eigen::Index>(s.n) * s.plane());

  BatchNormGrads<Scalar> grads;
  grads.gamma = Vector<Scalar>::Zero(s.c);
  grads.beta = Vector<Scalar>::Zero(s.c);
  for (int n = 0; n < s.n; ++n) {
    const auto g = grad_out.sample(n);
    grads.beta += g.rowwise().sum();
    grads.gamma += g.cwiseProduct(cache.normalized.sample(n)).rowwise().sum();
  }
  // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
  const Vector<Scalar> scale = params.gamma.cwiseProduct(cache.inv_std);
  const Vector<Scalar> mean_dy = grads.beta / count;
  const Vector<Scalar> mean_dy_xhat = grads.gamma / count;
  grads.input = Tensor<Scalar>(s);
  for (int n = 0; n < s.n; ++n) {
    auto dx = grads.input.sample(n);
    dx = grad_out.sample(n);
    dx.colwise() -= mean_dy;
    dx -= mean_dy_xhat.asDiagonal() * cache.normalized.sample(n);
    dx = scale.asDiagonal() * dx;
  }
  return grads;
}

/// Folds an inference-mode batch norm into the preceding convolution.
template <typename Scalar>
ConvParams<Scalar> fold_batch_norm(const ConvParams<Scalar>& conv, const BatchNormParams<Scalar>& bn) {
  if (bn.channels() != conv.out_ch) {
    throw ShapeError("fold_batch_norm: bn channels " + std::to_string(bn.channels()) + " != conv out_ch " +
                     std::to_string(conv.out_ch));
  }
  const Vector<Scalar> scale = (bn.gamma.array() / (bn.running_var.array() + bn.epsilon).sqrt()).matrix();
  ConvParams<Scalar> folded = conv;
  folded.weight_matrix() = scale.asDiagonal() * conv.weight_matrix();
  folded.bias = (conv.bias - bn.running_mean).cwiseProduct(scale) + bn.beta;
  return folded;
}

}  // namespace robodet
