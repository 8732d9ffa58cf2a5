#pragma once

#include <vector>

#include "robodet/layers.hpp"

namespace robodet {

/// Densities below this switch a layer onto the compressed-weight product.
inline constexpr double kSparseDensityThreshold = 0.35;

/// Compressed-row (index, value) copy of a convolution's weight matrix.
template <typename Scalar>
struct SparseConvWeights {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_start;  // rows + 1 offsets into column/value
  std::vector<int> column;
  std::vector<Scalar> value;
  // column decomposed into (input channel, ky, kx)
  std::vector<int> channel;
  std::vector<int> tap_y;
  std::vector<int> tap_x;

  [[nodiscard]] std::size_t nonzeros() const { return value.size(); }
  [[nodiscard]] double density() const {
    return rows * cols == 0 ? 0.0 : static_cast<double>(nonzeros()) / (static_cast<double>(rows) * cols);
  }

  static SparseConvWeights from(const ConvParams<Scalar>& params) {
    SparseConvWeights sparse;
    sparse.rows = params.out_ch;
    sparse.cols = params.patch_size();
    sparse.row_start.reserve(sparse.rows + 1);
    sparse.row_start.push_back(0);
    const auto w = params.weight_matrix();
    for (int r = 0; r < sparse.rows; ++r) {
      for (int c = 0; c < sparse.cols; ++c) {
        if (w(r, c) != Scalar(0)) {
          sparse.column.push_back(c);
          sparse.value.push_back(w(r, c));
          sparse.channel.push_back(c / (params.kernel * params.kernel));
          sparse.tap_y.push_back((c / params.kernel) % params.kernel);
          sparse.tap_x.push_back(c % params.kernel);
        }
      }
      sparse.row_start.push_back(static_cast<int>(sparse.value.size()));
    }
    return sparse;
  }
};

namespace detail {

/// dst[0..W) = Σ_i value[i] · base[offset[i] + q + 0..W) for nonzeros [first, last), with
/// the W accumulators held in a fixed-size array the compiler keeps in registers.
template <int W, typename Scalar>
void sparse_block(const SparseConvWeights<Scalar>& weights, int first, int last, const Scalar* base,
                  const Eigen::Index* offset, Eigen::Index q, Scalar* dst) {
  using Block = Eigen::Array<Scalar, W, 1>;
  Block acc = Block::Zero();
  for (int i = first; i < last; ++i) acc += weights.value[i] * Eigen::Map<const Block>(base + offset[i] + q);
  Eigen::Map<Block> out(dst);
  out = acc;
}

/// Row r of the output: out[r][q] = Σ_i value[i] · base[offset[i] + q] over the nonzeros of
/// row r, for q < len.
template <typename Scalar>
void sparse_rows(const SparseConvWeights<Scalar>& weights, const Scalar* base, const Eigen::Index* offset,
                 Eigen::Index len, Scalar* out, Eigen::Index out_stride) {
  for (int r = 0; r < weights.rows; ++r) {
    const int first = weights.row_start[r];
    const int last = weights.row_start[r + 1];
    Scalar* dst = out + r * out_stride;
    Eigen::Index q = 0;
    for (; q + 64 <= len; q += 64) sparse_block<64>(weights, first, last, base, offset, q, dst + q);
    for (; q + 16 <= len; q += 16) sparse_block<16>(weights, first, last, base, offset, q, dst + q);
    for (Eigen::Index j = 0; j < len - q; ++j) {
      Scalar acc = 0;
      for (int i = first; i < last; ++i) acc += weights.value[i] * base[offset[i] + q + j];
      dst[q + j] = acc;
    }
  }
}

/// out = W_sparse · patches for a row-major (cols × columns) patch matrix.
template <typename Scalar>
void sparse_product(const SparseConvWeights<Scalar>& weights, const Scalar* patches, Eigen::Index columns,
                    Scalar* out) {
  thread_local std::vector<Eigen::Index> offset;
  offset.resize(weights.column.size());
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = weights.column[i] * columns;
  sparse_rows(weights, patches, offset.data(), columns, out, columns);
}

/// Stride-1 convolution without patch lowering: the input is zero-padded once and the
/// output is accumulated on a plane of the padded width, so each nonzero weight
/// (o, c, ky, kx) becomes a single contiguous axpy of input plane c shifted by
/// (ky, kx). The pad columns of the output plane are discarded afterwards.
template <typename Scalar>
void sparse_conv_stride1(const Scalar* input, int channels, int height, int width,
                         const ConvParams<Scalar>& params, const SparseConvWeights<Scalar>& weights, Scalar* out) {
  const int k = params.kernel;
  const int pad = k / 2;
  const int pw = width + 2 * pad;
  const int ph = height + 2 * pad;
  const Eigen::Index padded_plane = static_cast<Eigen::Index>(ph) * pw;
  // rounded up to whole 16-wide blocks; the extra columns are discarded with the pad columns
  const Eigen::Index span = (static_cast<Eigen::Index>(height) * pw + 15) / 16 * 16;

  thread_local std::vector<Scalar> padded;
  thread_local std::vector<Scalar> acc;
  thread_local std::vector<Eigen::Index> offset;
  // discarded output columns may read past the last plane
  padded.assign(static_cast<std::size_t>(channels * padded_plane + span), Scalar(0));
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      const Scalar* src = input + (static_cast<Eigen::Index>(c) * height + y) * width;
      std::copy(src, src + width, padded.data() + c * padded_plane + (y + pad) * pw + pad);
    }
  }
  offset.resize(weights.column.size());
  for (std::size_t i = 0; i < offset.size(); ++i) {
    offset[i] = weights.channel[i] * padded_plane + static_cast<Eigen::Index>(weights.tap_y[i]) * pw + weights.tap_x[i];
  }
  acc.resize(static_cast<std::size_t>(weights.rows * span));
  sparse_rows(weights, padded.data(), offset.data(), span, acc.data(), span);
  const Eigen::Index plane = static_cast<Eigen::Index>(height) * width;
  for (int r = 0; r < weights.rows; ++r) {
    const Scalar* src = acc.data() + r * span;
    Scalar* o = out + r * plane;
    for (int y = 0; y < height; ++y) std::copy(src + y * pw, src + y * pw + width, o + y * width);
  }
}

}  // namespace detail

/// Same result as conv2d_forward, computed with the compressed weight matrix.
template <typename Scalar>
Tensor<Scalar> conv2d_forward_sparse(const Tensor<Scalar>& input, const ConvParams<Scalar>& params,
                                     const SparseConvWeights<Scalar>& weights) {
  const Shape& in = input.shape();
  detail::check_conv_input(in, params);
  if (weights.rows != params.out_ch || weights.cols != params.patch_size()) {
    throw ShapeError("sparse weights are " + std::to_string(weights.rows) + "x" + std::to_string(weights.cols) +
                     ", conv expects " + std::to_string(params.out_ch) + "x" + std::to_string(params.patch_size()));
  }
  Tensor<Scalar> output(conv_output_shape(in, params));
  for (int n = 0; n < in.n; ++n) {
    auto out = output.sample(n);
    const Eigen::Index columns = out.cols();
    if (detail::is_pointwise(params)) {
      detail::sparse_product(weights, input.sample(n).data(), columns, out.data());
    } else if (params.stride == 1) {
      detail::sparse_conv_stride1(input.sample(n).data(), in.c, in.h, in.w, params, weights, out.data());
    } else {
      auto col = detail::workspace<Scalar, 0>(params.patch_size(), columns);
      im2col(input.sample(n).data(), in.c, in.h, in.w, params.kernel, params.stride, col.data());
      detail::sparse_product(weights, col.data(), columns, out.data());
    }
    out.colwise() += params.bias;
  }
  return output;
}

}  // namespace robodet
