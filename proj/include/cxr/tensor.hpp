// tensor.hpp
//
// Feature maps and the primitive network operations (forward and backward)
// shared by the segmentation and classification networks. A feature map is a
// row-major matrix with one row per channel and one column per pixel, which
// turns convolution into a single GEMM over an im2col buffer.
#ifndef CXR_TENSOR_HPP
#define CXR_TENSOR_HPP

#include "cxr/raster.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace cxr::nn {

using Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ConstMatrixRef = Eigen::Ref<const Matrix<Scalar>>;

template <typename Scalar>
struct Tensor {
  Index height = 0;
  Index width = 0;
  Matrix<Scalar> values;  // channels x (height * width)

  Index channels() const { return values.rows(); }
  Index pixels() const { return height * width; }

  static Tensor zeros(Index channels, Index height, Index width) {
    return Tensor{height, width, Matrix<Scalar>::Zero(channels, height * width)};
  }

  static Tensor from_raster(const Raster<Scalar>& r) {
    Tensor t{r.rows(), r.cols(), Matrix<Scalar>(1, r.size())};
    t.values = Eigen::Map<const Matrix<Scalar>>(r.data(), 1, r.size());
    return t;
  }

  Raster<Scalar> channel(Index c) const {
    return Eigen::Map<const Raster<Scalar>>(values.row(c).data(), height, width);
  }
};

enum class Activation { kRelu, kIdentity };

/// How ReLU units route gradients during the backward pass. Guided mode
/// additionally suppresses negative incoming gradients.
enum class ReluRule { kStandard, kGuided };

// ---------------------------------------------------------------------------
// Convolution (stride 1, zero padding k/2)

template <typename Scalar>
Matrix<Scalar> im2col(const ConstMatrixRef<Scalar>& in, Index height, Index width, int k) {
  const Index channels = in.rows();
  const int pad = k / 2;
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(channels * k * k, height * width);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* src = in.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const Index x_begin = std::max<Index>(0, -dx);
        const Index x_end = std::min<Index>(width, width - dx);
        if (x_end <= x_begin) continue;
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          const Scalar* srow = src + sy * width + dx;
          Scalar* drow = dst + y * width;
          for (Index x = x_begin; x < x_end; ++x) drow[x] = srow[x];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& cols, Index channels, Index height, Index width,
                      int k) {
  const int pad = k / 2;
  Matrix<Scalar> out = Matrix<Scalar>::Zero(channels, height * width);
  for (Index c = 0; c < channels; ++c) {
    Scalar* dst = out.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const Index x_begin = std::max<Index>(0, -dx);
        const Index x_end = std::min<Index>(width, width - dx);
        if (x_end <= x_begin) continue;
        for (Index y = 0; y < height; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          Scalar* drow = dst + sy * width + dx;
          const Scalar* srow = src + y * width;
          for (Index x = x_begin; x < x_end; ++x) drow[x] += srow[x];
        }
      }
    }
  }
  return out;
}

/// `weight` is (out_channels x in_channels*k*k), `bias` has out_channels rows.
template <typename Scalar>
Matrix<Scalar> conv2d(const ConstMatrixRef<Scalar>& in, Index height, Index width,
                      const Matrix<Scalar>& weight, const Matrix<Scalar>& bias, int k) {
  if (weight.cols() != in.rows() * k * k)
    throw std::invalid_argument("conv2d: weight has " + std::to_string(weight.cols()) +
                                " columns, expected " + std::to_string(in.rows() * k * k));
  Matrix<Scalar> out;
  if (k == 1) {
    out.noalias() = weight * in;
  } else {
    const Matrix<Scalar> cols = im2col<Scalar>(in, height, width, k);
    out.noalias() = weight * cols;
  }
  out.colwise() += bias.col(0);
  return out;
}

/// Accumulates parameter gradients; returns the input gradient when
/// `want_input_grad` is set (otherwise an empty matrix).
template <typename Scalar>
Matrix<Scalar> conv2d_backward(const ConstMatrixRef<Scalar>& in, Index height, Index width,
                               const Matrix<Scalar>& weight, int k,
                               const Matrix<Scalar>& grad_out, Matrix<Scalar>* grad_weight,
                               Matrix<Scalar>* grad_bias, bool want_input_grad) {
  Matrix<Scalar> grad_in;
  if (k == 1) {
    if (grad_weight) grad_weight->noalias() += grad_out * in.transpose();
    if (want_input_grad) grad_in.noalias() = weight.transpose() * grad_out;
  } else {
    if (grad_weight) {
      const Matrix<Scalar> cols = im2col<Scalar>(in, height, width, k);
      grad_weight->noalias() += grad_out * cols.transpose();
    }
    if (want_input_grad) {
      Matrix<Scalar> grad_cols;
      grad_cols.noalias() = weight.transpose() * grad_out;
      grad_in = col2im<Scalar>(grad_cols, in.rows(), height, width, k);
    }
  }
  if (grad_bias) grad_bias->col(0) += grad_out.rowwise().sum();
  return grad_in;
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
void activate(Matrix<Scalar>& values, Activation act) {
  if (act == Activation::kRelu) values = values.cwiseMax(Scalar(0));
}

/// `activated` is the forward output of the activation.
template <typename Scalar>
Matrix<Scalar> activation_backward(const ConstMatrixRef<Scalar>& activated,
                                   const ConstMatrixRef<Scalar>& grad_out, Activation act,
                                   ReluRule rule) {
  if (act == Activation::kIdentity) return grad_out;
  Matrix<Scalar> grad_in(grad_out.rows(), grad_out.cols());
  if (rule == ReluRule::kStandard) {
    grad_in.array() = (activated.array() > Scalar(0)).select(grad_out.array(), Scalar(0));
  } else {
    grad_in.array() = (activated.array() > Scalar(0) && grad_out.array() > Scalar(0))
                          .select(grad_out.array(), Scalar(0));
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Pooling and resampling

template <typename Scalar>
Matrix<Scalar> avg_pool(const ConstMatrixRef<Scalar>& in, Index height, Index width, int f) {
  if (f == 1) return in;
  if (height % f != 0 || width % f != 0)
    throw std::invalid_argument("avg_pool: " + std::to_string(height) + "x" +
                                std::to_string(width) + " not divisible by " +
                                std::to_string(f));
  const Index oh = height / f;
  const Index ow = width / f;
  const Scalar scale = Scalar(1) / static_cast<Scalar>(f * f);
  Matrix<Scalar> out = Matrix<Scalar>::Zero(in.rows(), oh * ow);
  for (Index c = 0; c < in.rows(); ++c) {
    const Scalar* src = in.row(c).data();
    Scalar* dst = out.row(c).data();
    for (Index y = 0; y < height; ++y) {
      Scalar* drow = dst + (y / f) * ow;
      const Scalar* srow = src + y * width;
      for (Index x = 0; x < width; ++x) drow[x / f] += srow[x];
    }
    for (Index i = 0; i < oh * ow; ++i) dst[i] *= scale;
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> avg_pool_backward(const ConstMatrixRef<Scalar>& grad_out, Index height,
                                 Index width, int f) {
  if (f == 1) return grad_out;
  const Index ow = width / f;
  const Scalar scale = Scalar(1) / static_cast<Scalar>(f * f);
  Matrix<Scalar> grad_in(grad_out.rows(), height * width);
  for (Index c = 0; c < grad_out.rows(); ++c) {
    const Scalar* src = grad_out.row(c).data();
    Scalar* dst = grad_in.row(c).data();
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) dst[y * width + x] = src[(y / f) * ow + x / f] * scale;
  }
  return grad_in;
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename Scalar>
Matrix<Scalar> upsample_nearest(const ConstMatrixRef<Scalar>& in, Index height, Index width,
                                int f) {
  const Index ow = width * f;
  Matrix<Scalar> out(in.rows(), height * f * ow);
  for (Index c = 0; c < in.rows(); ++c) {
    const Scalar* src = in.row(c).data();
    Scalar* dst = out.row(c).data();
    for (Index y = 0; y < height * f; ++y)
      for (Index x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / f) * width + x / f];
  }
  return out;
}

/// `height`/`width` describe the low-resolution input of the forward pass.
template <typename Scalar>
Matrix<Scalar> upsample_nearest_backward(const ConstMatrixRef<Scalar>& grad_out, Index height,
                                         Index width, int f) {
  const Index ow = width * f;
  Matrix<Scalar> grad_in = Matrix<Scalar>::Zero(grad_out.rows(), height * width);
  for (Index c = 0; c < grad_out.rows(); ++c) {
    const Scalar* src = grad_out.row(c).data();
    Scalar* dst = grad_in.row(c).data();
    for (Index y = 0; y < height * f; ++y)
      for (Index x = 0; x < ow; ++x) dst[(y / f) * width + x / f] += src[y * ow + x];
  }
  return grad_in;
}

template <typename Scalar>
Vector<Scalar> global_average_pool(const ConstMatrixRef<Scalar>& in) {
  return in.rowwise().mean();
}

template <typename Scalar>
Matrix<Scalar> global_average_pool_backward(const Vector<Scalar>& grad_out, Index pixels) {
  Matrix<Scalar> grad_in(grad_out.size(), pixels);
  grad_in.colwise() = grad_out / static_cast<Scalar>(pixels);
  return grad_in;
}

}  // namespace cxr::nn

#endif  // CXR_TENSOR_HPP
