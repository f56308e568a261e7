// raster.hpp
//
// Dense 2-D grids used throughout the pipeline: images, masks and attribution
// maps. All grids are row-major so that a raster maps directly onto a single
// feature-map row of the network tensors.
#ifndef CXR_RASTER_HPP
#define CXR_RASTER_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace cxr {

template <typename Scalar>
using Raster = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RasterF = Raster<float>;
using RasterD = Raster<double>;
using MaskRaster = Raster<std::uint8_t>;

inline constexpr int kCanonicalSize = 512;

template <typename A, typename B>
void require_same_shape(const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename Scalar>
Raster<Scalar> resize_bilinear(const Raster<Scalar>& src, Eigen::Index out_rows,
                               Eigen::Index out_cols) {
  Raster<Scalar> dst(out_rows, out_cols);
  const Eigen::Index in_rows = src.rows();
  const Eigen::Index in_cols = src.cols();
  if (in_rows == out_rows && in_cols == out_cols) return src;
  const double sy = static_cast<double>(in_rows) / static_cast<double>(out_rows);
  const double sx = static_cast<double>(in_cols) / static_cast<double>(out_cols);
  for (Eigen::Index y = 0; y < out_rows; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(in_rows - 1));
    const auto y0 = static_cast<Eigen::Index>(std::floor(fy));
    const Eigen::Index y1 = std::min(y0 + 1, in_rows - 1);
    const Scalar wy = static_cast<Scalar>(fy - static_cast<double>(y0));
    for (Eigen::Index x = 0; x < out_cols; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(in_cols - 1));
      const auto x0 = static_cast<Eigen::Index>(std::floor(fx));
      const Eigen::Index x1 = std::min(x0 + 1, in_cols - 1);
      const Scalar wx = static_cast<Scalar>(fx - static_cast<double>(x0));
      const Scalar top = src(y0, x0) * (Scalar(1) - wx) + src(y0, x1) * wx;
      const Scalar bottom = src(y1, x0) * (Scalar(1) - wx) + src(y1, x1) * wx;
      dst(y, x) = top * (Scalar(1) - wy) + bottom * wy;
    }
  }
  return dst;
}

/// Nearest-neighbour resize; keeps binary masks binary.
template <typename Scalar>
Raster<Scalar> resize_nearest(const Raster<Scalar>& src, Eigen::Index out_rows,
                              Eigen::Index out_cols) {
  Raster<Scalar> dst(out_rows, out_cols);
  for (Eigen::Index y = 0; y < out_rows; ++y) {
    const Eigen::Index sy = std::min(src.rows() - 1, (y * src.rows()) / out_rows);
    for (Eigen::Index x = 0; x < out_cols; ++x) {
      const Eigen::Index sx = std::min(src.cols() - 1, (x * src.cols()) / out_cols);
      dst(y, x) = src(sy, sx);
    }
  }
  return dst;
}

/// Min-max normalisation to [0,1]. Returns false when the input is constant,
/// in which case `out` is left untouched.
template <typename Scalar>
bool minmax_normalize(const Raster<Scalar>& in, Raster<Scalar>& out) {
  const Scalar lo = in.minCoeff();
  const Scalar hi = in.maxCoeff();
  if (!(hi > lo)) return false;
  out = (in - lo) / (hi - lo);
  return true;
}

/// Pads a raster to a square with zeros, centring the content.
template <typename Scalar>
Raster<Scalar> pad_to_square(const Raster<Scalar>& src) {
  const Eigen::Index side = std::max(src.rows(), src.cols());
  if (src.rows() == side && src.cols() == side) return src;
  Raster<Scalar> dst = Raster<Scalar>::Zero(side, side);
  const Eigen::Index top = (side - src.rows()) / 2;
  const Eigen::Index left = (side - src.cols()) / 2;
  dst.block(top, left, src.rows(), src.cols()) = src;
  return dst;
}

}  // namespace cxr

#endif  // CXR_RASTER_HPP
