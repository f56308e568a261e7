// explain.hpp
//
// Attribution maps for the classifier stages: class activation maps from the
// head weights, gradient-weighted maps, guided backpropagation and their
// product. Low-resolution maps live on the pre-pooling grid and are
// bilinearly upsampled to the input size before min-max normalisation.
#ifndef CXR_EXPLAIN_HPP
#define CXR_EXPLAIN_HPP

#include "cxr/classifier.hpp"
#include "cxr/raster.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cxr {

enum class HeatMethod { kCam, kGradCam };

inline std::string to_string(HeatMethod m) { return m == HeatMethod::kCam ? "CAM" : "GRADCAM"; }

/// Which tensor the class activation map is built from. kWeightedFeatures is
/// the usual head-weighted sum of spatial maps; kLiteralReshape reshapes the
/// pooled feature vector into a square grid and carries no localisation.
enum class CamMode { kWeightedFeatures, kLiteralReshape };

template <typename Scalar>
struct BasicHeatMap {
  Raster<Scalar> pixels;     // normalised to [0,1]
  Raster<Scalar> low_res;    // before upsampling and normalisation
  Raster<Scalar> upsampled;  // upsampled, not normalised
  int stage = 2;
  HeatMethod method = HeatMethod::kCam;
  bool flat = false;         // constant before normalisation -> all ones
};

template <typename Scalar>
struct BasicGuidedActivation {
  Raster<Scalar> pixels;   // signed, unnormalised
  Raster<Scalar> display;  // divided by max |value|, in [-1,1]
};

using HeatMap = BasicHeatMap<float>;
using GuidedActivation = BasicGuidedActivation<float>;

namespace detail {

inline void check_target(int target, int classes) {
  if (target < 0 || target >= classes)
    throw std::out_of_range("target class " + std::to_string(target) + " out of range [0," +
                            std::to_string(classes) + ")");
}

template <typename Scalar>
Raster<Scalar> as_raster(const nn::Matrix<Scalar>& row_vector, Eigen::Index h, Eigen::Index w) {
  return Eigen::Map<const Raster<Scalar>>(row_vector.data(), h, w);
}

}  // namespace detail

/// Upsamples a low-resolution map and normalises it; constant maps become
/// all ones so that multiplying by them leaves an image unchanged.
template <typename Scalar>
BasicHeatMap<Scalar> finish_heatmap(Raster<Scalar> low_res, Eigen::Index rows, Eigen::Index cols,
                                    int stage, HeatMethod method) {
  BasicHeatMap<Scalar> out;
  out.stage = stage;
  out.method = method;
  out.upsampled = resize_bilinear(low_res, rows, cols);
  out.low_res = std::move(low_res);
  if (!minmax_normalize(out.upsampled, out.pixels)) {
    out.pixels = Raster<Scalar>::Ones(rows, cols);
    out.flat = true;
  }
  return out;
}

/// Sum_k w[target,k] * A[k] on the pre-pooling grid.
template <typename Scalar>
Raster<Scalar> cam_low_res(const ForwardRecord<Scalar>& rec, const DenseClassifier<Scalar>& model,
                           int target, CamMode mode = CamMode::kWeightedFeatures) {
  detail::check_target(target, model.config().classes);
  if (mode == CamMode::kLiteralReshape) {
    const auto c = rec.pooled.size();
    const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(c))));
    if (side * side != c)
      throw std::invalid_argument("literal CAM reshape needs a square feature count, got " +
                                  std::to_string(c));
    return Eigen::Map<const Raster<Scalar>>(rec.pooled.data(), side, side);
  }
  const nn::Matrix<Scalar> weighted = model.head_weight().row(target) * rec.spatial.values;
  return detail::as_raster<Scalar>(weighted, rec.spatial.height, rec.spatial.width);
}

template <typename Scalar>
BasicHeatMap<Scalar> cam(const ForwardRecord<Scalar>& rec, const DenseClassifier<Scalar>& model,
                         int target, int stage = 2, CamMode mode = CamMode::kWeightedFeatures) {
  return finish_heatmap<Scalar>(cam_low_res(rec, model, target, mode), rec.input_height,
                                rec.input_width, stage, HeatMethod::kCam);
}

/// ReLU(sum_k alpha_k A[k]) with alpha_k the spatial mean of d logit / d A[k].
template <typename Scalar>
Raster<Scalar> grad_cam_low_res(const ForwardRecord<Scalar>& rec,
                                const DenseClassifier<Scalar>& model, int target) {
  detail::check_target(target, model.config().classes);
  nn::Vector<Scalar> seed = nn::Vector<Scalar>::Zero(model.config().classes);
  seed(target) = Scalar(1);
  BackwardOptions opts;
  opts.parameter_grads = false;
  const auto grads = model.backward(rec, seed, opts);
  const nn::Vector<Scalar> alpha = grads.spatial.rowwise().mean();
  nn::Matrix<Scalar> weighted = alpha.transpose() * rec.spatial.values;
  weighted = weighted.cwiseMax(Scalar(0));
  return detail::as_raster<Scalar>(weighted, rec.spatial.height, rec.spatial.width);
}

template <typename Scalar>
BasicHeatMap<Scalar> grad_cam(const ForwardRecord<Scalar>& rec,
                              const DenseClassifier<Scalar>& model, int target, int stage = 3) {
  return finish_heatmap<Scalar>(grad_cam_low_res(rec, model, target), rec.input_height,
                                rec.input_width, stage, HeatMethod::kGradCam);
}

template <typename Scalar>
BasicHeatMap<Scalar> grad_cam(const Raster<Scalar>& image, const DenseClassifier<Scalar>& model,
                              int target, int stage = 3) {
  return grad_cam(model.forward(image), model, target, stage);
}

template <typename Scalar>
Raster<Scalar> max_abs_normalized(const Raster<Scalar>& r) {
  const Scalar m = r.abs().maxCoeff();
  if (!(m > Scalar(0))) return Raster<Scalar>::Zero(r.rows(), r.cols());
  return r / m;
}

/// Input gradient of the target logit with guided ReLU routing.
template <typename Scalar>
BasicGuidedActivation<Scalar> guided_backprop(const ForwardRecord<Scalar>& rec,
                                              const DenseClassifier<Scalar>& model, int target) {
  detail::check_target(target, model.config().classes);
  nn::Vector<Scalar> seed = nn::Vector<Scalar>::Zero(model.config().classes);
  seed(target) = Scalar(1);
  BackwardOptions opts;
  opts.relu_rule = nn::ReluRule::kGuided;
  opts.parameter_grads = false;
  opts.input_grad = true;
  BasicGuidedActivation<Scalar> out;
  out.pixels = model.backward(rec, seed, opts).input;
  out.display = max_abs_normalized(out.pixels);
  return out;
}

template <typename Scalar>
BasicGuidedActivation<Scalar> guided_backprop(const Raster<Scalar>& image,
                                              const DenseClassifier<Scalar>& model, int target) {
  return guided_backprop(model.forward(image), model, target);
}

/// Elementwise product of a guided map with an (unnormalised, upsampled,
/// non-negative) gradient-weighted map.
template <typename Scalar>
BasicGuidedActivation<Scalar> combine_guided(const Raster<Scalar>& guided,
                                             const Raster<Scalar>& gradcam) {
  require_same_shape(guided, gradcam, "combine_guided");
  BasicGuidedActivation<Scalar> out;
  out.pixels = guided * gradcam;
  out.display = max_abs_normalized(out.pixels);
  return out;
}

template <typename Scalar>
BasicGuidedActivation<Scalar> guided_grad_cam(const ForwardRecord<Scalar>& rec,
                                              const DenseClassifier<Scalar>& model, int target) {
  const auto guided = guided_backprop(rec, model, target);
  const Raster<Scalar> low = grad_cam_low_res(rec, model, target);
  const Raster<Scalar> up = resize_bilinear(low, rec.input_height, rec.input_width);
  return combine_guided<Scalar>(guided.pixels, up);
}

template <typename Scalar>
BasicGuidedActivation<Scalar> guided_grad_cam(const Raster<Scalar>& image,
                                              const DenseClassifier<Scalar>& model, int target) {
  return guided_grad_cam(model.forward(image), model, target);
}

}  // namespace cxr

#endif  // CXR_EXPLAIN_HPP
