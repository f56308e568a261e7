#include "cxr/classifier.hpp"
#include "cxr/segmenter.hpp"

#include <stdexcept>

namespace cxr {

void ClassifierConfig::validate() const {
  if (stem_pool < 1) throw std::invalid_argument("classifier: stem_pool must be >= 1");
  if (blocks < 1) throw std::invalid_argument("classifier: blocks must be >= 1");
  if (layers_per_block < 1 || growth < 1 || stem_channels < 1 || transition_channels < 1 ||
      feature_channels < 1)
    throw std::invalid_argument("classifier: layer and channel counts must be >= 1");
  if (classes < 2) throw std::invalid_argument("classifier: at least two classes required");
}

void SegmenterConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("segmenter: depth must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("segmenter: base_channels must be >= 1");
  if (input_pool < 1) throw std::invalid_argument("segmenter: input_pool must be >= 1");
}

std::size_t LungMask::count() const {
  return static_cast<std::size_t>((pixels != 0).count());
}

MaskPrediction predict_mask(const RasterF& image, const SegmenterModel& model) {
  const auto rec = model.forward(image);
  RasterF low(rec.logits.height, rec.logits.width);
  for (Eigen::Index i = 0; i < low.size(); ++i) low.data()[i] = sigmoid(rec.logits.values.data()[i]);
  MaskPrediction out;
  out.probability = resize_bilinear(low, image.rows(), image.cols());
  out.mask.pixels = (out.probability >= kMaskThreshold).cast<std::uint8_t>();
  out.empty_mask = out.mask.empty();
  return out;
}

double dice(const LungMask& a, const LungMask& b) {
  require_same_shape(a.pixels, b.pixels, "dice");
  const auto ca = static_cast<double>((a.pixels != 0).count());
  const auto cb = static_cast<double>((b.pixels != 0).count());
  if (ca + cb == 0.0) return 1.0;
  const auto inter = static_cast<double>(((a.pixels != 0) && (b.pixels != 0)).count());
  return 2.0 * inter / (ca + cb);
}

RasterF apply_mask(const RasterF& image, const LungMask& mask) {
  require_same_shape(image, mask.pixels, "apply_mask");
  return (mask.pixels != 0).select(image, 0.0f);
}

}  // namespace cxr
