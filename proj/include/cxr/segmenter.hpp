// segmenter.hpp
//
// Stage 1: encoder-decoder lung segmentation with skip connections, plus the
// mask utilities (Dice overlap, mask application) used by later stages.
#ifndef CXR_SEGMENTER_HPP
#define CXR_SEGMENTER_HPP

#include "cxr/parameters.hpp"
#include "cxr/raster.hpp"
#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

struct SegmenterConfig {
  int depth = 4;          // resolution levels including the bottleneck
  int base_channels = 16;
  int input_pool = 4;     // the network runs at (input / input_pool)
  nn::Activation activation = nn::Activation::kRelu;
  std::uint64_t seed = 0;

  int granularity() const { return input_pool * (1 << (depth - 1)); }
  void validate() const;
};

template <typename Scalar>
struct SegmenterRecord {
  struct Level {
    nn::Tensor<Scalar> input;  // encoder: level input; decoder: [upsampled; skip]
    nn::Tensor<Scalar> first;
    nn::Tensor<Scalar> second;
  };
  nn::Tensor<Scalar> pooled_input;
  std::vector<Level> encoder;
  std::vector<Level> decoder;  // indexed by level, last entry unused
  nn::Tensor<Scalar> logits;   // 1 x h x w at network resolution
};

template <typename Scalar>
class UNet {
 public:
  using Matrix = nn::Matrix<Scalar>;

  UNet() = default;

  explicit UNet(const SegmenterConfig& config) : config_(config) {
    config_.validate();
    build_layout();
    Rng rng(config_.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (params_.name(idx).ends_with(".weight")) he_uniform(params_[idx], params_[idx].cols(), rng);
    }
  }

  UNet(const SegmenterConfig& config, ParameterSet<Scalar> params) : config_(config) {
    config_.validate();
    build_layout();
    if (!params.same_layout(params_))
      throw std::invalid_argument("UNet: parameter archive does not match config");
    params_ = std::move(params);
  }

  const SegmenterConfig& config() const { return config_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }
  ParameterSet<Scalar>& parameters() { return params_; }

  template <typename Other>
  UNet<Other> cast() const {
    return UNet<Other>(config_, params_.template cast<Other>());
  }

  SegmenterRecord<Scalar> forward(const Raster<Scalar>& image) const {
    const int g = config_.granularity();
    if (image.rows() % g != 0 || image.cols() % g != 0)
      throw std::invalid_argument("UNet: input " + std::to_string(image.rows()) + "x" +
                                  std::to_string(image.cols()) + " not divisible by " +
                                  std::to_string(g));
    const auto act = config_.activation;
    SegmenterRecord<Scalar> rec;
    Eigen::Index h = image.rows() / config_.input_pool;
    Eigen::Index w = image.cols() / config_.input_pool;
    const Eigen::Map<const Matrix> flat(image.data(), 1, image.size());
    rec.pooled_input = {h, w, nn::avg_pool<Scalar>(flat, image.rows(), image.cols(), config_.input_pool)};

    auto double_conv = [&](typename SegmenterRecord<Scalar>::Level& lvl, const Slot& s) {
      lvl.first = {h, w, nn::conv2d<Scalar>(lvl.input.values, h, w, params_[s.w1], params_[s.b1], 3)};
      nn::activate(lvl.first.values, act);
      lvl.second = {h, w, nn::conv2d<Scalar>(lvl.first.values, h, w, params_[s.w2], params_[s.b2], 3)};
      nn::activate(lvl.second.values, act);
    };

    const auto depth = static_cast<std::size_t>(config_.depth);
    rec.encoder.resize(depth);
    rec.decoder.resize(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      auto& lvl = rec.encoder[l];
      if (l == 0) {
        lvl.input = rec.pooled_input;
      } else {
        const auto& prev = rec.encoder[l - 1].second;
        lvl.input = {h / 2, w / 2, nn::avg_pool<Scalar>(prev.values, h, w, 2)};
        h /= 2;
        w /= 2;
      }
      double_conv(lvl, encoder_[l]);
    }
    const nn::Tensor<Scalar>* below = &rec.encoder[depth - 1].second;
    for (std::size_t l = depth - 1; l-- > 0;) {
      auto& lvl = rec.decoder[l];
      const auto& skip = rec.encoder[l].second;
      lvl.input = nn::Tensor<Scalar>::zeros(below->channels() + skip.channels(), h * 2, w * 2);
      lvl.input.values.topRows(below->channels()) =
          nn::upsample_nearest<Scalar>(below->values, h, w, 2);
      lvl.input.values.bottomRows(skip.channels()) = skip.values;
      h *= 2;
      w *= 2;
      double_conv(lvl, decoder_[l]);
      below = &lvl.second;
    }
    rec.logits = {h, w, nn::conv2d<Scalar>(below->values, h, w, params_[out_w_], params_[out_b_], 1)};
    return rec;
  }

  /// Returns parameter gradients for d(objective)/d(logits) at network resolution.
  ParameterSet<Scalar> backward(const SegmenterRecord<Scalar>& rec, const Matrix& grad_logits) const {
    const auto act = config_.activation;
    const auto rule = nn::ReluRule::kStandard;
    ParameterSet<Scalar> g = params_.zeros_like();
    const auto depth = static_cast<std::size_t>(config_.depth);
    Eigen::Index h = rec.logits.height;
    Eigen::Index w = rec.logits.width;

    auto double_conv_back = [&](const typename SegmenterRecord<Scalar>::Level& lvl, const Slot& s,
                                const Matrix& grad_second, bool want_input) {
      const Matrix gz2 = nn::activation_backward<Scalar>(lvl.second.values, grad_second, act, rule);
      const Matrix g1 = nn::conv2d_backward<Scalar>(lvl.first.values, h, w, params_[s.w2], 3, gz2,
                                                    &g[s.w2], &g[s.b2], true);
      const Matrix gz1 = nn::activation_backward<Scalar>(lvl.first.values, g1, act, rule);
      return nn::conv2d_backward<Scalar>(lvl.input.values, h, w, params_[s.w1], 3, gz1, &g[s.w1],
                                         &g[s.b1], want_input);
    };

    const auto& top = depth > 1 ? rec.decoder[0].second : rec.encoder[0].second;
    Matrix grad_cur = nn::conv2d_backward<Scalar>(top.values, h, w, params_[out_w_], 1, grad_logits,
                                                  &g[out_w_], &g[out_b_], true);
    std::vector<Matrix> grad_skip(depth);
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      const auto& lvl = rec.decoder[l];
      const Matrix gin = double_conv_back(lvl, decoder_[l], grad_cur, true);
      const Eigen::Index skip_c = rec.encoder[l].second.channels();
      const Eigen::Index up_c = gin.rows() - skip_c;
      grad_skip[l] = gin.bottomRows(skip_c);
      grad_cur = nn::upsample_nearest_backward<Scalar>(gin.topRows(up_c), h / 2, w / 2, 2);
      h /= 2;
      w /= 2;
    }
    // grad_cur now holds the bottleneck output gradient.
    for (std::size_t l = depth; l-- > 0;) {
      const auto& lvl = rec.encoder[l];
      Matrix grad_second = l + 1 == depth ? grad_cur : Matrix(grad_skip[l] + grad_cur);
      const Matrix gin = double_conv_back(lvl, encoder_[l], grad_second, l > 0);
      if (l > 0) {
        grad_cur = nn::avg_pool_backward<Scalar>(gin, h * 2, w * 2, 2);
        h *= 2;
        w *= 2;
      }
    }
    return g;
  }

 private:
  struct Slot {
    Eigen::Index w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  };

  Slot add_double(const std::string& name, Eigen::Index in_c, Eigen::Index out_c) {
    Slot s;
    s.w1 = params_.add(name + ".conv1.weight", out_c, in_c * 9);
    s.b1 = params_.add(name + ".conv1.bias", out_c, 1);
    s.w2 = params_.add(name + ".conv2.weight", out_c, out_c * 9);
    s.b2 = params_.add(name + ".conv2.bias", out_c, 1);
    return s;
  }

  void build_layout() {
    params_ = {};
    encoder_.clear();
    decoder_.clear();
    const auto depth = static_cast<std::size_t>(config_.depth);
    Eigen::Index in_c = 1;
    for (std::size_t l = 0; l < depth; ++l) {
      const Eigen::Index c = Eigen::Index{config_.base_channels} << l;
      encoder_.push_back(add_double("enc" + std::to_string(l), in_c, c));
      in_c = c;
    }
    decoder_.resize(depth);
    for (std::size_t l = depth - 1; l-- > 0;) {
      const Eigen::Index c = Eigen::Index{config_.base_channels} << l;
      decoder_[l] = add_double("dec" + std::to_string(l), in_c + c, c);
      in_c = c;
    }
    out_w_ = params_.add("out.weight", 1, in_c);
    out_b_ = params_.add("out.bias", 1, 1);
  }

  SegmenterConfig config_;
  ParameterSet<Scalar> params_;
  std::vector<Slot> encoder_;
  std::vector<Slot> decoder_;
  Eigen::Index out_w_ = 0, out_b_ = 0;
};

using SegmenterModel = UNet<float>;

/// Binary lung mask; values are 0 or 1.
struct LungMask {
  MaskRaster pixels;

  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

struct MaskPrediction {
  LungMask mask;
  RasterF probability;  // per-pixel probability at input resolution
  bool empty_mask = false;
};

inline constexpr float kMaskThreshold = 0.5f;

MaskPrediction predict_mask(const RasterF& image, const SegmenterModel& model);

/// 2|a & b| / (|a| + |b|); 1 when both masks are empty.
double dice(const LungMask& a, const LungMask& b);

/// Elementwise product; pixels outside the mask become exactly zero.
RasterF apply_mask(const RasterF& image, const LungMask& mask);

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                        : std::exp(v) / (Scalar(1) + std::exp(v));
}

}  // namespace cxr

#endif  // CXR_SEGMENTER_HPP
