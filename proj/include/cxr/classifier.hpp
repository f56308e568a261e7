// classifier.hpp
//
// Densely connected convolutional classifier shared by the pneumonia and
// COVID-19 stages. Layout for a 512x512 input with the default config:
//
//   avg-pool /8 -> 3x3 stem -> dense block -> transition (1x1 + pool /2)
//   -> dense block -> 1x1 projection to C channels -> GAP -> linear head
//
// which leaves a C x 32 x 32 spatial map in front of the pooling layer.
#ifndef CXR_CLASSIFIER_HPP
#define CXR_CLASSIFIER_HPP

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

struct ClassifierConfig {
  int stem_pool = 8;
  int stem_channels = 16;
  int blocks = 2;
  int layers_per_block = 3;
  int growth = 8;
  int transition_channels = 24;
  int feature_channels = 64;  // C; 1024 reproduces the full-width head
  int classes = 2;
  nn::Activation activation = nn::Activation::kRelu;
  std::uint64_t seed = 0;

  /// Downsampling factor between the input and the pre-pooling map.
  int reduction() const { return stem_pool * (1 << (blocks - 1)); }
  void validate() const;
};

/// Forward pass output: logits, pooled features f and the spatial map A.
template <typename Scalar>
struct ForwardRecord {
  nn::Vector<Scalar> logits;
  nn::Vector<Scalar> pooled;
  nn::Tensor<Scalar> spatial;

  // Cached activations for the backward pass.
  struct Block {
    nn::Tensor<Scalar> features;    // block input rows followed by each layer's output
    nn::Tensor<Scalar> transition;  // activated 1x1 output before pooling (empty for last)
  };
  nn::Tensor<Scalar> pooled_input;
  nn::Tensor<Scalar> stem;
  std::vector<Block> blocks;
  Eigen::Index input_height = 0;
  Eigen::Index input_width = 0;
};

struct BackwardOptions {
  nn::ReluRule relu_rule = nn::ReluRule::kStandard;
  bool parameter_grads = true;
  bool input_grad = false;
};

template <typename Scalar>
struct ClassifierGradients {
  ParameterSet<Scalar> params;       // empty unless requested
  Raster<Scalar> input;              // empty unless requested
  nn::Matrix<Scalar> spatial;        // d(objective)/dA, always filled
};

template <typename Scalar>
class DenseClassifier {
 public:
  using Matrix = nn::Matrix<Scalar>;
  using Vector = nn::Vector<Scalar>;

  DenseClassifier() = default;

  explicit DenseClassifier(const ClassifierConfig& config) : config_(config) {
    config_.validate();
    build_layout();
    Rng rng(config_.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (params_.name(idx).ends_with(".weight")) he_uniform(params_[idx], params_[idx].cols(), rng);
    }
  }

  DenseClassifier(const ClassifierConfig& config, ParameterSet<Scalar> params)
      : config_(config) {
    config_.validate();
    build_layout();
    if (!params.same_layout(params_))
      throw std::invalid_argument("DenseClassifier: parameter archive does not match config");
    params_ = std::move(params);
  }

  const ClassifierConfig& config() const { return config_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }
  ParameterSet<Scalar>& parameters() { return params_; }

  Matrix& head_weight() { return params_[head_w_]; }
  const Matrix& head_weight() const { return params_[head_w_]; }
  Matrix& head_bias() { return params_[head_b_]; }
  const Matrix& head_bias() const { return params_[head_b_]; }

  template <typename Other>
  DenseClassifier<Other> cast() const {
    return DenseClassifier<Other>(config_, params_.template cast<Other>());
  }

  ForwardRecord<Scalar> forward(const Raster<Scalar>& image) const {
    const int r = config_.reduction();
    if (image.rows() % r != 0 || image.cols() % r != 0)
      throw std::invalid_argument("DenseClassifier: input " + std::to_string(image.rows()) +
                                  "x" + std::to_string(image.cols()) +
                                  " not divisible by reduction " + std::to_string(r));
    const auto act = config_.activation;
    ForwardRecord<Scalar> rec;
    rec.input_height = image.rows();
    rec.input_width = image.cols();
    Eigen::Index h = image.rows() / config_.stem_pool;
    Eigen::Index w = image.cols() / config_.stem_pool;
    const Eigen::Map<const Matrix> flat(image.data(), 1, image.size());
    rec.pooled_input = {h, w, nn::avg_pool<Scalar>(flat, image.rows(), image.cols(), config_.stem_pool)};
    rec.stem = {h, w, nn::conv2d<Scalar>(rec.pooled_input.values, h, w, params_[stem_w_], params_[stem_b_], 3)};
    nn::activate(rec.stem.values, act);

    const nn::Tensor<Scalar>* block_in = &rec.stem;
    nn::Tensor<Scalar> pooled_transition;
    rec.blocks.resize(static_cast<std::size_t>(config_.blocks));
    for (int b = 0; b < config_.blocks; ++b) {
      auto& blk = rec.blocks[static_cast<std::size_t>(b)];
      const Eigen::Index c0 = block_in->channels();
      blk.features = nn::Tensor<Scalar>::zeros(c0 + config_.layers_per_block * config_.growth, h, w);
      blk.features.values.topRows(c0) = block_in->values;
      for (int l = 0; l < config_.layers_per_block; ++l) {
        const auto& layer = dense_[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
        const Eigen::Index cin = c0 + l * config_.growth;
        Matrix y = nn::conv2d<Scalar>(blk.features.values.topRows(cin), h, w, params_[layer.weight],
                                      params_[layer.bias], 3);
        nn::activate(y, act);
        blk.features.values.middleRows(cin, config_.growth) = y;
      }
      if (b + 1 < config_.blocks) {
        const auto& tr = transitions_[static_cast<std::size_t>(b)];
        blk.transition = {h, w, nn::conv2d<Scalar>(blk.features.values, h, w, params_[tr.weight], params_[tr.bias], 1)};
        nn::activate(blk.transition.values, act);
        pooled_transition = {h / 2, w / 2, nn::avg_pool<Scalar>(blk.transition.values, h, w, 2)};
        h /= 2;
        w /= 2;
        block_in = &pooled_transition;
      }
    }
    const auto& last = rec.blocks.back().features;
    rec.spatial = {h, w, nn::conv2d<Scalar>(last.values, h, w, params_[final_w_], params_[final_b_], 1)};
    nn::activate(rec.spatial.values, act);
    rec.pooled = nn::global_average_pool<Scalar>(rec.spatial.values);
    rec.logits = params_[head_w_] * rec.pooled + params_[head_b_].col(0);
    return rec;
  }

  /// Backpropagates d(objective)/d(logits) through a recorded forward pass.
  ClassifierGradients<Scalar> backward(const ForwardRecord<Scalar>& rec,
                                       const Vector& grad_logits,
                                       const BackwardOptions& opts = {}) const {
    const auto act = config_.activation;
    const auto rule = opts.relu_rule;
    ClassifierGradients<Scalar> out;
    ParameterSet<Scalar>* g = nullptr;
    if (opts.parameter_grads) {
      out.params = params_.zeros_like();
      g = &out.params;
    }
    auto grad_ptr = [&](Eigen::Index idx) -> Matrix* { return g ? &(*g)[idx] : nullptr; };

    if (g) {
      (*g)[head_w_].noalias() += grad_logits * rec.pooled.transpose();
      (*g)[head_b_].col(0) += grad_logits;
    }
    const Vector grad_pooled = params_[head_w_].transpose() * grad_logits;
    out.spatial = nn::global_average_pool_backward<Scalar>(grad_pooled, rec.spatial.pixels());
    if (!opts.parameter_grads && !opts.input_grad) return out;

    Eigen::Index h = rec.spatial.height;
    Eigen::Index w = rec.spatial.width;
    Matrix grad_z = nn::activation_backward<Scalar>(rec.spatial.values, out.spatial, act, rule);
    const auto& last = rec.blocks.back().features;
    Matrix grad_features = nn::conv2d_backward<Scalar>(
        last.values, h, w, params_[final_w_], 1, grad_z, grad_ptr(final_w_), grad_ptr(final_b_), true);

    const bool need_stem_input = opts.input_grad;
    Matrix grad_block_in;
    for (int b = config_.blocks - 1; b >= 0; --b) {
      const auto& blk = rec.blocks[static_cast<std::size_t>(b)];
      const Eigen::Index total = blk.features.channels();
      const Eigen::Index c0 = total - config_.layers_per_block * config_.growth;
      for (int l = config_.layers_per_block - 1; l >= 0; --l) {
        const auto& layer = dense_[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
        const Eigen::Index cin = c0 + l * config_.growth;
        const Matrix gz = nn::activation_backward<Scalar>(
            blk.features.values.middleRows(cin, config_.growth),
            grad_features.middleRows(cin, config_.growth), act, rule);
        const Matrix gin = nn::conv2d_backward<Scalar>(blk.features.values.topRows(cin), h, w,
                                                       params_[layer.weight], 3, gz,
                                                       grad_ptr(layer.weight), grad_ptr(layer.bias), true);
        grad_features.topRows(cin) += gin;
      }
      grad_block_in = grad_features.topRows(c0);
      if (b > 0) {
        const auto& prev = rec.blocks[static_cast<std::size_t>(b - 1)];
        const auto& tr = transitions_[static_cast<std::size_t>(b - 1)];
        const Eigen::Index ph = h * 2;
        const Eigen::Index pw = w * 2;
        const Matrix gt = nn::avg_pool_backward<Scalar>(grad_block_in, ph, pw, 2);
        const Matrix gzt = nn::activation_backward<Scalar>(prev.transition.values, gt, act, rule);
        grad_features = nn::conv2d_backward<Scalar>(prev.features.values, ph, pw, params_[tr.weight],
                                                    1, gzt, grad_ptr(tr.weight), grad_ptr(tr.bias), true);
        h = ph;
        w = pw;
      }
    }
    const Matrix gstem = nn::activation_backward<Scalar>(rec.stem.values, grad_block_in, act, rule);
    const Matrix gpool = nn::conv2d_backward<Scalar>(rec.pooled_input.values, h, w, params_[stem_w_], 3,
                                                     gstem, grad_ptr(stem_w_), grad_ptr(stem_b_),
                                                     need_stem_input);
    if (need_stem_input) {
      const Matrix gx = nn::avg_pool_backward<Scalar>(gpool, rec.input_height, rec.input_width,
                                                      config_.stem_pool);
      out.input = Eigen::Map<const Raster<Scalar>>(gx.data(), rec.input_height, rec.input_width);
    }
    return out;
  }

 private:
  struct ConvSlot {
    Eigen::Index weight = 0;
    Eigen::Index bias = 0;
  };

  ConvSlot add_conv(const std::string& name, Eigen::Index out_c, Eigen::Index in_c, int k) {
    ConvSlot s;
    s.weight = params_.add(name + ".weight", out_c, in_c * k * k);
    s.bias = params_.add(name + ".bias", out_c, 1);
    return s;
  }

  void build_layout() {
    params_ = {};
    dense_.clear();
    transitions_.clear();
    auto stem = add_conv("stem", config_.stem_channels, 1, 3);
    stem_w_ = stem.weight;
    stem_b_ = stem.bias;
    Eigen::Index channels = config_.stem_channels;
    for (int b = 0; b < config_.blocks; ++b) {
      std::vector<ConvSlot> layers;
      for (int l = 0; l < config_.layers_per_block; ++l) {
        layers.push_back(add_conv("block" + std::to_string(b) + ".layer" + std::to_string(l),
                                  config_.growth, channels + l * config_.growth, 3));
      }
      dense_.push_back(std::move(layers));
      channels += config_.layers_per_block * config_.growth;
      if (b + 1 < config_.blocks) {
        transitions_.push_back(
            add_conv("transition" + std::to_string(b), config_.transition_channels, channels, 1));
        channels = config_.transition_channels;
      }
    }
    auto fin = add_conv("features", config_.feature_channels, channels, 1);
    final_w_ = fin.weight;
    final_b_ = fin.bias;
    head_w_ = params_.add("head.weight", config_.classes, config_.feature_channels);
    head_b_ = params_.add("head.bias", config_.classes, 1);
  }

  ClassifierConfig config_;
  ParameterSet<Scalar> params_;
  std::vector<std::vector<ConvSlot>> dense_;
  std::vector<ConvSlot> transitions_;
  Eigen::Index stem_w_ = 0, stem_b_ = 0, final_w_ = 0, final_b_ = 0, head_w_ = 0, head_b_ = 0;
};

/// Numerically stable softmax.
template <typename Scalar>
nn::Vector<Scalar> softmax(const nn::Vector<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  nn::Vector<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

/// Positive-class (index 1) probability of a two-logit head.
template <typename Scalar>
Scalar positive_probability(const nn::Vector<Scalar>& logits) {
  return softmax(logits)(1);
}

template <typename Scalar>
Scalar predict_proba(const Raster<Scalar>& image, const DenseClassifier<Scalar>& model) {
  return positive_probability<Scalar>(model.forward(image).logits);
}

}  // namespace cxr

#endif  // CXR_CLASSIFIER_HPP
