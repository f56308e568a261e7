// trainer.hpp
//
// Optimisation loops for all three stages and the checkpoint bundle format.
// Classifier stages minimise the incremental objective from losses.hpp over
// balanced batches; the segmenter minimises per-pixel BCE plus soft Dice.
#ifndef CXR_TRAINER_HPP
#define CXR_TRAINER_HPP

#include "cxr/classifier.hpp"
#include "cxr/data.hpp"
#include "cxr/evaluator.hpp"
#include "cxr/losses.hpp"
#include "cxr/segmenter.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace cxr {

struct TrainConfig {
  int stage = 2;
  int epochs = 20;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double lambda = 0.0;  // weight of the distillation term; 1 for incremental runs
  double temperature = 1.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_auc;
  std::optional<double> val_dice;
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;
  bool diverged = false;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierConfig& c);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SegmenterConfig& c);
SegmenterConfig segmenter_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainHistory& h);
TrainHistory train_history_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Classifier training

template <typename Scalar>
struct ClassifierExample {
  std::string id;
  Raster<Scalar> input;
  int label = 0;          // binary target of the stage
  bool original = false;  // member of D_o
  int group = 0;          // balanced-sampling group
};

template <typename Scalar>
struct ClassifierDataset {
  std::vector<ClassifierExample<Scalar>> items;
  std::vector<std::string> group_names;
};

template <typename Scalar>
struct ClassifierFit {
  DenseClassifier<Scalar> model;
  TrainHistory history;
};

/// Scores every item with the positive-class probability.
template <typename Scalar>
std::vector<double> score(const DenseClassifier<Scalar>& model,
                          const ClassifierDataset<Scalar>& data) {
  std::vector<double> out;
  out.reserve(data.items.size());
  for (const auto& it : data.items)
    out.push_back(static_cast<double>(predict_proba(it.input, model)));
  return out;
}

template <typename Scalar>
std::vector<int> labels_of(const ClassifierDataset<Scalar>& data) {
  std::vector<int> out;
  for (const auto& it : data.items) out.push_back(it.label);
  return out;
}

namespace detail {

/// Indices sorted by sample id, so training does not depend on input order.
template <typename Item>
std::vector<std::size_t> canonical_order(const std::vector<Item>& items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });
  return order;
}

template <typename Scalar>
BalancedBatcher classifier_batcher(const ClassifierDataset<Scalar>& data,
                                   const std::vector<std::size_t>& order, const TrainConfig& cfg) {
  std::map<int, std::vector<std::size_t>> by_group;
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    by_group[data.items[order[rank]].group].push_back(rank);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::string> names;
  for (auto& [g, members] : by_group) {
    groups.push_back(std::move(members));
    names.push_back(static_cast<std::size_t>(g) < data.group_names.size()
                        ? data.group_names[static_cast<std::size_t>(g)]
                        : std::to_string(g));
  }
  return BalancedBatcher(std::move(groups), std::max(cfg.batch_size, by_group.size()), cfg.seed,
                         std::move(names));
}

}  // namespace detail

/// Mean cross-entropy of a dataset.
template <typename Scalar>
double mean_cross_entropy(const DenseClassifier<Scalar>& model, const ClassifierDataset<Scalar>& data) {
  double total = 0.0;
  for (const auto& it : data.items)
    total += static_cast<double>(cross_entropy(model.forward(it.input).logits, it.label));
  return data.items.empty() ? 0.0 : total / static_cast<double>(data.items.size());
}

/// Objective summed over the whole dataset rather than per batch; used to
/// audit the per-batch estimator.
template <typename Scalar>
double corpus_objective(const DenseClassifier<Scalar>& model, const ClassifierDataset<Scalar>& data,
                        const DenseClassifier<Scalar>* teacher, double lambda, double temperature) {
  std::vector<LossItem<Scalar>> items;
  for (const auto& it : data.items) {
    LossItem<Scalar> li;
    li.logits = model.forward(it.input).logits;
    li.label = it.label;
    li.original = it.original;
    if (teacher && it.original) li.teacher_logits = teacher->forward(it.input).logits;
    items.push_back(std::move(li));
  }
  return static_cast<double>(combined_loss<Scalar>(items, static_cast<Scalar>(lambda),
                                                   static_cast<Scalar>(temperature)).value);
}

/// Trains `model` on `train`. With `teacher` set and lambda > 0 the
/// distillation term anchors D_o samples to the teacher's predictions.
/// On a non-finite loss the parameters from the last finished epoch are
/// restored and training stops with history.diverged set.
template <typename Scalar>
ClassifierFit<Scalar> fit_classifier(DenseClassifier<Scalar> model,
                                     const ClassifierDataset<Scalar>& train,
                                     const ClassifierDataset<Scalar>* val, const TrainConfig& cfg,
                                     const DenseClassifier<Scalar>* teacher = nullptr) {
  cfg.validate();
  if (cfg.lambda > 0 && !teacher)
    throw std::invalid_argument("fit_classifier: lambda > 0 requires a teacher model");
  if (teacher && teacher->config().classes != model.config().classes)
    throw std::invalid_argument("fit_classifier: teacher head arity differs from the student");
  ClassifierFit<Scalar> fit{std::move(model), {}};
  if (cfg.epochs == 0) return fit;
  if (train.items.empty()) throw std::invalid_argument("fit_classifier: empty training set");

  const auto order = detail::canonical_order(train.items);
  const BalancedBatcher batcher = detail::classifier_batcher(train, order, cfg);

  std::vector<std::optional<nn::Vector<Scalar>>> teacher_logits(train.items.size());
  if (teacher && cfg.lambda > 0)
    for (std::size_t i = 0; i < train.items.size(); ++i)
      if (train.items[i].original) teacher_logits[i] = teacher->forward(train.items[i].input).logits;

  AdamSettings adam_settings;
  adam_settings.learning_rate = cfg.learning_rate;
  adam_settings.clip_norm = cfg.clip_norm;
  Adam<Scalar> adam(fit.model.parameters(), adam_settings);
  const auto lambda = static_cast<Scalar>(cfg.lambda);
  const auto temperature = static_cast<Scalar>(cfg.temperature);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParameterSet<Scalar> snapshot = fit.model.parameters();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool diverged = false;
    for (const auto& batch : batcher.epoch(static_cast<std::size_t>(epoch))) {
      std::vector<ForwardRecord<Scalar>> records;
      std::vector<LossItem<Scalar>> items;
      records.reserve(batch.size());
      for (std::size_t rank : batch) {
        const std::size_t idx = order[rank];
        const auto& ex = train.items[idx];
        records.push_back(fit.model.forward(ex.input));
        LossItem<Scalar> li;
        li.logits = records.back().logits;
        li.label = ex.label;
        li.original = ex.original;
        li.teacher_logits = teacher_logits[idx];
        items.push_back(std::move(li));
      }
      const auto loss = combined_loss<Scalar>(items, lambda, temperature);
      if (!std::isfinite(static_cast<double>(loss.value))) {
        diverged = true;
        break;
      }
      ParameterSet<Scalar> grads = fit.model.parameters().zeros_like();
      for (std::size_t k = 0; k < records.size(); ++k)
        grads.add_scaled(fit.model.backward(records[k], loss.grad_logits[k]).params, Scalar(1));
      adam.step(fit.model.parameters(), grads);
      loss_sum += static_cast<double>(loss.value);
      ++batches;
    }
    if (diverged || !fit.model.parameters().all_finite()) {
      fit.model.parameters() = snapshot;
      fit.history.diverged = true;
      break;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    if (val && !val->items.empty()) {
      m.val_loss = mean_cross_entropy(fit.model, *val);
      const auto scores = score(fit.model, *val);
      const auto labels = labels_of(*val);
      const auto pos = std::count(labels.begin(), labels.end(), 1);
      if (pos > 0 && pos < static_cast<long>(labels.size())) m.val_auc = roc_auc(scores, labels);
    }
    fit.history.epochs.push_back(m);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Segmenter training

template <typename Scalar>
struct SegmentationExample {
  std::string id;
  Raster<Scalar> input;
  MaskRaster mask;
};

template <typename Scalar>
struct SegmenterFit {
  UNet<Scalar> model;
  TrainHistory history;
};

/// BCE (mean over pixels) + (1 - soft Dice) against a soft target.
/// Returns the loss and writes d loss / d logits into `grad`.
template <typename Scalar>
Scalar segmentation_loss(const nn::Matrix<Scalar>& logits, const nn::Matrix<Scalar>& target,
                         nn::Matrix<Scalar>& grad) {
  const Eigen::Index n = logits.size();
  nn::Matrix<Scalar> p(logits.rows(), logits.cols());
  Scalar bce(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar z = logits.data()[i];
    const Scalar t = target.data()[i];
    p.data()[i] = sigmoid(z);
    // log(1 + e^{-|z|}) + max(z,0) - z t
    bce += std::max(z, Scalar(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  const Scalar eps(1);
  const Scalar inter = (p.array() * target.array()).sum();
  const Scalar denom = p.sum() + target.sum() + eps;
  const Scalar dsc = (Scalar(2) * inter + eps) / denom;
  grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar pi = p.data()[i];
    const Scalar ti = target.data()[i];
    const Scalar d_dsc_dp = (Scalar(2) * ti * denom - (Scalar(2) * inter + eps)) / (denom * denom);
    grad.data()[i] = (pi - ti) * inv_n - d_dsc_dp * pi * (Scalar(1) - pi);
  }
  return bce * inv_n + (Scalar(1) - dsc);
}

/// Soft target at network resolution: the mask averaged over each pooled cell.
template <typename Scalar>
nn::Matrix<Scalar> segmentation_target(const MaskRaster& mask, int pool) {
  const Raster<Scalar> m = mask.cast<Scalar>();
  const Eigen::Map<const nn::Matrix<Scalar>> flat(m.data(), 1, m.size());
  return nn::avg_pool<Scalar>(flat, m.rows(), m.cols(), pool);
}

template <typename Scalar>
double mean_dice(const UNet<Scalar>& model, const std::vector<SegmentationExample<Scalar>>& data);

template <typename Scalar>
SegmenterFit<Scalar> fit_segmenter(UNet<Scalar> model,
                                   const std::vector<SegmentationExample<Scalar>>& train,
                                   const std::vector<SegmentationExample<Scalar>>* val,
                                   const TrainConfig& cfg) {
  cfg.validate();
  SegmenterFit<Scalar> fit{std::move(model), {}};
  if (cfg.epochs == 0) return fit;
  if (train.empty()) throw std::invalid_argument("fit_segmenter: empty training set");
  const int pool = fit.model.config().input_pool;
  const auto order = detail::canonical_order(train);
  std::vector<nn::Matrix<Scalar>> targets(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].mask.rows() != train[i].input.rows() || train[i].mask.cols() != train[i].input.cols())
      throw std::invalid_argument("fit_segmenter: mask shape differs for '" + train[i].id + "'");
    targets[i] = segmentation_target<Scalar>(train[i].mask, pool);
  }
  std::vector<std::size_t> ranks(train.size());
  std::iota(ranks.begin(), ranks.end(), 0);
  const BalancedBatcher batcher({ranks}, cfg.batch_size, cfg.seed, {"all"});
  AdamSettings adam_settings;
  adam_settings.learning_rate = cfg.learning_rate;
  adam_settings.clip_norm = cfg.clip_norm;
  Adam<Scalar> adam(fit.model.parameters(), adam_settings);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParameterSet<Scalar> snapshot = fit.model.parameters();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool diverged = false;
    for (const auto& batch : batcher.epoch(static_cast<std::size_t>(epoch))) {
      ParameterSet<Scalar> grads = fit.model.parameters().zeros_like();
      double batch_loss = 0.0;
      const Scalar inv_b = Scalar(1) / static_cast<Scalar>(batch.size());
      for (std::size_t rank : batch) {
        const std::size_t idx = order[rank];
        const auto rec = fit.model.forward(train[idx].input);
        nn::Matrix<Scalar> g;
        batch_loss += static_cast<double>(segmentation_loss<Scalar>(rec.logits.values, targets[idx], g));
        g *= inv_b;
        grads.add_scaled(fit.model.backward(rec, g), Scalar(1));
      }
      batch_loss /= static_cast<double>(batch.size());
      if (!std::isfinite(batch_loss)) {
        diverged = true;
        break;
      }
      adam.step(fit.model.parameters(), grads);
      loss_sum += batch_loss;
      ++batches;
    }
    if (diverged || !fit.model.parameters().all_finite()) {
      fit.model.parameters() = snapshot;
      fit.history.diverged = true;
      break;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    if (val && !val->empty()) {
      double vl = 0.0;
      for (const auto& ex : *val) {
        nn::Matrix<Scalar> g;
        vl += static_cast<double>(segmentation_loss<Scalar>(
            fit.model.forward(ex.input).logits.values, segmentation_target<Scalar>(ex.mask, pool), g));
      }
      m.val_loss = vl / static_cast<double>(val->size());
      m.val_dice = mean_dice(fit.model, *val);
    }
    fit.history.epochs.push_back(m);
  }
  return fit;
}

template <typename Scalar>
double mean_dice(const UNet<Scalar>& model, const std::vector<SegmentationExample<Scalar>>& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : data) {
    const auto rec = model.forward(ex.input);
    Raster<Scalar> low(rec.logits.height, rec.logits.width);
    for (Eigen::Index i = 0; i < low.size(); ++i) low.data()[i] = sigmoid(rec.logits.values.data()[i]);
    const Raster<Scalar> prob = resize_bilinear(low, ex.input.rows(), ex.input.cols());
    LungMask predicted{(prob >= Scalar(kMaskThreshold)).template cast<std::uint8_t>()};
    total += dice(predicted, LungMask{ex.mask});
  }
  return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Checkpoint bundles: <dir>/manifest.json, <dir>/params.bin and optionally
// <dir>/teacher.bin (frozen distillation teacher). Paths are relative.

struct CheckpointBundle {
  int stage = 1;
  std::string model_kind;  // "segmenter" | "classifier"
  nlohmann::json model_config;
  TrainConfig train_config;
  TrainHistory history;
  nlohmann::json metrics = nlohmann::json::object();
  ParameterSet<double> params;
  std::optional<ParameterSet<double>> teacher;
};

void save_bundle(const std::filesystem::path& dir, const CheckpointBundle& bundle);
CheckpointBundle load_bundle(const std::filesystem::path& dir);

SegmenterModel segmenter_from_bundle(const CheckpointBundle& bundle);
DenseClassifier<float> classifier_from_bundle(const CheckpointBundle& bundle);
CheckpointBundle make_bundle(int stage, const SegmenterModel& model, const TrainConfig& cfg,
                             const TrainHistory& history);
CheckpointBundle make_bundle(int stage, const DenseClassifier<float>& model, const TrainConfig& cfg,
                             const TrainHistory& history,
                             const DenseClassifier<float>* teacher = nullptr);

}  // namespace cxr

#endif  // CXR_TRAINER_HPP
