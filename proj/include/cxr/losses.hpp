// losses.hpp
//
// Cross-entropy, distillation divergence and the incremental objective
//
//   L = (1/|B|) * ( sum_{i in B} CE_i + lambda * sum_{i in B, i in D_o} T^2 * KL_i )
//
// evaluated per batch, with analytic gradients with respect to the logits.
#ifndef CXR_LOSSES_HPP
#define CXR_LOSSES_HPP

#include "cxr/tensor.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cxr {

template <typename Scalar>
nn::Vector<Scalar> log_softmax(const nn::Vector<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

template <typename Scalar>
Scalar cross_entropy(const nn::Vector<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  return -log_softmax(logits)(label);
}

template <typename Scalar>
nn::Vector<Scalar> cross_entropy_grad(const nn::Vector<Scalar>& logits, int label) {
  nn::Vector<Scalar> g = log_softmax(logits).array().exp().matrix();
  g(label) -= Scalar(1);
  return g;
}

/// KL(softmax(teacher/T) || softmax(student/T)).
template <typename Scalar>
Scalar distillation_loss(const nn::Vector<Scalar>& student, const nn::Vector<Scalar>& teacher,
                         Scalar temperature = Scalar(1)) {
  if (student.size() != teacher.size())
    throw std::invalid_argument("distillation_loss: logit arity mismatch");
  if (!(temperature > Scalar(0)))
    throw std::invalid_argument("distillation_loss: temperature must be positive");
  const nn::Vector<Scalar> lt = log_softmax<Scalar>(teacher / temperature);
  const nn::Vector<Scalar> ls = log_softmax<Scalar>(student / temperature);
  Scalar kl(0);
  for (Eigen::Index k = 0; k < lt.size(); ++k) {
    const Scalar p = std::exp(lt(k));
    if (p > Scalar(0)) kl += p * (lt(k) - ls(k));
  }
  return std::max(kl, Scalar(0));
}

/// Gradient of distillation_loss with respect to the student logits.
template <typename Scalar>
nn::Vector<Scalar> distillation_grad(const nn::Vector<Scalar>& student,
                                     const nn::Vector<Scalar>& teacher,
                                     Scalar temperature = Scalar(1)) {
  const nn::Vector<Scalar> ps = log_softmax<Scalar>(student / temperature).array().exp().matrix();
  const nn::Vector<Scalar> pt = log_softmax<Scalar>(teacher / temperature).array().exp().matrix();
  return (ps - pt) / temperature;
}

/// One batch member as seen by the incremental objective.
template <typename Scalar>
struct LossItem {
  nn::Vector<Scalar> logits;
  int label = 0;
  bool original = false;  // member of D_o
  std::optional<nn::Vector<Scalar>> teacher_logits;
};

template <typename Scalar>
struct CombinedLoss {
  Scalar value{};
  Scalar cross_entropy_sum{};
  Scalar distillation_sum{};
  std::vector<nn::Vector<Scalar>> grad_logits;  // d value / d logits, per item
};

template <typename Scalar>
CombinedLoss<Scalar> combined_loss(std::span<const LossItem<Scalar>> batch, Scalar lambda,
                                   Scalar temperature = Scalar(1)) {
  if (lambda < Scalar(0)) throw std::invalid_argument("combined_loss: lambda must be >= 0");
  if (batch.empty()) throw std::invalid_argument("combined_loss: empty batch");
  CombinedLoss<Scalar> out;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.size());
  const Scalar t2 = temperature * temperature;
  out.grad_logits.reserve(batch.size());
  for (const auto& item : batch) {
    out.cross_entropy_sum += cross_entropy(item.logits, item.label);
    nn::Vector<Scalar> g = cross_entropy_grad(item.logits, item.label);
    if (lambda > Scalar(0) && item.original) {
      if (!item.teacher_logits)
        throw std::invalid_argument("combined_loss: lambda > 0 requires teacher logits");
      const Scalar kl = distillation_loss(item.logits, *item.teacher_logits, temperature);
      out.distillation_sum += t2 * kl;
      g += lambda * t2 * distillation_grad(item.logits, *item.teacher_logits, temperature);
    }
    out.grad_logits.push_back(g * inv_n);
  }
  out.value = inv_n * (out.cross_entropy_sum + lambda * out.distillation_sum);
  return out;
}

}  // namespace cxr

#endif  // CXR_LOSSES_HPP
