// parameters.hpp
//
// Named parameter collections, the adaptive-moment optimiser and the binary
// parameter archive shared by every stage checkpoint.
#ifndef CXR_PARAMETERS_HPP
#define CXR_PARAMETERS_HPP

#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cxr {

template <typename Scalar>
class ParameterSet {
 public:
  using Matrix = nn::Matrix<Scalar>;

  Eigen::Index add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(std::move(name));
    values_.push_back(Matrix::Zero(rows, cols));
    return static_cast<Eigen::Index>(values_.size()) - 1;
  }

  std::size_t size() const { return values_.size(); }
  Matrix& operator[](Eigen::Index i) { return values_[static_cast<std::size_t>(i)]; }
  const Matrix& operator[](Eigen::Index i) const { return values_[static_cast<std::size_t>(i)]; }
  const std::string& name(Eigen::Index i) const { return names_[static_cast<std::size_t>(i)]; }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    for (auto& v : out.values_) v.setZero();
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const auto idx = out.add(names_[i], values_[i].rows(), values_[i].cols());
      out[idx] = values_[i].template cast<Other>();
    }
    return out;
  }

  Scalar squared_norm() const {
    Scalar s(0);
    for (const auto& v : values_) s += v.squaredNorm();
    return s;
  }

  void scale(Scalar factor) {
    for (auto& v : values_) v *= factor;
  }

  void add_scaled(const ParameterSet& other, Scalar factor) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += factor * other.values_[i];
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.allFinite()) return false;
    return true;
  }

  bool same_layout(const ParameterSet& other) const {
    if (other.values_.size() != values_.size()) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (names_[i] != other.names_[i] || values_[i].rows() != other.values_[i].rows() ||
          values_[i].cols() != other.values_[i].cols())
        return false;
    return true;
  }

  /// FNV-1a over the raw parameter bytes; used to prove that frozen stages
  /// are untouched by training.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& v : values_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(Scalar); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

  bool operator==(const ParameterSet& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (values_[i] != other.values_[i]) return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// He-uniform initialisation: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
void he_uniform(nn::Matrix<Scalar>& weight, Eigen::Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < weight.size(); ++i)
    weight.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
};

template <typename Scalar>
class Adam {
 public:
  Adam(const ParameterSet<Scalar>& params, AdamSettings settings)
      : settings_(settings), m_(params.zeros_like()), v_(params.zeros_like()) {}

  /// Applies one update. `grads` may be rescaled in place by the clip.
  void step(ParameterSet<Scalar>& params, ParameterSet<Scalar>& grads) {
    if (settings_.clip_norm > 0) {
      const double norm = std::sqrt(static_cast<double>(grads.squared_norm()));
      if (norm > settings_.clip_norm)
        grads.scale(static_cast<Scalar>(settings_.clip_norm / norm));
    }
    ++t_;
    const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(settings_.beta1);
    const auto b2 = static_cast<Scalar>(settings_.beta2);
    const auto step = static_cast<Scalar>(settings_.learning_rate / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(settings_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      auto& m = m_[idx];
      auto& v = v_[idx];
      const auto& g = grads[idx];
      m = b1 * m + (Scalar(1) - b1) * g;
      v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
      params[idx].array() -= step * m.array() / ((v.array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamSettings settings_;
  ParameterSet<Scalar> m_;
  ParameterSet<Scalar> v_;
  long t_ = 0;
};

// Archive layout (little endian): "CXRPARAM" magic, u32 version, u32 count,
// then per entry: u32 name length, name bytes, u64 rows, u64 cols,
// rows*cols float64 values in row-major order.
void write_parameter_archive(const std::filesystem::path& path,
                             const ParameterSet<double>& params);
ParameterSet<double> read_parameter_archive(const std::filesystem::path& path);

}  // namespace cxr

#endif  // CXR_PARAMETERS_HPP
