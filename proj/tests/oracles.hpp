// oracles.hpp
//
// Independent reference computations used by the test suites: central finite
// differences, brute-force pairwise AUC, pixel-count Dice and a plain
// bilinear upsampler. None of these call into the library code they check.
#ifndef CXR_TESTS_ORACLES_HPP
#define CXR_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double step = 1e-4) {
  const double orig = x[i];
  x[i] = orig + step;
  const double up = f(x);
  x[i] = orig - step;
  const double down = f(x);
  return (up - down) / (2.0 * step);
}

/// Relative error with a floor for entries that are both essentially zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double pixel_dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  long na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] ? 1 : 0;
    nb += b[i] ? 1 : 0;
    both += (a[i] && b[i]) ? 1 : 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Bilinear upsampling with half-pixel centres, written pixel by pixel.
inline std::vector<double> upsample(const std::vector<double>& src, int n, int out) {
  std::vector<double> dst(static_cast<std::size_t>(out) * out);
  const double scale = static_cast<double>(n) / out;
  auto at = [&](int y, int x) { return src[static_cast<std::size_t>(y) * n + x]; };
  for (int y = 0; y < out; ++y) {
    for (int x = 0; x < out; ++x) {
      double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, n - 1.0);
      double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, n - 1.0);
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
      const double wy = sy - y0, wx = sx - x0;
      dst[static_cast<std::size_t>(y) * out + x] =
          (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
          wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
    }
  }
  return dst;
}

/// Nearest-neighbour resize used to cross-check preprocessing extremes.
inline std::vector<double> nearest(const std::vector<double>& src, int rows, int cols, int out) {
  std::vector<double> dst(static_cast<std::size_t>(out) * out);
  for (int y = 0; y < out; ++y)
    for (int x = 0; x < out; ++x)
      dst[static_cast<std::size_t>(y) * out + x] =
          src[static_cast<std::size_t>(y * rows / out) * cols + x * cols / out];
  return dst;
}

}  // namespace oracle

#endif  // CXR_TESTS_ORACLES_HPP
