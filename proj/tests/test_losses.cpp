#include "doctest.h"
#include "oracles.hpp"

#include "cxr/losses.hpp"
#include "cxr/rng.hpp"

#include <cmath>

using namespace cxr;
using Vec = nn::Vector<double>;

namespace {

Vec pair(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec random_logits(Rng& rng, double scale = 4.0) {
  return pair(rng.uniform(-scale, scale), rng.uniform(-scale, scale));
}

std::vector<double> as_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_vec(const std::vector<double>& x) { return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size())); }

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("cross-entropy fixtures") {
    CHECK(cross_entropy(pair(3.0, 3.0), 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy(pair(-7.0, -7.0), 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy(pair(0.0, std::log(3.0)), 1) == doctest::Approx(0.287682).epsilon(1e-6));
    CHECK(std::isfinite(cross_entropy(pair(1000.0, -1000.0), 1)));
    CHECK_THROWS(cross_entropy(pair(0.0, 0.0), 2));
  }

  TEST_CASE("distillation fixtures") {
    CHECK(distillation_loss(pair(0.0, std::log(3.0)), pair(0.0, 0.0)) ==
          doctest::Approx(0.143841).epsilon(1e-6));
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const Vec s = random_logits(rng, 10.0);
      const Vec t = random_logits(rng, 10.0);
      const double T = rng.uniform(0.5, 4.0);
      CHECK(distillation_loss(s, s, T) == 0.0);
      CHECK(distillation_loss(s, t, T) >= 0.0);
    }
    CHECK_THROWS(distillation_loss(pair(0, 0), Vec::Zero(3).eval()));
    CHECK_THROWS(distillation_loss(pair(0, 0), pair(0, 0), 0.0));
  }

  TEST_CASE("loss gradients match finite differences") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const Vec z = random_logits(rng);
      const Vec t = random_logits(rng);
      const int label = static_cast<int>(rng.below(2));
      const double T = rng.uniform(0.5, 3.0);
      const Vec g_ce = cross_entropy_grad(z, label);
      const Vec g_kl = distillation_grad(z, t, T);
      for (std::size_t i = 0; i < 2; ++i) {
        const double fd_ce = oracle::central_difference(
            [&](const std::vector<double>& x) { return cross_entropy(from_vec(x), label); }, as_vec(z), i);
        const double fd_kl = oracle::central_difference(
            [&](const std::vector<double>& x) { return distillation_loss(from_vec(x), t, T); }, as_vec(z), i);
        CHECK(oracle::relative_error(g_ce(static_cast<Eigen::Index>(i)), fd_ce) <= 1e-6);
        CHECK(oracle::relative_error(g_kl(static_cast<Eigen::Index>(i)), fd_kl, 1e-6) <= 1e-3);
      }
    }
  }

  TEST_CASE("combined loss with lambda 0 is mean cross-entropy") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<LossItem<double>> batch(1 + rng.below(16));
      double ce = 0.0;
      for (auto& item : batch) {
        item.logits = random_logits(rng);
        item.label = static_cast<int>(rng.below(2));
        item.original = rng.below(2) == 0;
        ce += cross_entropy(item.logits, item.label);
      }
      const auto loss = combined_loss<double>(batch, 0.0);
      CHECK(std::abs(loss.value - ce / static_cast<double>(batch.size())) <= 1e-9);
    }
  }

  TEST_CASE("combined loss hand assembly") {
    LossItem<double> o{pair(0.0, std::log(3.0)), 1, true, pair(0.0, 0.0)};
    LossItem<double> c{pair(1.0, -1.0), 0, false, std::nullopt};
    const double a = cross_entropy(o.logits, 1);
    const double b = distillation_loss(o.logits, *o.teacher_logits);
    const double cc = cross_entropy(c.logits, 0);
    const std::vector<LossItem<double>> batch{o, c};
    CHECK(combined_loss<double>(batch, 2.0).value == doctest::Approx((a + cc + 2 * b) / 2).epsilon(1e-12));

    // Only D_c items: the KL term is an empty sum and no teacher is needed.
    const std::vector<LossItem<double>> dc{c, c};
    CHECK(combined_loss<double>(dc, 5.0).value == doctest::Approx(cc).epsilon(1e-12));

    LossItem<double> missing = o;
    missing.teacher_logits.reset();
    const std::vector<LossItem<double>> bad{missing};
    CHECK_THROWS(combined_loss<double>(bad, 1.0));
    CHECK_NOTHROW(combined_loss<double>(bad, 0.0));
    CHECK_THROWS(combined_loss<double>(batch, -1.0));
    CHECK_THROWS(combined_loss<double>(std::vector<LossItem<double>>{}, 0.0));
  }

  TEST_CASE("combined loss is nondecreasing in lambda and its gradient matches") {
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<LossItem<double>> batch(4);
      for (auto& item : batch) {
        item.logits = random_logits(rng);
        item.label = static_cast<int>(rng.below(2));
        item.original = rng.below(2) == 0;
        item.teacher_logits = random_logits(rng);
      }
      const double T = rng.uniform(0.5, 2.0);
      double prev = -1.0;
      for (double lambda : {0.0, 0.5, 1.0, 2.0, 10.0}) {
        const double v = combined_loss<double>(batch, lambda, T).value;
        CHECK(v >= prev);
        prev = v;
      }
      const auto loss = combined_loss<double>(batch, 1.5, T);
      for (std::size_t k = 0; k < batch.size(); ++k)
        for (std::size_t i = 0; i < 2; ++i) {
          const double fd = oracle::central_difference(
              [&](const std::vector<double>& x) {
                auto copy = batch;
                copy[k].logits = from_vec(x);
                return combined_loss<double>(copy, 1.5, T).value;
              },
              as_vec(batch[k].logits), i);
          CHECK(oracle::relative_error(loss.grad_logits[k](static_cast<Eigen::Index>(i)), fd, 1e-6) <= 1e-3);
        }
    }
  }
}
