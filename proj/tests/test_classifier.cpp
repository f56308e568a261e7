#include "doctest.h"
#include "oracles.hpp"

#include "cxr/classifier.hpp"
#include "cxr/losses.hpp"
#include "cxr/segmenter.hpp"

#include <cmath>

using namespace cxr;

namespace {

ClassifierConfig toy_config() {
  ClassifierConfig c;
  c.stem_pool = 2;
  c.stem_channels = 3;
  c.blocks = 2;
  c.layers_per_block = 2;
  c.growth = 2;
  c.transition_channels = 3;
  c.feature_channels = 3;
  c.seed = 11;
  return c;
}

RasterD random_image(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  RasterD img(n, n);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
  return img;
}

std::vector<double> flatten(const ParameterSet<double>& p) {
  std::vector<double> v;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& m = p[static_cast<Eigen::Index>(i)];
    v.insert(v.end(), m.data(), m.data() + m.size());
  }
  return v;
}

void unflatten(const std::vector<double>& v, ParameterSet<double>& p) {
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& m = p[static_cast<Eigen::Index>(i)];
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = v[k++];
  }
}

}  // namespace

TEST_SUITE("classifier_core") {

TEST_CASE("pre-pooling map is 32x32 for a 512 input and GAP matches spatial means") {
  ClassifierConfig cfg;
  cfg.seed = 3;
  DenseClassifier<float> model(cfg);
  RasterF img = random_image(512, 5).cast<float>();
  const auto rec = model.forward(img);
  CHECK(rec.spatial.height == 32);
  CHECK(rec.spatial.width == 32);
  CHECK(rec.pooled.size() == cfg.feature_channels);
  for (Eigen::Index k = 0; k < rec.pooled.size(); ++k)
    CHECK(std::abs(rec.pooled(k) - rec.spatial.values.row(k).mean()) <= 1e-6);
}

TEST_CASE("all-zero input with zero head weights yields the head bias") {
  DenseClassifier<double> model(toy_config());
  model.head_weight().setZero();
  model.head_bias() << 0.25, -1.5;
  const auto rec = model.forward(RasterD::Zero(16, 16));
  CHECK(rec.logits(0) == 0.25);
  CHECK(rec.logits(1) == -1.5);
}

TEST_CASE("softmax probabilities") {
  nn::Vector<double> tie(2);
  tie << 3.0, 3.0;
  CHECK(positive_probability(tie) == doctest::Approx(0.5).epsilon(1e-15));
  nn::Vector<double> l(2);
  l << 0.0, std::log(3.0);
  CHECK(positive_probability(l) == doctest::Approx(0.75).epsilon(1e-12));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    nn::Vector<double> z(2);
    z << rng.uniform(-50, 50), rng.uniform(-50, 50);
    const auto p = softmax(z);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("forward is deterministic") {
  DenseClassifier<float> model(ClassifierConfig{});
  RasterF img = random_image(512, 9).cast<float>();
  const auto a = model.forward(img);
  const auto b = model.forward(img);
  CHECK(a.logits == b.logits);
  CHECK(a.spatial.values == b.spatial.values);
}

TEST_CASE("input gradient of the positive logit matches central differences") {
  DenseClassifier<double> model(toy_config());
  const RasterD img = random_image(16, 21);
  const auto rec = model.forward(img);
  nn::Vector<double> seed = nn::Vector<double>::Zero(2);
  seed(1) = 1.0;
  BackwardOptions opts;
  opts.input_grad = true;
  opts.parameter_grads = false;
  const auto g = model.backward(rec, seed, opts);
  std::vector<double> x(img.data(), img.data() + img.size());
  auto f = [&](const std::vector<double>& v) {
    RasterD r = Eigen::Map<const RasterD>(v.data(), 16, 16);
    return model.forward(r).logits(1);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::relative_error(g.input.data()[i],
                                                   oracle::central_difference(f, x, i)));
  CHECK(worst <= 1e-3);
}

TEST_CASE("parameter gradient of the positive logit matches central differences") {
  DenseClassifier<double> model(toy_config());
  const RasterD img = random_image(16, 33);
  const auto rec = model.forward(img);
  nn::Vector<double> seed = nn::Vector<double>::Zero(2);
  seed(1) = 1.0;
  const auto g = model.backward(rec, seed);
  const auto analytic = flatten(g.params);
  auto theta = flatten(model.parameters());
  auto f = [&](const std::vector<double>& v) {
    DenseClassifier<double> m = model;
    unflatten(v, m.parameters());
    return m.forward(img).logits(1);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i)
    worst = std::max(worst, oracle::relative_error(analytic[i], oracle::central_difference(f, theta, i)));
  CHECK(worst <= 1e-3);
}

TEST_CASE("identity-activation config trains the same graph without ReLUs") {
  auto cfg = toy_config();
  cfg.activation = nn::Activation::kIdentity;
  DenseClassifier<double> model(cfg);
  const auto rec = model.forward(random_image(16, 2));
  CHECK((rec.spatial.values.array() < 0.0).any());
}

TEST_CASE("input not divisible by the reduction is rejected") {
  DenseClassifier<double> model(toy_config());
  CHECK_THROWS_AS(model.forward(RasterD::Zero(10, 10)), std::invalid_argument);
}

}  // TEST_SUITE

TEST_SUITE("segmenter") {

TEST_CASE("U-Net parameter gradients match central differences") {
  SegmenterConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 2;
  cfg.input_pool = 2;
  cfg.seed = 4;
  UNet<double> net(cfg);
  const RasterD img = random_image(16, 8);
  const auto rec = net.forward(img);
  // Objective: weighted sum of logits with fixed random weights.
  Rng rng(77);
  nn::Matrix<double> wts(1, rec.logits.values.cols());
  for (Eigen::Index i = 0; i < wts.size(); ++i) wts.data()[i] = rng.uniform(-1, 1);
  const auto g = net.backward(rec, wts);
  const auto analytic = flatten(g);
  auto theta = flatten(net.parameters());
  auto f = [&](const std::vector<double>& v) {
    UNet<double> m = net;
    unflatten(v, m.parameters());
    return m.forward(img).logits.values.cwiseProduct(wts).sum();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i)
    worst = std::max(worst, oracle::relative_error(analytic[i], oracle::central_difference(f, theta, i)));
  CHECK(worst <= 1e-3);
}

}  // TEST_SUITE
