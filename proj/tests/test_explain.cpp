#include "doctest.h"
#include "oracles.hpp"

#include "cxr/explain.hpp"

#include <cmath>

using namespace cxr;

namespace {

ClassifierConfig small_config(std::uint64_t seed) {
  ClassifierConfig c;
  c.stem_pool = 2;
  c.stem_channels = 3;
  c.blocks = 2;
  c.layers_per_block = 2;
  c.growth = 2;
  c.transition_channels = 3;
  c.feature_channels = 4;
  c.seed = seed;
  return c;
}

RasterD random_image(Eigen::Index n, Rng& rng) {
  RasterD img(n, n);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
  return img;
}

// Record with a hand-built spatial map; only the fields CAM reads are set.
ForwardRecord<float> synthetic_record(int channels, Eigen::Index side, Eigen::Index input) {
  ForwardRecord<float> rec;
  rec.spatial = {side, side, nn::Matrix<float>::Zero(channels, side * side)};
  rec.pooled = nn::Vector<float>::Zero(channels);
  rec.input_height = input;
  rec.input_width = input;
  return rec;
}

}  // namespace

TEST_SUITE("explain") {
  TEST_CASE("one-hot CAM peaks inside the mapped 16x16 block") {
    ClassifierConfig cfg;  // default: 32x32 spatial map for 512 input
    DenseClassifier<float> model(cfg);
    model.head_weight().setZero();
    model.head_weight()(1, 5) = 1.0f;
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
      const auto i = static_cast<Eigen::Index>(rng.below(32));
      const auto j = static_cast<Eigen::Index>(rng.below(32));
      auto rec = synthetic_record(cfg.feature_channels, 32, 512);
      rec.spatial.values(5, i * 32 + j) = 1.0f;
      const auto h = cam(rec, model, 1);
      CHECK_FALSE(h.flat);
      CHECK(h.pixels.rows() == 512);
      CHECK(h.pixels.maxCoeff() == 1.0f);
      CHECK(h.pixels.minCoeff() == 0.0f);
      Eigen::Index r, c;
      h.pixels.maxCoeff(&r, &c);
      CHECK(r / 16 == i);
      CHECK(c / 16 == j);
      // Every pixel of the block mapped from (i,j) is within the oracle's values.
      std::vector<double> low(32 * 32, 0.0);
      low[static_cast<std::size_t>(i * 32 + j)] = 1.0;
      const auto up = oracle::upsample(low, 32, 512);
      const double peak = *std::max_element(up.begin(), up.end());
      for (Eigen::Index y = 0; y < 512; y += 37)
        for (Eigen::Index x = 0; x < 512; x += 41)
          CHECK(h.pixels(y, x) == doctest::Approx(up[static_cast<std::size_t>(y * 512 + x)] / peak).epsilon(1e-5));
    }
  }

  TEST_CASE("constant spatial maps give an all-ones heatmap") {
    ClassifierConfig cfg;
    DenseClassifier<float> model(cfg);
    auto rec = synthetic_record(cfg.feature_channels, 32, 512);
    rec.spatial.values.setConstant(0.3f);
    const auto h = cam(rec, model, 1);
    CHECK(h.flat);
    CHECK((h.pixels == 1.0f).all());
    CHECK(h.method == HeatMethod::kCam);
    CHECK(h.stage == 2);
    CHECK_THROWS_AS(cam(rec, model, 2), std::out_of_range);
    CHECK_THROWS_AS(cam(rec, model, -1), std::out_of_range);
  }

  TEST_CASE("CAM uses only the target head row") {
    Rng rng(9);
    DenseClassifier<double> model(small_config(3));
    const auto rec = model.forward(random_image(16, rng));
    const auto before = cam(rec, model, 1);
    model.head_weight().row(0) *= -1.0;
    const auto after = cam(rec, model, 1);
    CHECK((before.pixels == after.pixels).all());
  }

  TEST_CASE("CAM is linear in the head row before normalisation") {
    Rng rng(10);
    DenseClassifier<double> model(small_config(5));
    const auto rec = model.forward(random_image(16, rng));
    const nn::Matrix<double> w = model.head_weight();
    const auto l1 = cam_low_res(rec, model, 1);
    model.head_weight().row(1) = w.row(0);
    const auto l0 = cam_low_res(rec, model, 1);
    model.head_weight().row(1) = w.row(0) + w.row(1);
    const auto sum = cam_low_res(rec, model, 1);
    CHECK(((sum - (l0 + l1)).abs() < 1e-12).all());
  }

  TEST_CASE("GradCAM equals ReLU-clipped CAM for a GAP-linear head") {
    Rng rng(11);
    for (int draw = 0; draw < 100; ++draw) {
      DenseClassifier<double> model(small_config(100 + static_cast<std::uint64_t>(draw)));
      for (Eigen::Index i = 0; i < model.head_weight().size(); ++i)
        model.head_weight().data()[i] = rng.uniform(-1.0, 1.0);
      const auto rec = model.forward(random_image(16, rng));
      const RasterD g = grad_cam_low_res(rec, model, 1);
      CHECK(g.minCoeff() >= 0.0);
      const RasterD clipped = cam_low_res(rec, model, 1).cwiseMax(0.0);
      const auto hg = finish_heatmap<double>(g, 16, 16, 3, HeatMethod::kGradCam);
      const auto hc = finish_heatmap<double>(clipped, 16, 16, 3, HeatMethod::kCam);
      CHECK(hg.flat == hc.flat);
      CHECK((hg.pixels - hc.pixels).abs().maxCoeff() <= 1e-5);
      if (!hc.flat) {
        Eigen::Index r1, c1, r2, c2;
        g.maxCoeff(&r1, &c1);
        clipped.maxCoeff(&r2, &c2);
        CHECK(r1 == r2);
        CHECK(c1 == c2);
      }
    }
  }

  TEST_CASE("GradCAM channel weights match finite differences") {
    Rng rng(12);
    DenseClassifier<double> model(small_config(21));
    const auto image = random_image(16, rng);
    const auto rec = model.forward(image);
    nn::Vector<double> seed = nn::Vector<double>::Zero(2);
    seed(1) = 1.0;
    BackwardOptions opts;
    opts.parameter_grads = false;
    const auto grads = model.backward(rec, seed, opts);
    for (Eigen::Index k = 0; k < rec.spatial.values.rows(); ++k) {
      const double alpha = grads.spatial.row(k).mean();
      double fd_sum = 0.0;
      for (Eigen::Index p = 0; p < rec.spatial.values.cols(); ++p) {
        auto logit = [&](const std::vector<double>& x) {
          nn::Matrix<double> a = rec.spatial.values;
          a(k, p) += x[0];
          const nn::Vector<double> pooled = a.rowwise().mean();
          return (model.head_weight() * pooled + model.head_bias().col(0))(1);
        };
        fd_sum += oracle::central_difference(logit, {0.0}, 0);
      }
      const double fd = fd_sum / static_cast<double>(rec.spatial.values.cols());
      CHECK(oracle::relative_error(alpha, fd) <= 1e-3);
    }
  }

  TEST_CASE("zero target row gives a flat GradCAM") {
    Rng rng(13);
    DenseClassifier<double> model(small_config(22));
    model.head_weight().row(1).setZero();
    const auto h = grad_cam(random_image(16, rng), model, 1);
    CHECK(h.flat);
    CHECK((h.pixels == 1.0).all());
    CHECK(h.method == HeatMethod::kGradCam);
    CHECK(h.stage == 3);
  }

  TEST_CASE("guided ReLU rule on a four-unit fixture") {
    nn::Matrix<double> activated(1, 4), grad(1, 4);
    activated << 0.5, 0.0, 1.2, 0.3;
    grad << 1.0, 2.0, -0.7, 0.4;
    const auto guided =
        nn::activation_backward<double>(activated, grad, nn::Activation::kRelu, nn::ReluRule::kGuided);
    nn::Matrix<double> expected(1, 4);
    expected << 1.0, 0.0, 0.0, 0.4;
    CHECK(guided == expected);
    const auto standard =
        nn::activation_backward<double>(activated, grad, nn::Activation::kRelu, nn::ReluRule::kStandard);
    nn::Matrix<double> plain(1, 4);
    plain << 1.0, 0.0, -0.7, 0.4;
    CHECK(standard == plain);

    nn::Matrix<double> positive = grad.cwiseAbs();
    activated << 0.5, 0.1, 1.2, 0.3;
    CHECK(nn::activation_backward<double>(activated, positive, nn::Activation::kRelu,
                                          nn::ReluRule::kGuided) == positive);
  }

  TEST_CASE("guided backprop without ReLUs is the plain input gradient") {
    Rng rng(14);
    auto cfg = small_config(23);
    cfg.activation = nn::Activation::kIdentity;
    DenseClassifier<double> model(cfg);
    const auto image = random_image(16, rng);
    const auto rec = model.forward(image);
    nn::Vector<double> seed = nn::Vector<double>::Zero(2);
    seed(1) = 1.0;
    BackwardOptions opts;
    opts.parameter_grads = false;
    opts.input_grad = true;
    const RasterD plain = model.backward(rec, seed, opts).input;
    const auto guided = guided_backprop(rec, model, 1);
    CHECK(((guided.pixels - plain).abs() < 1e-12).all());
    CHECK(guided.display.abs().maxCoeff() == doctest::Approx(1.0));
  }

  TEST_CASE("combine_guided fixtures") {
    RasterD g(2, 2), c(2, 2);
    g << 1, -1, 2, 0;
    c << 0, 1, 1, 1;
    const auto out = combine_guided<double>(g, c);
    RasterD expected(2, 2);
    expected << 0, -1, 2, 0;
    CHECK((out.pixels == expected).all());
    CHECK(out.display(1, 0) == 1.0);
    CHECK(out.display(0, 1) == -0.5);

    const auto zero = combine_guided<double>(g, RasterD::Zero(2, 2));
    CHECK((zero.pixels == 0.0).all());
    CHECK((zero.display == 0.0).all());

    const auto scaled = combine_guided<double>(g, RasterD::Constant(2, 2, 0.25));
    Eigen::Index r1, c1, r2, c2;
    scaled.pixels.maxCoeff(&r1, &c1);
    g.maxCoeff(&r2, &c2);
    CHECK(r1 == r2);
    CHECK(c1 == c2);
    CHECK_THROWS(combine_guided<double>(g, RasterD::Zero(3, 3)));
  }

  TEST_CASE("heatmaps at full resolution are in [0,1] and hit both ends") {
    DenseClassifier<float> model(ClassifierConfig{});
    Rng rng(15);
    RasterF image(512, 512);
    for (Eigen::Index i = 0; i < image.size(); ++i) image.data()[i] = static_cast<float>(rng.uniform());
    const auto rec = model.forward(image);
    for (const auto& h : {cam(rec, model, 1), grad_cam(rec, model, 1)}) {
      CHECK(h.pixels.rows() == 512);
      CHECK(h.pixels.cols() == 512);
      CHECK(h.pixels.minCoeff() >= 0.0f);
      CHECK(h.pixels.maxCoeff() <= 1.0f);
      if (!h.flat) {
        CHECK(h.pixels.minCoeff() == 0.0f);
        CHECK(h.pixels.maxCoeff() == 1.0f);
      }
    }
    const auto gg = guided_grad_cam(rec, model, 1);
    CHECK(gg.pixels.rows() == 512);
  }

  TEST_CASE("literal reshape mode needs a square feature count") {
    ClassifierConfig cfg;  // 64 channels -> 8x8 grid
    DenseClassifier<float> model(cfg);
    auto rec = synthetic_record(cfg.feature_channels, 32, 512);
    rec.pooled.setLinSpaced(64, 0.0f, 1.0f);
    const auto low = cam_low_res(rec, model, 1, CamMode::kLiteralReshape);
    CHECK(low.rows() == 8);
    CHECK(cam(rec, model, 1, 2, CamMode::kLiteralReshape).pixels.rows() == 512);
    auto odd = synthetic_record(3, 32, 512);
    CHECK_THROWS(cam_low_res(odd, model, 1, CamMode::kLiteralReshape));
  }
}
