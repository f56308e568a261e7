#include "doctest.h"
#include "fixtures.hpp"

#include "cxr/cascade.hpp"
#include "cxr/render.hpp"

using namespace cxr;

namespace {

StageModels tiny_stage_models(std::uint64_t seed) {
  StageModels m{SegmenterModel(fixture::tiny_segmenter(seed)),
                DenseClassifier<float>(fixture::tiny_classifier(seed + 1)),
                DenseClassifier<float>(fixture::tiny_classifier(seed + 2)),
                {"stage1-a", "stage2-b", "stage3-c"}};
  return m;
}

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_SUITE("screening_service") {

TEST_CASE("gating table over random decision pairs") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const bool d2 = rng.below(2) == 1;
    const bool d3 = rng.below(2) == 1;
    const Label expected = !d2 ? Label::kNormal : (d3 ? Label::kCovid : Label::kNonCovidPneumonia);
    if (d2) {
      CHECK(gate(d2, d3) == expected);
    } else {
      CHECK(gate(d2, std::nullopt) == Label::kNormal);
      CHECK(gate(d2, d3) == Label::kNormal);
    }
  }
  CHECK_THROWS_AS(gate(true, std::nullopt), std::logic_error);
}

TEST_CASE("final class names round trip") {
  for (Label l : kAllLabels) CHECK(parse_final_class(final_class_name(l)) == l);
  CHECK(final_class_name(Label::kNonCovidPneumonia) == "NON_COVID_PNEUMONIA");
  CHECK_FALSE(parse_final_class("covid").has_value());
}

TEST_CASE("stage 3 runs exactly when stage 2 is positive") {
  auto models = tiny_stage_models(40);
  Rng rng(41);
  int positives = 0;
  for (int i = 0; i < 60; ++i) {
    const CxrImage img{fixture::noise_image(32, 200 + static_cast<std::uint64_t>(i)), "x", std::nullopt};
    const Thresholds t{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
    const auto p = run_cascade(img, models, t);
    CHECK(p.stage2.decision == (p.stage2.prob_pneumonia >= t.stage2));
    CHECK(p.stage3.has_value() == p.stage2.decision);
    CHECK(p.stage3_input.has_value() == p.stage2.decision);
    if (p.stage3) {
      ++positives;
      CHECK(p.final_class == (p.stage3->decision ? Label::kCovid : Label::kNonCovidPneumonia));
      CHECK((p.stage3_input->pixels.array() <= p.masked_image.array()).all());
    } else {
      CHECK(p.final_class == Label::kNormal);
    }
    CHECK(p.model_versions == models.versions);
  }
  CHECK(positives > 0);
  CHECK(positives < 60);
}

TEST_CASE("forced stage-2 outcomes") {
  auto models = tiny_stage_models(50);
  const CxrImage img{fixture::noise_image(32, 51), "x", std::nullopt};
  models.stage2.head_bias() << 50.0f, -50.0f;
  CHECK(run_cascade(img, models, {}).final_class == Label::kNormal);
  models.stage2.head_bias() << -50.0f, 50.0f;
  models.stage3.head_bias() << -50.0f, 50.0f;
  CHECK(run_cascade(img, models, {}).final_class == Label::kCovid);
  models.stage3.head_bias() << 50.0f, -50.0f;
  CHECK(run_cascade(img, models, {}).final_class == Label::kNonCovidPneumonia);
}

TEST_CASE("registry loads, validates stage tags and swaps atomically") {
  fixture::TempDir dir("registry");
  fixture::write_tiny_models(dir.path(), 60);
  std::vector<ModelRegistryEntry> entries;
  const auto models = ModelRegistry::load(stage_paths(dir.path()), &entries);
  REQUIRE(entries.size() == 3);
  for (int s = 1; s <= 3; ++s) {
    CHECK(entries[static_cast<std::size_t>(s - 1)].stage == s);
    CHECK(entries[static_cast<std::size_t>(s - 1)].version.starts_with("stage" + std::to_string(s) + "-"));
    CHECK(entries[static_cast<std::size_t>(s - 1)].version.size() == 19);
  }
  CHECK(models->versions[1] == entries[1].version);

  ModelRegistry reg;
  CHECK_FALSE(reg.ready());
  reg.install(models, entries);
  CHECK(reg.ready());
  const auto held = reg.snapshot();
  reg.install(ModelRegistry::load(stage_paths(dir.path())), entries);
  CHECK(held->versions == models->versions);

  auto swapped = stage_paths(dir.path());
  std::swap(swapped[1], swapped[2]);
  CHECK_THROWS_AS(ModelRegistry::load(swapped), std::runtime_error);
  CHECK_THROWS_AS(ModelRegistry::load(stage_paths(dir.path() / "missing")), std::runtime_error);
}

TEST_CASE("base64 and git blob hashes") {
  CHECK(base64_encode(bytes_of("hello")) == "aGVsbG8=");
  CHECK(base64_encode(bytes_of("")) == "");
  CHECK(base64_encode(bytes_of("ab")) == "YWI=");
  Rng rng(70);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<unsigned char> v(n);
    for (auto& b : v) b = static_cast<unsigned char>(rng.below(256));
    CHECK(base64_decode(base64_encode(v)) == v);
  }
  CHECK(git_blob_hash(bytes_of("")) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash(bytes_of("hello\n")) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("heatmap rendering") {
  HeatMap h;
  h.pixels = fixture::noise_image(20, 80);
  h.stage = 3;
  h.method = HeatMethod::kGradCam;
  const auto png = heatmap_png(h);
  const auto decoded = decode_image(png);
  CHECK(decoded.values.rows() == 20);
  CHECK(decoded.values.cols() == 20);
  const auto j = heatmap_json(h);
  CHECK(j["stage"] == 3);
  CHECK(j["method"] == "GRADCAM");
  CHECK(base64_decode(j["png_base64"].get<std::string>()) == png);
  CHECK(colormap("gray", 1.0f) == std::array<unsigned char, 3>{255, 255, 255});
  CHECK(colormap("jet", 0.0f)[2] > 100);
  CHECK(colormap("jet", 1.0f)[0] > 100);
  CHECK_THROWS_AS(colormap("viridis", 0.5f), std::invalid_argument);
  CHECK_THROWS_AS(overlay_png(h.pixels, h.pixels, "jet", 1.5f), std::invalid_argument);
  CHECK(decode_image(overlay_png(h.pixels, h.pixels, "jet", 0.4f)).values.rows() == 20);
}

}
