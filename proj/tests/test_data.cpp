#include "doctest.h"
#include "oracles.hpp"

#include "cxr/data.hpp"
#include "cxr/image_io.hpp"

#include "cxr/rng.hpp"

#include <filesystem>
#include <numeric>
#include <fstream>
#include <map>
#include <set>

using namespace cxr;
namespace fs = std::filesystem;

namespace {

TrainingCorpus corpus_of(std::size_t normal, std::size_t covid, std::size_t pneumonia) {
  TrainingCorpus c;
  auto add = [&](Label l, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      LabeledSample s;
      s.label = l;
      s.partition = l == Label::kCovid ? Partition::kCovidAdded : Partition::kOriginal;
      s.image.source_id = to_string(l) + "-" + std::to_string(i);
      s.image.pixels = RasterF::Zero(4, 4);
      c.samples.push_back(std::move(s));
    }
  };
  add(Label::kNormal, normal);
  add(Label::kCovid, covid);
  add(Label::kNonCovidPneumonia, pneumonia);
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cxr_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("data_corpus") {
  TEST_CASE("preprocess is the identity on canonical images") {
    Rng rng(1);
    RasterF img(512, 512);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(rng.uniform());
    img(0, 0) = 0.0f;
    img(1, 1) = 1.0f;
    const auto out = preprocess(img, "x");
    CHECK(out.warnings.empty());
    CHECK((out.image.pixels == img).all());
    CHECK(out.image.source_id == "x");
  }

  TEST_CASE("preprocess flags constant input") {
    const auto out = preprocess(RasterF::Zero(1024, 1024));
    CHECK(out.image.pixels.rows() == 512);
    CHECK((out.image.pixels == 0.0f).all());
    REQUIRE(out.warnings.size() == 1);
    CHECK(out.warnings[0] == "constant_input");
  }

  TEST_CASE("preprocess of a 2x4 ramp spans [0,1] like a nearest resize") {
    RasterF img(2, 4);
    for (int i = 0; i < 8; ++i) img.data()[i] = static_cast<float>(i) / 7.0f;
    const auto out = preprocess(img);
    CHECK(out.image.pixels.rows() == 512);
    CHECK(out.image.pixels.cols() == 512);
    CHECK(out.image.pixels.minCoeff() == 0.0f);
    CHECK(out.image.pixels.maxCoeff() == 1.0f);
    // Padded to 4x4 then resized: the reference keeps the same extremes.
    std::vector<double> padded(16, 0.0);
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 4; ++c) padded[static_cast<std::size_t>((r + 1) * 4 + c)] = img(r, c);
    const auto ref = oracle::nearest(padded, 4, 4, 512);
    const double lo = *std::min_element(ref.begin(), ref.end());
    const double hi = *std::max_element(ref.begin(), ref.end());
    CHECK((hi - lo) > 0.0);
  }

  TEST_CASE("preprocess scales decoded images by bit depth") {
    DecodedImage raw{Raster<std::uint16_t>(2, 2), 8};
    raw.values << 0, 255, 128, 64;
    const auto out = preprocess(raw);
    CHECK(out.image.pixels.maxCoeff() == 1.0f);
    CHECK(out.image.pixels.minCoeff() == 0.0f);
  }

  TEST_CASE("split sizes follow floor-then-distribute") {
    CHECK(allocate_split(100, {0.8, 0.1, 0.1}) == std::array<std::size_t, 3>{80, 10, 10});
    CHECK(allocate_split(8, {0.5, 0.25, 0.25}) == std::array<std::size_t, 3>{4, 2, 2});
    CHECK(allocate_split(7, {0.5, 0.25, 0.25}) == std::array<std::size_t, 3>{3, 2, 2});

    const auto r = split_dataset(corpus_of(100, 0, 0), SplitRatios{}, 7);
    CHECK(r.split.train.size() == 80);
    CHECK(r.split.val.size() == 10);
    CHECK(r.split.test.size() == 10);
    CHECK(r.warnings.empty());

    const auto covid = split_dataset(corpus_of(0, 8, 0), default_split_ratios(), 7);
    CHECK(covid.split.train.size() == 4);
    CHECK(covid.split.val.size() == 2);
    CHECK(covid.split.test.size() == 2);

    const auto one = split_dataset(corpus_of(1, 0, 0), SplitRatios{}, 7);
    CHECK(one.split.train == std::vector<std::size_t>{0});
    CHECK(one.split.val.empty());
    CHECK(one.split.test.empty());
    CHECK(one.warnings.size() == 1);
  }

  TEST_CASE("splits are disjoint, exhaustive, stratified and seeded") {
    const auto corpus = corpus_of(50, 20, 30);
    const auto a = split_dataset(corpus, default_split_ratios(), 3);
    const auto b = split_dataset(corpus, default_split_ratios(), 3);
    CHECK(a.split.train == b.split.train);
    CHECK(a.split.test == b.split.test);
    std::set<std::size_t> all;
    for (const auto* part : {&a.split.train, &a.split.val, &a.split.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == corpus.size());
    std::map<Label, std::size_t> test_counts;
    for (auto i : a.split.test) ++test_counts[corpus.samples[i].label];
    CHECK(test_counts[Label::kNormal] == 5);
    CHECK(test_counts[Label::kCovid] == 5);
    CHECK(test_counts[Label::kNonCovidPneumonia] == 3);
    const auto c = split_dataset(corpus, default_split_ratios(), 4);
    CHECK(c.split.train != a.split.train);
  }

  TEST_CASE("balanced batches draw evenly from every group") {
    std::vector<std::size_t> big(1000), small(10);
    std::iota(big.begin(), big.end(), 0);
    std::iota(small.begin(), small.end(), 1000);
    const BalancedBatcher batcher({big, small}, 8, 7);
    const auto epoch = batcher.epoch(0);
    CHECK(epoch.size() == batcher.batches_per_epoch());
    CHECK(epoch.size() == 250);
    for (const auto& batch : epoch) {
      REQUIRE(batch.size() == 8);
      const auto minority = std::count_if(batch.begin(), batch.end(), [](auto i) { return i >= 1000; });
      CHECK(minority == 4);
    }
    CHECK(batcher.epoch(0) == epoch);
    CHECK(batcher.epoch(1) != epoch);
  }

  TEST_CASE("single-group batching is plain shuffling") {
    std::vector<std::size_t> g(10);
    std::iota(g.begin(), g.end(), 0);
    const BalancedBatcher batcher({g}, 4, 7);
    const auto epoch = batcher.epoch(0);
    REQUIRE(epoch.size() == 3);
    CHECK(epoch[2].size() == 2);
    std::vector<std::size_t> seen;
    for (const auto& b : epoch) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    CHECK(seen == g);
  }

  TEST_CASE("equal groups visit every sample exactly once per epoch") {
    const BalancedBatcher batcher({{0, 1, 2}, {3, 4, 5}, {6, 7, 8}}, 9, 7);
    for (std::size_t e = 0; e < 2; ++e) {
      const auto epoch = batcher.epoch(e);
      std::map<std::size_t, int> counts;
      for (const auto& b : epoch)
        for (auto i : b) ++counts[i];
      CHECK(counts.size() == 9);
      for (const auto& [i, n] : counts) CHECK(n == 1);
    }
  }

  TEST_CASE("synthetic corpus is deterministic and class-ordered") {
    SyntheticSpec empty;
    CHECK(generate_synthetic_corpus(empty).size() == 0);

    SyntheticSpec spec;
    spec.counts = {50, 20, 20};
    spec.seed = 7;
    const auto a = generate_synthetic_corpus(spec);
    const auto b = generate_synthetic_corpus(spec);
    REQUIRE(a.size() == 90);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.samples[i].image.source_id == b.samples[i].image.source_id);
      CHECK((a.samples[i].image.pixels == b.samples[i].image.pixels).all());
      CHECK((*a.samples[i].truth_mask == *b.samples[i].truth_mask).all());
    }
    std::array<double, 3> sum{}, count{};
    for (const auto& s : a.samples) {
      const auto& m = *s.truth_mask;
      const auto idx = static_cast<std::size_t>(s.label);
      sum[idx] += (s.image.pixels.cast<double>() * m.cast<double>()).sum();
      count[idx] += static_cast<double>(m.cast<int>().sum());
      CHECK(s.image.pixels.minCoeff() == 0.0f);
      CHECK(s.image.pixels.maxCoeff() == 1.0f);
      CHECK(s.image.pixels.rows() == 512);
      CHECK_NOTHROW(s.validate());
    }
    const double normal = sum[0] / count[0];
    const double covid = sum[1] / count[1];
    const double pneumonia = sum[2] / count[2];
    CHECK(normal < covid);
    CHECK(covid < pneumonia);
  }

  TEST_CASE("label and partition consistency") {
    LabeledSample s;
    s.label = Label::kCovid;
    s.partition = Partition::kOriginal;
    CHECK_THROWS(s.validate());
    CHECK(parse_label("COVID") == Label::kCovid);
    CHECK(parse_label("Pneumonia") == Label::kNonCovidPneumonia);
    CHECK_FALSE(parse_label("tb").has_value());
  }

  TEST_CASE("manifest loading reports per-row errors") {
    const auto dir = scratch_dir("manifest");
    SyntheticSpec spec;
    spec.counts = {1, 1, 0};
    spec.image_size = 64;
    write_corpus(generate_synthetic_corpus(spec), dir);
    const auto roundtrip = load_manifest(dir / "manifest.csv");
    CHECK(roundtrip.errors.empty());
    REQUIRE(roundtrip.corpus.size() == 2);
    CHECK(roundtrip.corpus.samples[0].truth_mask.has_value());

    {
      std::ofstream out(dir / "header_only.csv");
      out << kManifestHeader << "\n";
    }
    const auto header_only = load_manifest(dir / "header_only.csv");
    CHECK(header_only.corpus.size() == 0);
    CHECK(header_only.errors.empty());

    const auto first = roundtrip.corpus.samples[0].image.source_id;
    const auto second = roundtrip.corpus.samples[1].image.source_id;
    {
      std::ofstream out(dir / "three.csv");
      out << kManifestHeader << "\n";
      out << "a,images/" << first << ".png,normal,original,2020-01-02,,\n";
      out << "b,images/missing.png,pneumonia,original,,,\n";
      out << "c,images/" << second << ".png,covid,,2020-01-14,2020-01-10,2020-01-31\n";
    }
    const auto three = load_manifest(dir / "three.csv");
    CHECK(three.corpus.size() == 2);
    REQUIRE(three.errors.size() == 1);
    CHECK(three.errors[0].row == 2);
    const auto& covid = three.corpus.samples[1];
    CHECK(covid.label == Label::kCovid);
    CHECK(covid.partition == Partition::kCovidAdded);
    CHECK(format_date(*covid.rtpcr_confirm_date) == "2020-01-31");
    fs::remove_all(dir);
  }

  TEST_CASE("16-bit PNG round trip is exact") {
    Raster<std::uint16_t> v(3, 5);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<std::uint16_t>(i * 4000);
    const auto bytes = encode_png_gray16(v);
    const auto decoded = decode_image(bytes);
    CHECK(decoded.bit_depth == 16);
    CHECK((decoded.values == v).all());
    CHECK_THROWS_AS(decode_image(std::vector<std::uint8_t>{1, 2, 3, 4}), ImageDecodeError);
  }
}
