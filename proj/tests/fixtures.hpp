// fixtures.hpp
//
// Small models and datasets shared by the training, stage, cascade and
// service suites. Everything is deterministic in the seeds passed in.
#ifndef CXR_TESTS_FIXTURES_HPP
#define CXR_TESTS_FIXTURES_HPP

#include "cxr/cascade.hpp"
#include "cxr/image_io.hpp"
#include "cxr/trainer.hpp"

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

namespace fixture {

inline cxr::ClassifierConfig tiny_classifier(std::uint64_t seed, int stem_pool = 4) {
  cxr::ClassifierConfig c;
  c.stem_pool = stem_pool;
  c.stem_channels = 3;
  c.blocks = 1;
  c.layers_per_block = 1;
  c.growth = 2;
  c.transition_channels = 3;
  c.feature_channels = 4;
  c.seed = seed;
  return c;
}

inline cxr::SegmenterConfig tiny_segmenter(std::uint64_t seed, int input_pool = 4) {
  cxr::SegmenterConfig c;
  c.depth = 2;
  c.base_channels = 2;
  c.input_pool = input_pool;
  c.seed = seed;
  return c;
}

inline cxr::RasterF noise_image(Eigen::Index n, std::uint64_t seed) {
  cxr::Rng rng(seed);
  cxr::RasterF img(n, n);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(rng.uniform());
  return img;
}

/// Label-1 images carry a bright square in the upper-left quadrant.
inline cxr::ClassifierDataset<float> square_dataset(std::size_t n, std::uint64_t seed,
                                                    Eigen::Index size = 32) {
  cxr::ClassifierDataset<float> d;
  d.group_names = {"neg", "pos"};
  for (std::size_t i = 0; i < n; ++i) {
    cxr::ClassifierExample<float> ex;
    ex.id = "s" + std::to_string(1000 + i);
    ex.label = static_cast<int>(i % 2);
    ex.group = ex.label;
    ex.original = i % 3 != 0;
    ex.input = 0.2f * noise_image(size, seed * 131 + i);
    if (ex.label) ex.input.block(size / 8, size / 8, size / 4, size / 4).array() += 0.8f;
    d.items.push_back(std::move(ex));
  }
  return d;
}

inline cxr::TrainConfig quick_train(int epochs, std::uint64_t seed = 5) {
  cxr::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.learning_rate = 5e-3;
  t.seed = seed;
  return t;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cxr-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Writes stage1..stage3 bundles of tiny untrained models under `dir`.
inline void write_tiny_models(const std::filesystem::path& dir, std::uint64_t seed,
                              float stage2_bias_shift = 0.0f) {
  const cxr::TrainConfig t;
  const cxr::SegmenterModel seg(tiny_segmenter(seed, 8));
  cxr::DenseClassifier<float> s2(tiny_classifier(seed + 1, 8));
  s2.head_bias()(1) += stage2_bias_shift;
  const cxr::DenseClassifier<float> s3(tiny_classifier(seed + 2, 8));
  cxr::save_bundle(dir / "stage1", cxr::make_bundle(1, seg, t, {}));
  cxr::save_bundle(dir / "stage2", cxr::make_bundle(2, s2, t, {}));
  cxr::save_bundle(dir / "stage3", cxr::make_bundle(3, s3, t, {}));
}

inline std::vector<unsigned char> png_of(const cxr::RasterF& img) {
  return cxr::encode_png_gray8(cxr::to_gray8(img));
}

}  // namespace fixture

#endif  // CXR_TESTS_FIXTURES_HPP
