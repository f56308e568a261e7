// data.hpp
//
// Corpus types, preprocessing, stratified splitting, balanced batching,
// manifest ingestion and the synthetic CXR generator.
#ifndef CXR_DATA_HPP
#define CXR_DATA_HPP

#include "cxr/image_io.hpp"
#include "cxr/raster.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cxr {

using Date = std::chrono::year_month_day;

std::optional<Date> parse_date(const std::string& iso);  // empty string -> nullopt
std::string format_date(const Date& d);

enum class Label { kNormal = 0, kCovid = 1, kNonCovidPneumonia = 2 };
enum class Partition { kOriginal, kCovidAdded };

inline constexpr std::array<Label, 3> kAllLabels{Label::kNormal, Label::kCovid,
                                                 Label::kNonCovidPneumonia};

std::string to_string(Label label);          // "normal" | "covid" | "pneumonia"
std::string to_string(Partition partition);  // "original" | "covid_added"
std::optional<Label> parse_label(std::string text);
std::optional<Partition> parse_partition(std::string text);

struct CxrImage {
  RasterF pixels;
  std::string source_id;
  std::optional<Date> capture_date;
};

struct LabeledSample {
  CxrImage image;
  Label label = Label::kNormal;
  Partition partition = Partition::kOriginal;
  std::optional<MaskRaster> truth_mask;  // ground-truth lung mask, when known
  std::optional<Date> symptom_onset_date;
  std::optional<Date> rtpcr_confirm_date;
  std::string case_id;  // groups captures of one patient; empty means source_id

  /// Throws std::invalid_argument if label and partition are inconsistent.
  void validate() const;
};

struct TrainingCorpus {
  std::vector<LabeledSample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t count(Partition p) const;
  std::size_t count(Label l) const;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitResult {
  DatasetSplit split;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------

struct PreprocessResult {
  CxrImage image;
  std::vector<std::string> warnings;  // "constant_input"
};

/// Canonicalises to 512x512 in [0,1]: scale by bit depth, centre-pad to a
/// square, bilinear resize, min-max normalise.
PreprocessResult preprocess(const DecodedImage& raw, std::string source_id = {});
PreprocessResult preprocess(const RasterF& raw, std::string source_id = {});

/// Per-class stratified split; sizes per class follow floor-then-distribute.
SplitResult split_dataset(const TrainingCorpus& corpus, const SplitRatios& ratios,
                          std::uint64_t seed);
/// As above with one ratio triple per label (indexed by Label value).
SplitResult split_dataset(const TrainingCorpus& corpus,
                          const std::array<SplitRatios, 3>& per_label, std::uint64_t seed);

/// Bin sizes produced by the floor-then-distribute rule.
std::array<std::size_t, 3> allocate_split(std::size_t n, const SplitRatios& ratios);

/// Split ratios used throughout the pipeline: 80/10/10 for normal and
/// pneumonia samples, 50/25/25 for the scarce COVID-19 samples.
std::array<SplitRatios, 3> default_split_ratios();

/// Emits batches in which every group is represented evenly. Groups smaller
/// than the largest one are revisited through repeated shuffled passes.
class BalancedBatcher {
 public:
  BalancedBatcher(std::vector<std::vector<std::size_t>> groups, std::size_t batch_size,
                  std::uint64_t seed, std::vector<std::string> group_names = {});

  std::vector<std::vector<std::size_t>> epoch(std::size_t index) const;
  std::size_t batches_per_epoch() const;

 private:
  std::vector<std::vector<std::size_t>> groups_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::array<std::size_t, 3> counts{0, 0, 0};  // indexed by Label value
  int image_size = kCanonicalSize;
  std::uint64_t seed = 7;
  int blob_count_min = 1;
  int blob_count_max = 4;
  double blob_radius_min = 18.0;  // pixels at 512
  double blob_radius_max = 40.0;
  double blob_intensity_min = 0.30;
  double blob_intensity_max = 0.50;
  double covid_band_width = 44.0;  // pixels at 512
  double covid_texture_frequency = 1.0 / 22.0;  // cycles per pixel at 512
  double covid_intensity = 0.16;
  double noise_sigma = 0.015;

  void validate() const;
};

/// Deterministic in (spec, seed). Samples carry ground-truth lung masks.
TrainingCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

/// Groups COVID samples into cases of `captures_per_case` consecutive
/// captures with onset, capture and RT-PCR confirmation dates drawn from the
/// seed. Other samples are left untouched.
void assign_synthetic_timelines(TrainingCorpus& corpus, std::uint64_t seed,
                                std::size_t captures_per_case = 2);

struct ManifestError {
  std::size_t row = 0;  // 1-based data row
  std::string message;
};

struct ManifestLoad {
  TrainingCorpus corpus;
  std::vector<ManifestError> errors;
};

inline constexpr const char* kManifestHeader =
    "source_id,path,label,partition,capture_date,symptom_onset_date,rtpcr_confirm_date";

/// Reads the CSV manifest. Paths are relative to the manifest's directory.
/// A sibling `<stem>.mask.png` is loaded as the ground-truth mask if present.
/// An optional trailing `case_id` column groups captures of one patient.
ManifestLoad load_manifest(const std::filesystem::path& path);

/// Writes 16-bit PNG images, 8-bit masks and `manifest.csv` under `dir`.
void write_corpus(const TrainingCorpus& corpus, const std::filesystem::path& dir);

std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace cxr

#endif  // CXR_DATA_HPP
