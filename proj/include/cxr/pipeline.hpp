// pipeline.hpp
//
// End-to-end desk-scale run: synthetic corpus, stratified split, three
// stages trained in order with upstream stages frozen, held-out evaluation.
// Shared by the command-line tool and the acceptance harness.
#ifndef CXR_PIPELINE_HPP
#define CXR_PIPELINE_HPP

#include "cxr/stage3.hpp"

#include <functional>

namespace cxr {

struct PipelineConfig {
  SyntheticSpec data;
  std::array<SplitRatios, 3> split_ratios = default_split_ratios();
  std::uint64_t split_seed = 7;
  double segmenter_val_fraction = 0.1;  // of the training split

  SegmenterConfig segmenter;
  TrainConfig segmenter_train;
  ClassifierConfig stage2_model;
  TrainConfig stage2_train;
  ClassifierConfig stage3_model;
  TrainConfig stage3_train;
  float stage2_threshold = kDefaultThreshold;
  float stage3_threshold = kDefaultThreshold;

  void validate() const;
};

/// Defaults used by configs/pilot.json.
PipelineConfig default_pipeline_config();

nlohmann::json to_json(const PipelineConfig& c);
/// Missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

/// Deterministic 90/10 carve-out of the training split for segmenter
/// validation. Only samples with a ground-truth mask are kept.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> segmenter_split(
    const TrainingCorpus& corpus, const std::vector<std::size_t>& train, double val_fraction,
    std::uint64_t seed);

std::vector<SegmentationExample<float>> segmentation_examples(const TrainingCorpus& corpus,
                                                              const std::vector<std::size_t>& indices);

using ProgressFn = std::function<void(const std::string&)>;

struct Stage1Result {
  SegmenterModel model;
  TrainHistory history;
};

Stage1Result train_stage1(const TrainingCorpus& corpus, const DatasetSplit& split,
                          const PipelineConfig& config);

/// Mean Dice of predicted against ground-truth masks over corpus[indices].
double segmenter_dice(const SegmenterModel& model, const TrainingCorpus& corpus,
                      const std::vector<std::size_t>& indices);

EvalReport evaluate_classifier(const DenseClassifier<float>& model,
                               const ClassifierDataset<float>& data, double threshold);

struct PipelineResult {
  DatasetSplit split;
  Stage1Result stage1;
  StageTraining stage2;
  StageTraining stage3;
  double stage1_test_dice = 0.0;
  EvalReport stage2_test;
  EvalReport stage3_test;
  double seconds = 0.0;
};

PipelineResult run_pipeline(const TrainingCorpus& corpus, const PipelineConfig& config,
                            const ProgressFn& progress = {});

}  // namespace cxr

#endif  // CXR_PIPELINE_HPP
