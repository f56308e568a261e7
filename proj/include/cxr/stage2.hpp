// stage2.hpp
//
// Stage 2: normal versus pneumonia on lung-masked images. Produces the
// positive-class CAM that stage 3 uses to attenuate its input.
#ifndef CXR_STAGE2_HPP
#define CXR_STAGE2_HPP

#include "cxr/explain.hpp"
#include "cxr/segmenter.hpp"
#include "cxr/trainer.hpp"

#include <optional>

namespace cxr {

inline constexpr float kDefaultThreshold = 0.5f;

/// NORMAL -> 0; COVID and non-COVID pneumonia -> 1.
int relabel_binary(Label label);

struct Stage2Output {
  float prob_pneumonia = 0.0f;
  bool decision = false;  // prob_pneumonia >= threshold
  float threshold = kDefaultThreshold;
  HeatMap heatmap;        // H2: CAM of the pneumonia class, computed for every image
};

/// Lung-masked copy of `image`, or the image itself when `segmenter` is null
/// (the no-mask ablation arm).
RasterF stage2_input(const RasterF& image, const SegmenterModel* segmenter);

/// Stage-2 examples for corpus[indices]; balanced groups are the three labels.
ClassifierDataset<float> stage2_dataset(const TrainingCorpus& corpus,
                                        const std::vector<std::size_t>& indices,
                                        const SegmenterModel* segmenter);

struct StageTraining {
  DenseClassifier<float> model;
  TrainHistory history;
};

struct Stage2Options {
  ClassifierConfig model;
  TrainConfig train;
  const DenseClassifier<float>* teacher = nullptr;  // incremental mode
  const DenseClassifier<float>* init = nullptr;     // defaults to the teacher when set
};

/// Trains on prepared examples. The segmenter is only read; its checksum is
/// compared before and after and a change raises std::logic_error.
StageTraining train_stage2(const ClassifierDataset<float>& train,
                           const ClassifierDataset<float>* val, const SegmenterModel& segmenter,
                           const Stage2Options& options);

/// Convenience form that masks corpus[split.train] / corpus[split.val] first.
StageTraining train_stage2(const TrainingCorpus& corpus, const DatasetSplit& split,
                           const SegmenterModel& segmenter, const Stage2Options& options);

/// Classifies an already-masked image.
Stage2Output classify_stage2(const RasterF& masked, const DenseClassifier<float>& model,
                             float threshold = kDefaultThreshold);

/// Full stage: segment, mask, classify, CAM.
Stage2Output screen_stage2(const RasterF& image, const SegmenterModel& segmenter,
                           const DenseClassifier<float>& model, float threshold = kDefaultThreshold);

}  // namespace cxr

#endif  // CXR_STAGE2_HPP
