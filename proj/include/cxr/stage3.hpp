// stage3.hpp
//
// Stage 3: COVID-19 versus other pneumonia on the stage-2 heatmap-weighted
// image, with gradient-weighted and guided explanations.
#ifndef CXR_STAGE3_HPP
#define CXR_STAGE3_HPP

#include "cxr/stage2.hpp"

namespace cxr {

struct MaskedInput {
  RasterF pixels;  // x * H2, not renormalised
  std::string image_id;
  HeatMethod method = HeatMethod::kCam;
};

/// Pixelwise product of the image with the stage-2 heatmap.
MaskedInput make_stage3_input(const CxrImage& image, const HeatMap& h2);

/// COVID -> 1; non-COVID pneumonia -> 0; NORMAL throws std::invalid_argument.
int relabel_stage3(Label label);

struct Stage3Output {
  float prob_covid = 0.0f;
  bool decision = false;
  float threshold = kDefaultThreshold;
  HeatMap gradcam;  // H3, stage 3, GRADCAM
  GuidedActivation guided;
};

/// Stage-3 input for a raw image: lung mask, stage-2 CAM, product.
MaskedInput stage3_input(const CxrImage& image, const SegmenterModel* segmenter,
                         const DenseClassifier<float>& stage2);

/// Indices of pneumonia samples (COVID or non-COVID) among `indices`.
std::vector<std::size_t> pneumonia_indices(const TrainingCorpus& corpus,
                                           const std::vector<std::size_t>& indices);

/// Stage-3 examples; throws std::invalid_argument on a NORMAL sample.
ClassifierDataset<float> stage3_dataset(const TrainingCorpus& corpus,
                                        const std::vector<std::size_t>& indices,
                                        const SegmenterModel* segmenter,
                                        const DenseClassifier<float>& stage2);

/// Upstream models are only read; a checksum change raises std::logic_error.
StageTraining train_stage3(const ClassifierDataset<float>& train,
                           const ClassifierDataset<float>* val, const SegmenterModel& segmenter,
                           const DenseClassifier<float>& stage2, const Stage2Options& options);

StageTraining train_stage3(const TrainingCorpus& corpus, const DatasetSplit& split,
                           const SegmenterModel& segmenter, const DenseClassifier<float>& stage2,
                           const Stage2Options& options);

Stage3Output screen_stage3(const MaskedInput& masked, const DenseClassifier<float>& model,
                           float threshold = kDefaultThreshold);

}  // namespace cxr

#endif  // CXR_STAGE3_HPP
