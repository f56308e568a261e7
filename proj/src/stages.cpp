#include "cxr/stage3.hpp"

namespace cxr {

namespace {

const std::vector<std::string> kLabelGroups{"normal", "covid", "pneumonia"};

DenseClassifier<float> initial_model(const Stage2Options& o) {
  if (o.init) return *o.init;
  if (o.teacher) return *o.teacher;
  return DenseClassifier<float>(o.model);
}

void require_unchanged(std::uint64_t before, std::uint64_t after, const char* what) {
  if (before != after) throw std::logic_error(std::string(what) + " parameters changed during training");
}

}  // namespace

int relabel_binary(Label label) { return label == Label::kNormal ? 0 : 1; }

RasterF stage2_input(const RasterF& image, const SegmenterModel* segmenter) {
  if (!segmenter) return image;
  return apply_mask(image, predict_mask(image, *segmenter).mask);
}

ClassifierDataset<float> stage2_dataset(const TrainingCorpus& corpus,
                                        const std::vector<std::size_t>& indices,
                                        const SegmenterModel* segmenter) {
  ClassifierDataset<float> out;
  out.group_names = kLabelGroups;
  for (std::size_t i : indices) {
    const auto& s = corpus.samples.at(i);
    ClassifierExample<float> ex;
    ex.id = s.image.source_id;
    ex.input = stage2_input(s.image.pixels, segmenter);
    ex.label = relabel_binary(s.label);
    ex.original = s.partition == Partition::kOriginal;
    ex.group = static_cast<int>(s.label);
    out.items.push_back(std::move(ex));
  }
  return out;
}

StageTraining train_stage2(const ClassifierDataset<float>& train,
                           const ClassifierDataset<float>* val, const SegmenterModel& segmenter,
                           const Stage2Options& options) {
  TrainConfig cfg = options.train;
  cfg.stage = 2;
  const auto before = segmenter.parameters().checksum();
  auto fit = fit_classifier<float>(initial_model(options), train, val, cfg, options.teacher);
  require_unchanged(before, segmenter.parameters().checksum(), "stage-1");
  return {std::move(fit.model), std::move(fit.history)};
}

StageTraining train_stage2(const TrainingCorpus& corpus, const DatasetSplit& split,
                           const SegmenterModel& segmenter, const Stage2Options& options) {
  if (corpus.size() == 0) throw std::invalid_argument("train_stage2: empty corpus");
  const auto train = stage2_dataset(corpus, split.train, &segmenter);
  const auto val = stage2_dataset(corpus, split.val, &segmenter);
  return train_stage2(train, &val, segmenter, options);
}

Stage2Output classify_stage2(const RasterF& masked, const DenseClassifier<float>& model,
                             float threshold) {
  const auto rec = model.forward(masked);
  Stage2Output out;
  out.prob_pneumonia = positive_probability(rec.logits);
  out.threshold = threshold;
  out.decision = out.prob_pneumonia >= threshold;
  out.heatmap = cam(rec, model, 1, 2);
  return out;
}

Stage2Output screen_stage2(const RasterF& image, const SegmenterModel& segmenter,
                           const DenseClassifier<float>& model, float threshold) {
  return classify_stage2(stage2_input(image, &segmenter), model, threshold);
}

// ---------------------------------------------------------------------------

MaskedInput make_stage3_input(const CxrImage& image, const HeatMap& h2) {
  require_same_shape(image.pixels, h2.pixels, "make_stage3_input");
  return {image.pixels * h2.pixels, image.source_id, h2.method};
}

int relabel_stage3(Label label) {
  switch (label) {
    case Label::kCovid: return 1;
    case Label::kNonCovidPneumonia: return 0;
    case Label::kNormal: break;
  }
  throw std::invalid_argument("stage 3 only handles pneumonia samples; got a normal sample");
}

MaskedInput stage3_input(const CxrImage& image, const SegmenterModel* segmenter,
                         const DenseClassifier<float>& stage2) {
  CxrImage masked{stage2_input(image.pixels, segmenter), image.source_id, image.capture_date};
  const auto h2 = cam(stage2.forward(masked.pixels), stage2, 1, 2);
  return make_stage3_input(masked, h2);
}

std::vector<std::size_t> pneumonia_indices(const TrainingCorpus& corpus,
                                           const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> out;
  for (std::size_t i : indices)
    if (corpus.samples.at(i).label != Label::kNormal) out.push_back(i);
  return out;
}

ClassifierDataset<float> stage3_dataset(const TrainingCorpus& corpus,
                                        const std::vector<std::size_t>& indices,
                                        const SegmenterModel* segmenter,
                                        const DenseClassifier<float>& stage2) {
  ClassifierDataset<float> out;
  out.group_names = kLabelGroups;
  for (std::size_t i : indices) {
    const auto& s = corpus.samples.at(i);
    ClassifierExample<float> ex;
    ex.label = relabel_stage3(s.label);
    ex.id = s.image.source_id;
    ex.input = stage3_input(s.image, segmenter, stage2).pixels;
    ex.original = s.partition == Partition::kOriginal;
    ex.group = static_cast<int>(s.label);
    out.items.push_back(std::move(ex));
  }
  return out;
}

StageTraining train_stage3(const ClassifierDataset<float>& train,
                           const ClassifierDataset<float>* val, const SegmenterModel& segmenter,
                           const DenseClassifier<float>& stage2, const Stage2Options& options) {
  TrainConfig cfg = options.train;
  cfg.stage = 3;
  const auto seg_before = segmenter.parameters().checksum();
  const auto s2_before = stage2.parameters().checksum();
  auto fit = fit_classifier<float>(initial_model(options), train, val, cfg, options.teacher);
  require_unchanged(seg_before, segmenter.parameters().checksum(), "stage-1");
  require_unchanged(s2_before, stage2.parameters().checksum(), "stage-2");
  return {std::move(fit.model), std::move(fit.history)};
}

StageTraining train_stage3(const TrainingCorpus& corpus, const DatasetSplit& split,
                           const SegmenterModel& segmenter, const DenseClassifier<float>& stage2,
                           const Stage2Options& options) {
  for (std::size_t i : split.train)
    if (corpus.samples.at(i).label == Label::kNormal)
      throw std::invalid_argument("train_stage3: training corpus contains normal samples");
  const auto train = stage3_dataset(corpus, split.train, &segmenter, stage2);
  const auto val = stage3_dataset(corpus, pneumonia_indices(corpus, split.val), &segmenter, stage2);
  return train_stage3(train, &val, segmenter, stage2, options);
}

Stage3Output screen_stage3(const MaskedInput& masked, const DenseClassifier<float>& model,
                           float threshold) {
  const auto rec = model.forward(masked.pixels);
  Stage3Output out;
  out.prob_covid = positive_probability(rec.logits);
  out.threshold = threshold;
  out.decision = out.prob_covid >= threshold;
  out.gradcam = grad_cam(rec, model, 1, 3);
  out.guided = guided_grad_cam(rec, model, 1);
  return out;
}

}  // namespace cxr
