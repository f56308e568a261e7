#include "cxr/pipeline.hpp"

#include <chrono>
#include <fstream>

namespace cxr {

using nlohmann::json;

void PipelineConfig::validate() const {
  data.validate();
  segmenter.validate();
  stage2_model.validate();
  stage3_model.validate();
  segmenter_train.validate();
  stage2_train.validate();
  stage3_train.validate();
  if (segmenter_val_fraction < 0 || segmenter_val_fraction >= 1)
    throw std::invalid_argument("segmenter_val_fraction must be in [0,1)");
  if (stage2_model.classes != 2 || stage3_model.classes != 2)
    throw std::invalid_argument("stage classifiers are binary");
}

PipelineConfig default_pipeline_config() {
  PipelineConfig c;
  c.data.counts = {80, 48, 80};
  c.data.seed = 7;
  c.segmenter.base_channels = 8;
  c.segmenter.seed = 101;
  c.segmenter_train.stage = 1;
  c.segmenter_train.epochs = 12;
  c.segmenter_train.batch_size = 4;
  c.segmenter_train.learning_rate = 3e-3;
  c.segmenter_train.seed = 11;
  c.stage2_model.seed = 202;
  c.stage2_train.stage = 2;
  c.stage2_train.epochs = 12;
  c.stage2_train.seed = 12;
  c.stage3_model.seed = 303;
  c.stage3_train.stage = 3;
  c.stage3_train.epochs = 16;
  c.stage3_train.seed = 13;
  return c;
}

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json ratios_json(const SplitRatios& r) { return json::array({r.train, r.val, r.test}); }

SplitRatios ratios_from(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

json to_json(const SyntheticSpec& s) {
  return {{"counts", {{"normal", s.counts[0]}, {"covid", s.counts[1]}, {"pneumonia", s.counts[2]}}},
          {"image_size", s.image_size},
          {"seed", s.seed},
          {"blob_count", {s.blob_count_min, s.blob_count_max}},
          {"blob_radius", {s.blob_radius_min, s.blob_radius_max}},
          {"blob_intensity", {s.blob_intensity_min, s.blob_intensity_max}},
          {"covid_band_width", s.covid_band_width},
          {"covid_texture_frequency", s.covid_texture_frequency},
          {"covid_intensity", s.covid_intensity},
          {"noise_sigma", s.noise_sigma}};
}

SyntheticSpec synthetic_spec_from_json(const json& j, SyntheticSpec s) {
  if (j.contains("counts")) {
    const auto& c = j.at("counts");
    read_if(c, "normal", s.counts[0]);
    read_if(c, "covid", s.counts[1]);
    read_if(c, "pneumonia", s.counts[2]);
  }
  read_if(j, "image_size", s.image_size);
  read_if(j, "seed", s.seed);
  if (j.contains("blob_count")) {
    s.blob_count_min = j.at("blob_count").at(0).get<int>();
    s.blob_count_max = j.at("blob_count").at(1).get<int>();
  }
  if (j.contains("blob_radius")) {
    s.blob_radius_min = j.at("blob_radius").at(0).get<double>();
    s.blob_radius_max = j.at("blob_radius").at(1).get<double>();
  }
  if (j.contains("blob_intensity")) {
    s.blob_intensity_min = j.at("blob_intensity").at(0).get<double>();
    s.blob_intensity_max = j.at("blob_intensity").at(1).get<double>();
  }
  read_if(j, "covid_band_width", s.covid_band_width);
  read_if(j, "covid_texture_frequency", s.covid_texture_frequency);
  read_if(j, "covid_intensity", s.covid_intensity);
  read_if(j, "noise_sigma", s.noise_sigma);
  s.validate();
  return s;
}

json to_json(const PipelineConfig& c) {
  return {{"data", to_json(c.data)},
          {"split",
           {{"seed", c.split_seed},
            {"normal", ratios_json(c.split_ratios[0])},
            {"covid", ratios_json(c.split_ratios[1])},
            {"pneumonia", ratios_json(c.split_ratios[2])},
            {"segmenter_val_fraction", c.segmenter_val_fraction}}},
          {"stage1", {{"model", to_json(c.segmenter)}, {"train", to_json(c.segmenter_train)}}},
          {"stage2",
           {{"model", to_json(c.stage2_model)},
            {"train", to_json(c.stage2_train)},
            {"threshold", c.stage2_threshold}}},
          {"stage3",
           {{"model", to_json(c.stage3_model)},
            {"train", to_json(c.stage3_train)},
            {"threshold", c.stage3_threshold}}}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c = default_pipeline_config();
  if (j.contains("data")) c.data = synthetic_spec_from_json(j.at("data"), c.data);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    read_if(s, "seed", c.split_seed);
    if (s.contains("normal")) c.split_ratios[0] = ratios_from(s.at("normal"));
    if (s.contains("covid")) c.split_ratios[1] = ratios_from(s.at("covid"));
    if (s.contains("pneumonia")) c.split_ratios[2] = ratios_from(s.at("pneumonia"));
    read_if(s, "segmenter_val_fraction", c.segmenter_val_fraction);
  }
  auto merge = [](json base, const json& over) {
    base.merge_patch(over);
    return base;
  };
  if (j.contains("stage1")) {
    const auto& s = j.at("stage1");
    if (s.contains("model")) c.segmenter = segmenter_config_from_json(merge(to_json(c.segmenter), s.at("model")));
    if (s.contains("train"))
      c.segmenter_train = train_config_from_json(merge(to_json(c.segmenter_train), s.at("train")));
  }
  for (int stage : {2, 3}) {
    const std::string key = "stage" + std::to_string(stage);
    if (!j.contains(key)) continue;
    const auto& s = j.at(key);
    auto& model = stage == 2 ? c.stage2_model : c.stage3_model;
    auto& train = stage == 2 ? c.stage2_train : c.stage3_train;
    auto& threshold = stage == 2 ? c.stage2_threshold : c.stage3_threshold;
    if (s.contains("model")) model = classifier_config_from_json(merge(to_json(model), s.at("model")));
    if (s.contains("train")) train = train_config_from_json(merge(to_json(train), s.at("train")));
    read_if(s, "threshold", threshold);
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  return pipeline_config_from_json(json::parse(in));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> segmenter_split(
    const TrainingCorpus& corpus, const std::vector<std::size_t>& train, double val_fraction,
    std::uint64_t seed) {
  std::vector<std::size_t> with_mask;
  for (std::size_t i : train)
    if (corpus.samples.at(i).truth_mask) with_mask.push_back(i);
  std::sort(with_mask.begin(), with_mask.end(), [&](std::size_t a, std::size_t b) {
    return corpus.samples[a].image.source_id < corpus.samples[b].image.source_id;
  });
  Rng rng(Rng::derive(seed, 1000));
  rng.shuffle(with_mask);
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(with_mask.size()) * val_fraction + 1e-9));
  std::vector<std::size_t> val(with_mask.begin(), with_mask.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> fit(with_mask.begin() + static_cast<long>(n_val), with_mask.end());
  return {fit, val};
}

std::vector<SegmentationExample<float>> segmentation_examples(const TrainingCorpus& corpus,
                                                              const std::vector<std::size_t>& indices) {
  std::vector<SegmentationExample<float>> out;
  for (std::size_t i : indices) {
    const auto& s = corpus.samples.at(i);
    if (!s.truth_mask) throw std::invalid_argument("sample '" + s.image.source_id + "' has no mask");
    out.push_back({s.image.source_id, s.image.pixels, *s.truth_mask});
  }
  return out;
}

Stage1Result train_stage1(const TrainingCorpus& corpus, const DatasetSplit& split,
                          const PipelineConfig& config) {
  const auto [fit_idx, val_idx] =
      segmenter_split(corpus, split.train, config.segmenter_val_fraction, config.split_seed);
  const auto train = segmentation_examples(corpus, fit_idx);
  const auto val = segmentation_examples(corpus, val_idx);
  TrainConfig cfg = config.segmenter_train;
  cfg.stage = 1;
  auto fit = fit_segmenter<float>(SegmenterModel(config.segmenter), train, &val, cfg);
  return {std::move(fit.model), std::move(fit.history)};
}

double segmenter_dice(const SegmenterModel& model, const TrainingCorpus& corpus,
                      const std::vector<std::size_t>& indices) {
  std::vector<SegmentationExample<float>> examples;
  for (std::size_t i : indices)
    if (corpus.samples.at(i).truth_mask)
      examples.push_back({corpus.samples[i].image.source_id, corpus.samples[i].image.pixels,
                          *corpus.samples[i].truth_mask});
  return mean_dice(model, examples);
}

EvalReport evaluate_classifier(const DenseClassifier<float>& model,
                               const ClassifierDataset<float>& data, double threshold) {
  const auto scores = score(model, data);
  const auto labels = labels_of(data);
  return evaluate(scores, labels, threshold);
}

PipelineResult run_pipeline(const TrainingCorpus& corpus, const PipelineConfig& config,
                            const ProgressFn& progress) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  auto split = split_dataset(corpus, config.split_ratios, config.split_seed);
  for (const auto& w : split.warnings) say("warning: " + w);

  say("stage 1: training segmenter");
  auto stage1 = train_stage1(corpus, split.split, config);
  const double dsc = segmenter_dice(stage1.model, corpus, split.split.test);
  say("stage 1: test DSC " + std::to_string(dsc));

  say("stage 2: masking images");
  const auto s2_train = stage2_dataset(corpus, split.split.train, &stage1.model);
  const auto s2_val = stage2_dataset(corpus, split.split.val, &stage1.model);
  const auto s2_test = stage2_dataset(corpus, split.split.test, &stage1.model);
  say("stage 2: training classifier");
  Stage2Options o2{config.stage2_model, config.stage2_train};
  auto stage2 = train_stage2(s2_train, &s2_val, stage1.model, o2);
  const auto r2 = evaluate_classifier(stage2.model, s2_test, config.stage2_threshold);
  say("stage 2: test AUC " + std::to_string(r2.auc.value_or(-1)));

  say("stage 3: building heatmap-weighted inputs");
  const auto p_train = pneumonia_indices(corpus, split.split.train);
  const auto s3_train = stage3_dataset(corpus, p_train, &stage1.model, stage2.model);
  const auto s3_val =
      stage3_dataset(corpus, pneumonia_indices(corpus, split.split.val), &stage1.model, stage2.model);
  const auto s3_test =
      stage3_dataset(corpus, pneumonia_indices(corpus, split.split.test), &stage1.model, stage2.model);
  say("stage 3: training classifier");
  Stage2Options o3{config.stage3_model, config.stage3_train};
  auto stage3 = train_stage3(s3_train, &s3_val, stage1.model, stage2.model, o3);
  const auto r3 = evaluate_classifier(stage3.model, s3_test, config.stage3_threshold);
  say("stage 3: test AUC " + std::to_string(r3.auc.value_or(-1)));

  PipelineResult out{std::move(split.split), std::move(stage1), std::move(stage2), std::move(stage3),
                     dsc, r2, r3, 0.0};
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace cxr
