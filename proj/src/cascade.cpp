#include "cxr/cascade.hpp"

#include <cstdio>

namespace cxr {

Label gate(bool stage2_decision, std::optional<bool> stage3_decision) {
  if (!stage2_decision) return Label::kNormal;
  if (!stage3_decision) throw std::logic_error("gate: stage-2 positive without a stage-3 decision");
  return *stage3_decision ? Label::kCovid : Label::kNonCovidPneumonia;
}

std::string final_class_name(Label label) {
  switch (label) {
    case Label::kNormal: return "NORMAL";
    case Label::kCovid: return "COVID";
    case Label::kNonCovidPneumonia: return "NON_COVID_PNEUMONIA";
  }
  return "NORMAL";
}

std::optional<Label> parse_final_class(const std::string& text) {
  for (Label l : kAllLabels)
    if (final_class_name(l) == text) return l;
  return std::nullopt;
}

CascadePrediction run_cascade(const CxrImage& image, const StageModels& models,
                              const Thresholds& thresholds) {
  CascadePrediction out;
  out.model_versions = models.versions;
  out.lung = predict_mask(image.pixels, models.segmenter);
  out.empty_mask = out.lung.empty_mask;
  out.masked_image = apply_mask(image.pixels, out.lung.mask);
  out.stage2 = classify_stage2(out.masked_image, models.stage2, thresholds.stage2);
  out.flat_attribution = out.stage2.heatmap.flat;
  std::optional<bool> stage3_decision;
  if (out.stage2.decision) {
    const CxrImage masked{out.masked_image, image.source_id, image.capture_date};
    out.stage3_input = make_stage3_input(masked, out.stage2.heatmap);
    out.stage3 = screen_stage3(*out.stage3_input, models.stage3, thresholds.stage3);
    stage3_decision = out.stage3->decision;
    out.flat_attribution = out.flat_attribution || out.stage3->gradcam.flat;
  }
  out.final_class = gate(out.stage2.decision, stage3_decision);
  return out;
}

std::string model_version(int stage, const ParameterSet<double>& params) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(params.checksum()));
  return "stage" + std::to_string(stage) + "-" + std::string(hex, 12);
}

std::shared_ptr<const StageModels> ModelRegistry::load(
    const std::array<std::filesystem::path, 3>& paths, std::vector<ModelRegistryEntry>* entries) {
  std::array<CheckpointBundle, 3> bundles;
  for (int stage = 1; stage <= 3; ++stage) {
    const auto& path = paths[static_cast<std::size_t>(stage - 1)];
    if (!std::filesystem::exists(path / "manifest.json"))
      throw std::runtime_error("missing stage-" + std::to_string(stage) + " checkpoint: " +
                               (path / "manifest.json").string());
    auto& b = bundles[static_cast<std::size_t>(stage - 1)];
    b = load_bundle(path);
    if (b.stage != stage)
      throw std::runtime_error(path.string() + " holds a stage-" + std::to_string(b.stage) +
                               " checkpoint, expected stage " + std::to_string(stage));
  }
  auto models = std::make_shared<StageModels>(StageModels{
      segmenter_from_bundle(bundles[0]), classifier_from_bundle(bundles[1]),
      classifier_from_bundle(bundles[2]), {}});
  for (int stage = 1; stage <= 3; ++stage) {
    const auto i = static_cast<std::size_t>(stage - 1);
    models->versions[i] = model_version(stage, bundles[i].params);
    if (entries) entries->push_back({stage, models->versions[i], paths[i], true});
  }
  return models;
}

void ModelRegistry::install(std::shared_ptr<const StageModels> models,
                            std::vector<ModelRegistryEntry> entries) {
  std::lock_guard lock(mutex_);
  for (auto& e : entries_) e.active = false;
  for (auto& e : entries) {
    e.active = true;
    std::erase_if(entries_, [&](const ModelRegistryEntry& old) {
      return old.stage == e.stage && old.version == e.version;
    });
    entries_.push_back(e);
  }
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const auto& a, const auto& b) { return a.stage < b.stage; });
  models_ = std::move(models);
}

std::shared_ptr<const StageModels> ModelRegistry::snapshot() const {
  std::lock_guard lock(mutex_);
  return models_;
}

std::vector<ModelRegistryEntry> ModelRegistry::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::array<std::filesystem::path, 3> stage_paths(const std::filesystem::path& models_dir) {
  return {models_dir / "stage1", models_dir / "stage2", models_dir / "stage3"};
}

}  // namespace cxr
