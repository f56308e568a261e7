// cascade.hpp
//
// Three-stage screening of one image and the registry of active models.
#ifndef CXR_CASCADE_HPP
#define CXR_CASCADE_HPP

#include "cxr/stage3.hpp"

#include <array>
#include <memory>
#include <mutex>

namespace cxr {

struct StageModels {
  SegmenterModel segmenter;
  DenseClassifier<float> stage2;
  DenseClassifier<float> stage3;
  std::array<std::string, 3> versions;  // indexed by stage - 1
};

struct Thresholds {
  float stage2 = kDefaultThreshold;
  float stage3 = kDefaultThreshold;
};

struct CascadePrediction {
  Label final_class = Label::kNormal;
  MaskPrediction lung;
  RasterF masked_image;
  Stage2Output stage2;
  std::optional<MaskedInput> stage3_input;
  std::optional<Stage3Output> stage3;  // present iff stage2.decision
  std::array<std::string, 3> model_versions;
  bool empty_mask = false;
  bool flat_attribution = false;
};

/// The gating table: NORMAL unless stage 2 fires, then COVID or
/// NON_COVID_PNEUMONIA by the stage-3 decision.
Label gate(bool stage2_decision, std::optional<bool> stage3_decision);

/// "NORMAL" | "COVID" | "NON_COVID_PNEUMONIA"
std::string final_class_name(Label label);
std::optional<Label> parse_final_class(const std::string& text);

CascadePrediction run_cascade(const CxrImage& image, const StageModels& models,
                              const Thresholds& thresholds);

struct ModelRegistryEntry {
  int stage = 1;
  std::string version;
  std::filesystem::path checkpoint;
  bool active = false;
};

/// "stage<N>-<first 12 hex digits of the parameter checksum>"
std::string model_version(int stage, const ParameterSet<double>& params);

/// Holds the active models. Readers take a snapshot and keep using it even
/// if a new set is installed concurrently.
class ModelRegistry {
 public:
  /// Loads the three bundles; every path must hold a checkpoint of the
  /// matching stage. Throws std::runtime_error with the offending path.
  static std::shared_ptr<const StageModels> load(const std::array<std::filesystem::path, 3>& paths,
                                                 std::vector<ModelRegistryEntry>* entries = nullptr);

  void install(std::shared_ptr<const StageModels> models, std::vector<ModelRegistryEntry> entries);
  std::shared_ptr<const StageModels> snapshot() const;
  std::vector<ModelRegistryEntry> entries() const;
  bool ready() const { return snapshot() != nullptr; }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const StageModels> models_;
  std::vector<ModelRegistryEntry> entries_;
};

/// Checkpoint directories `<dir>/stage1`, `<dir>/stage2`, `<dir>/stage3`.
std::array<std::filesystem::path, 3> stage_paths(const std::filesystem::path& models_dir);

}  // namespace cxr

#endif  // CXR_CASCADE_HPP
