#include "cxr/trainer.hpp"

#include <fstream>
#include <sstream>

namespace cxr {

using nlohmann::json;

void TrainConfig::validate() const {
  if (stage < 1 || stage > 3) throw std::invalid_argument("TrainConfig: stage must be 1, 2 or 3");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
  if (lambda < 0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (!(temperature > 0)) throw std::invalid_argument("TrainConfig: temperature must be positive");
}

namespace {

std::string activation_name(nn::Activation a) {
  return a == nn::Activation::kRelu ? "relu" : "identity";
}

nn::Activation parse_activation(const std::string& s) {
  if (s == "relu") return nn::Activation::kRelu;
  if (s == "identity") return nn::Activation::kIdentity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},         {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"lambda", c.lambda},       {"temperature", c.temperature},
          {"clip_norm", c.clip_norm}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  read_if(j, "stage", c.stage);
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "learning_rate", c.learning_rate);
  read_if(j, "lambda", c.lambda);
  read_if(j, "temperature", c.temperature);
  read_if(j, "clip_norm", c.clip_norm);
  read_if(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const ClassifierConfig& c) {
  return {{"stem_pool", c.stem_pool},
          {"stem_channels", c.stem_channels},
          {"blocks", c.blocks},
          {"layers_per_block", c.layers_per_block},
          {"growth", c.growth},
          {"transition_channels", c.transition_channels},
          {"feature_channels", c.feature_channels},
          {"classes", c.classes},
          {"activation", activation_name(c.activation)},
          {"seed", c.seed}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  ClassifierConfig c;
  read_if(j, "stem_pool", c.stem_pool);
  read_if(j, "stem_channels", c.stem_channels);
  read_if(j, "blocks", c.blocks);
  read_if(j, "layers_per_block", c.layers_per_block);
  read_if(j, "growth", c.growth);
  read_if(j, "transition_channels", c.transition_channels);
  read_if(j, "feature_channels", c.feature_channels);
  read_if(j, "classes", c.classes);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  read_if(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const SegmenterConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"input_pool", c.input_pool},
          {"activation", activation_name(c.activation)},
          {"seed", c.seed}};
}

SegmenterConfig segmenter_config_from_json(const json& j) {
  SegmenterConfig c;
  read_if(j, "depth", c.depth);
  read_if(j, "base_channels", c.base_channels);
  read_if(j, "input_pool", c.input_pool);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
  read_if(j, "seed", c.seed);
  c.validate();
  return c;
}

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    row["val_loss"] = e.val_loss ? json(*e.val_loss) : json(nullptr);
    row["val_auc"] = e.val_auc ? json(*e.val_auc) : json(nullptr);
    row["val_dice"] = e.val_dice ? json(*e.val_dice) : json(nullptr);
    epochs.push_back(row);
  }
  return {{"epochs", epochs}, {"diverged", h.diverged}};
}

TrainHistory train_history_from_json(const json& j) {
  TrainHistory h;
  read_if(j, "diverged", h.diverged);
  if (!j.contains("epochs")) return h;
  for (const auto& row : j.at("epochs")) {
    EpochMetrics m;
    m.epoch = row.at("epoch").get<int>();
    m.train_loss = row.at("train_loss").get<double>();
    auto opt = [&](const char* key, std::optional<double>& out) {
      if (row.contains(key) && !row.at(key).is_null()) out = row.at(key).get<double>();
    };
    opt("val_loss", m.val_loss);
    opt("val_auc", m.val_auc);
    opt("val_dice", m.val_dice);
    h.epochs.push_back(m);
  }
  return h;
}

void save_bundle(const std::filesystem::path& dir, const CheckpointBundle& bundle) {
  std::filesystem::create_directories(dir);
  write_parameter_archive(dir / "params.bin", bundle.params);
  json manifest{{"format", "cxr-checkpoint"},
                {"version", 1},
                {"stage", bundle.stage},
                {"model", bundle.model_kind},
                {"model_config", bundle.model_config},
                {"train_config", to_json(bundle.train_config)},
                {"seed", bundle.train_config.seed},
                {"history", to_json(bundle.history)},
                {"metrics", bundle.metrics},
                {"parameters", "params.bin"},
                {"checksum", hex64(bundle.params.checksum())}};
  if (bundle.teacher) {
    write_parameter_archive(dir / "teacher.bin", *bundle.teacher);
    manifest["teacher"] = "teacher.bin";
    manifest["teacher_checksum"] = hex64(bundle.teacher->checksum());
  } else {
    std::filesystem::remove(dir / "teacher.bin");
    manifest["teacher"] = nullptr;
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

CheckpointBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint manifest missing: " + (dir / "manifest.json").string());
  const json manifest = json::parse(in);
  if (manifest.value("format", "") != "cxr-checkpoint")
    throw std::runtime_error("not a checkpoint manifest: " + (dir / "manifest.json").string());
  CheckpointBundle b;
  b.stage = manifest.at("stage").get<int>();
  b.model_kind = manifest.at("model").get<std::string>();
  b.model_config = manifest.at("model_config");
  b.train_config = train_config_from_json(manifest.at("train_config"));
  b.history = train_history_from_json(manifest.at("history"));
  b.metrics = manifest.value("metrics", json::object());
  b.params = read_parameter_archive(dir / manifest.at("parameters").get<std::string>());
  if (manifest.contains("checksum") && manifest.at("checksum").get<std::string>() != hex64(b.params.checksum()))
    throw std::runtime_error("checkpoint checksum mismatch in " + dir.string());
  if (manifest.contains("teacher") && !manifest.at("teacher").is_null())
    b.teacher = read_parameter_archive(dir / manifest.at("teacher").get<std::string>());
  return b;
}

SegmenterModel segmenter_from_bundle(const CheckpointBundle& bundle) {
  if (bundle.model_kind != "segmenter")
    throw std::invalid_argument("checkpoint holds a " + bundle.model_kind + ", not a segmenter");
  return UNet<double>(segmenter_config_from_json(bundle.model_config), bundle.params).cast<float>();
}

DenseClassifier<float> classifier_from_bundle(const CheckpointBundle& bundle) {
  if (bundle.model_kind != "classifier")
    throw std::invalid_argument("checkpoint holds a " + bundle.model_kind + ", not a classifier");
  return DenseClassifier<double>(classifier_config_from_json(bundle.model_config), bundle.params)
      .cast<float>();
}

CheckpointBundle make_bundle(int stage, const SegmenterModel& model, const TrainConfig& cfg,
                             const TrainHistory& history) {
  CheckpointBundle b;
  b.stage = stage;
  b.model_kind = "segmenter";
  b.model_config = to_json(model.config());
  b.train_config = cfg;
  b.history = history;
  b.params = model.parameters().cast<double>();
  return b;
}

CheckpointBundle make_bundle(int stage, const DenseClassifier<float>& model, const TrainConfig& cfg,
                             const TrainHistory& history, const DenseClassifier<float>* teacher) {
  CheckpointBundle b;
  b.stage = stage;
  b.model_kind = "classifier";
  b.model_config = to_json(model.config());
  b.train_config = cfg;
  b.history = history;
  b.params = model.parameters().cast<double>();
  if (teacher) b.teacher = teacher->parameters().cast<double>();
  return b;
}

}  // namespace cxr
