// cxrscreen: command-line entry point for desk-scale runs.
//
//   cxrscreen synth-data  --out DIR [--seed N] [--normal N --covid N --pneumonia N]
//   cxrscreen train       --stage {1|2|3} --data PATH --out DIR [--teacher PATH] [--lambda X]
//   cxrscreen eval        --split {val|test} --data PATH --models DIR --out DIR [--ablate-mask]
//   cxrscreen infer       --image PATH --models DIR [--out DIR] [--embed-heatmaps]
//   cxrscreen lead-report --manifest PATH --models DIR --out DIR
//   cxrscreen serve       [--config PATH] [--models DIR] [--data-dir DIR] [--port N]
//
// Exit status: 0 success, 1 user error, 2 internal error.
#include "cxr/image_io.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/render.hpp"
#include "cxr/service.hpp"

#include "CLI11.hpp"
#include "httplib.h"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

using namespace cxr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log(const std::string& msg) { std::cerr << "[cxrscreen] " << msg << std::endl; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UserError(what + " not found: " + p.string());
}

fs::path manifest_path(const fs::path& data) {
  const fs::path p = fs::is_directory(data) ? data / "manifest.csv" : data;
  require_exists(p, "manifest");
  return p;
}

TrainingCorpus load_corpus(const fs::path& data) {
  auto loaded = load_manifest(manifest_path(data));
  for (const auto& e : loaded.errors) log("manifest row " + std::to_string(e.row) + ": " + e.message);
  if (loaded.corpus.size() == 0) throw UserError("no usable samples in " + data.string());
  return std::move(loaded.corpus);
}

json load_json_file(const fs::path& path) {
  require_exists(path, "config");
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// Records what a command read and wrote. Inputs are identified by the
/// git-style hash of their bytes; directories hash their manifest.csv.
class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& argv, json config)
      : doc_{{"command", std::move(command)}, {"argv", argv}, {"config", std::move(config)},
             {"inputs", json::array()}, {"outputs", json::array()}} {}

  void seed(std::uint64_t s) { doc_["seed"] = s; }

  void input(const fs::path& p) {
    fs::path file = fs::is_directory(p) ? p / "manifest.csv" : p;
    if (fs::is_directory(p) && !fs::exists(file)) file = p / "manifest.json";
    json entry{{"path", p.string()}};
    if (fs::is_regular_file(file)) entry["git_sha1"] = git_blob_hash(read_file(file));
    doc_["inputs"].push_back(entry);
  }

  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }

  void write(const fs::path& dir) {
    fs::create_directories(dir);
    doc_["created_at"] = utc_now();
    std::ofstream out(dir / "run_manifest.json");
    out << doc_.dump(2) << '\n';
  }

 private:
  json doc_;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

struct Options {
  std::string config_path;
  fs::path out = "out";
  std::vector<std::string> argv;
};

PipelineConfig pipeline_config(const Options& o) {
  if (o.config_path.empty()) return default_pipeline_config();
  try {
    return pipeline_config_from_json(load_json_file(o.config_path));
  } catch (const UserError&) {
    throw;
  } catch (const std::exception& e) {
    throw UserError("bad config " + o.config_path + ": " + e.what());
  }
}

struct SynthArgs {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> normal, covid, pneumonia;
  std::optional<int> size;
  std::size_t captures_per_case = 2;
};

int cmd_synth(const Options& o, const SynthArgs& a) {
  auto cfg = pipeline_config(o);
  SyntheticSpec spec = cfg.data;
  if (a.seed) spec.seed = *a.seed;
  if (a.normal) spec.counts[0] = *a.normal;
  if (a.covid) spec.counts[1] = *a.covid;
  if (a.pneumonia) spec.counts[2] = *a.pneumonia;
  if (a.size) spec.image_size = *a.size;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  auto corpus = generate_synthetic_corpus(spec);
  assign_synthetic_timelines(corpus, spec.seed, a.captures_per_case);
  write_corpus(corpus, o.out);
  RunManifest m("synth-data", o.argv, to_json(spec));
  m.seed(spec.seed);
  m.output(o.out / "manifest.csv");
  m.output(o.out / "images");
  m.write(o.out);
  log("wrote " + std::to_string(corpus.size()) + " samples to " + o.out.string());
  return 0;
}

struct TrainArgs {
  int stage = 0;
  fs::path data;
  std::optional<fs::path> models;
  std::optional<fs::path> teacher;
  std::optional<double> lambda;
  std::optional<int> epochs;
  bool no_mask = false;
};

CheckpointBundle load_stage_bundle(const fs::path& dir, int stage) {
  require_exists(dir / "manifest.json", "stage-" + std::to_string(stage) + " checkpoint");
  auto b = load_bundle(dir);
  if (b.stage != stage)
    throw UserError(dir.string() + " holds stage " + std::to_string(b.stage) + ", expected " +
                    std::to_string(stage));
  return b;
}

json report_json(const EvalReport& r) { return to_json(r); }

int cmd_train(const Options& o, const TrainArgs& a) {
  auto cfg = pipeline_config(o);
  const fs::path models = a.models.value_or(o.out);
  const auto corpus = load_corpus(a.data);
  const auto split = split_dataset(corpus, cfg.split_ratios, cfg.split_seed);
  for (const auto& w : split.warnings) log("warning: " + w);
  const fs::path dest = o.out / ("stage" + std::to_string(a.stage));
  RunManifest m("train", o.argv, to_json(cfg));
  m.input(a.data);
  CheckpointBundle bundle;

  if (a.stage == 1) {
    if (a.epochs) cfg.segmenter_train.epochs = *a.epochs;
    m.seed(cfg.segmenter_train.seed);
    log("training segmenter");
    auto r = train_stage1(corpus, split.split, cfg);
    bundle = make_bundle(1, r.model, cfg.segmenter_train, r.history);
    bundle.metrics = {{"val_dice", r.history.epochs.empty() ? json(nullptr) : json(r.history.epochs.back().val_dice.value_or(0))},
                      {"test_dice", segmenter_dice(r.model, corpus, split.split.test)}};
  } else {
    const auto seg = segmenter_from_bundle(load_stage_bundle(models / "stage1", 1));
    m.input(models / "stage1");
    const SegmenterModel* mask = a.no_mask ? nullptr : &seg;
    TrainConfig train = a.stage == 2 ? cfg.stage2_train : cfg.stage3_train;
    if (a.epochs) train.epochs = *a.epochs;
    std::optional<DenseClassifier<float>> teacher;
    if (a.teacher) {
      teacher = classifier_from_bundle(load_stage_bundle(*a.teacher, a.stage));
      m.input(*a.teacher);
      train.lambda = a.lambda.value_or(1.0);
    } else if (a.lambda && *a.lambda > 0) {
      throw UserError("--lambda > 0 needs --teacher");
    }
    m.seed(train.seed);
    Stage2Options opts{a.stage == 2 ? cfg.stage2_model : cfg.stage3_model, train,
                       teacher ? &*teacher : nullptr, nullptr};
    if (a.stage == 2) {
      log("masking images");
      const auto tr = stage2_dataset(corpus, split.split.train, mask);
      const auto va = stage2_dataset(corpus, split.split.val, mask);
      const auto te = stage2_dataset(corpus, split.split.test, mask);
      log("training stage 2");
      auto r = train_stage2(tr, &va, seg, opts);
      bundle = make_bundle(2, r.model, opts.train, r.history, opts.teacher);
      bundle.metrics = {{"val", report_json(evaluate_classifier(r.model, va, cfg.stage2_threshold))},
                        {"test", report_json(evaluate_classifier(r.model, te, cfg.stage2_threshold))},
                        {"lung_mask", !a.no_mask}};
    } else {
      const auto s2 = classifier_from_bundle(load_stage_bundle(models / "stage2", 2));
      m.input(models / "stage2");
      log("building stage-3 inputs");
      const auto tr = stage3_dataset(corpus, pneumonia_indices(corpus, split.split.train), mask, s2);
      const auto va = stage3_dataset(corpus, pneumonia_indices(corpus, split.split.val), mask, s2);
      const auto te = stage3_dataset(corpus, pneumonia_indices(corpus, split.split.test), mask, s2);
      log("training stage 3");
      auto r = train_stage3(tr, &va, seg, s2, opts);
      bundle = make_bundle(3, r.model, opts.train, r.history, opts.teacher);
      bundle.metrics = {{"val", report_json(evaluate_classifier(r.model, va, cfg.stage3_threshold))},
                        {"test", report_json(evaluate_classifier(r.model, te, cfg.stage3_threshold))}};
    }
  }
  save_bundle(dest, bundle);
  m.output(dest);
  m.write(dest);
  std::cout << json{{"stage", a.stage}, {"checkpoint", dest.string()}, {"metrics", bundle.metrics}}.dump(2)
            << std::endl;
  return 0;
}

struct EvalArgs {
  std::string split = "test";
  fs::path data;
  fs::path models;
  bool ablate_mask = false;
};

int cmd_eval(const Options& o, const EvalArgs& a) {
  auto cfg = pipeline_config(o);
  const auto corpus = load_corpus(a.data);
  const auto split = split_dataset(corpus, cfg.split_ratios, cfg.split_seed).split;
  const auto seg = segmenter_from_bundle(load_stage_bundle(a.models / "stage1", 1));
  const auto s2 = classifier_from_bundle(load_stage_bundle(a.models / "stage2", 2));
  const auto s3 = classifier_from_bundle(load_stage_bundle(a.models / "stage3", 3));
  const fs::path dest = o.out / "eval";
  RunManifest m("eval", o.argv, to_json(cfg));
  m.input(a.data);
  for (const char* s : {"stage1", "stage2", "stage3"}) m.input(a.models / s);
  const auto& chosen = a.split == "val" ? split.val : split.test;
  std::vector<GridRow> rows;
  json summary;

  if (a.ablate_mask) {
    log("training the no-mask stage-2 arm");
    const auto train_raw = stage2_dataset(corpus, split.train, nullptr);
    const auto val_raw = stage2_dataset(corpus, split.val, nullptr);
    Stage2Options opts{cfg.stage2_model, cfg.stage2_train};
    const auto raw = train_stage2(train_raw, &val_raw, seg, opts);
    for (const char* name : {"val", "test"}) {
      const auto& idx = std::string(name) == "val" ? split.val : split.test;
      rows.push_back({name, "stage2", "with_mask",
                      evaluate_classifier(s2, stage2_dataset(corpus, idx, &seg), cfg.stage2_threshold)});
      rows.push_back({name, "stage2", "without_mask",
                      evaluate_classifier(raw.model, stage2_dataset(corpus, idx, nullptr), cfg.stage2_threshold)});
    }
    write_text(dest / "ablation_mask.csv", grid_csv(rows));
    write_text(dest / "ablation_mask.json", to_json(rows).dump(2) + "\n");
    m.output(dest / "ablation_mask.csv");
    m.output(dest / "ablation_mask.json");
  } else {
    const auto v2 = stage2_dataset(corpus, split.val, &seg);
    const auto e2 = stage2_dataset(corpus, chosen, &seg);
    const auto v3 = stage3_dataset(corpus, pneumonia_indices(corpus, split.val), &seg, s2);
    const auto e3 = stage3_dataset(corpus, pneumonia_indices(corpus, chosen), &seg, s2);
    auto add = [&](const char* stage, const DenseClassifier<float>& model, const ClassifierDataset<float>& val,
                   const ClassifierDataset<float>& eval, double fixed) {
      rows.push_back({a.split, stage, "fixed", evaluate_classifier(model, eval, fixed)});
      try {
        const double t = youden_threshold(score(model, val), labels_of(val));
        rows.push_back({a.split, stage, "youden", evaluate_classifier(model, eval, t)});
      } catch (const MetricError& e) {
        log(std::string(stage) + ": no youden arm (" + e.what() + ")");
      }
    };
    add("stage2", s2, v2, e2, cfg.stage2_threshold);
    add("stage3", s3, v3, e3, cfg.stage3_threshold);
    summary["stage1_dice"] = segmenter_dice(seg, corpus, chosen);
    summary["grid"] = to_json(rows);
    write_text(dest / ("grid_" + a.split + ".csv"), grid_csv(rows));
    write_text(dest / ("report_" + a.split + ".json"), summary.dump(2) + "\n");
    m.output(dest / ("grid_" + a.split + ".csv"));
    m.output(dest / ("report_" + a.split + ".json"));
  }
  m.write(dest);
  std::cout << grid_csv(rows);
  return 0;
}

StageModels load_models(const fs::path& dir) {
  try {
    return *ModelRegistry::load(stage_paths(dir));
  } catch (const std::runtime_error& e) {
    throw UserError(e.what());
  }
}

struct InferArgs {
  fs::path image;
  fs::path models;
  bool embed = false;
  bool write_outputs = false;
};

int cmd_infer(const Options& o, const InferArgs& a) {
  require_exists(a.image, "image");
  auto cfg = pipeline_config(o);
  const auto models = load_models(a.models);
  const auto bytes = read_file(a.image);
  DecodedImage decoded;
  try {
    decoded = decode_image(bytes);
  } catch (const ImageDecodeError& e) {
    std::cout << json{{"error", {{"code", "invalid_image"}, {"message", e.what()}}}}.dump(2) << std::endl;
    return 1;
  }
  const auto pre = preprocess(decoded, a.image.filename().string());
  const auto p = run_cascade(pre.image, models, {cfg.stage2_threshold, cfg.stage3_threshold});
  json out = prediction_json(p, "local", utc_now());
  out["source_filename"] = a.image.filename().string();
  out["image_sha1"] = git_blob_hash(bytes);
  out["flags"]["constant_input"] = !pre.warnings.empty();
  if (a.embed) {
    out["heatmap_data"] = {{"stage2_cam", heatmap_json(p.stage2.heatmap)},
                           {"stage3_gradcam", p.stage3 ? heatmap_json(p.stage3->gradcam) : json(nullptr)}};
  }
  if (a.write_outputs) {
    const fs::path dest = o.out / "infer";
    RunManifest m("infer", o.argv, to_json(cfg));
    m.input(a.image);
    for (const char* s : {"stage1", "stage2", "stage3"}) m.input(a.models / s);
    auto save = [&](const char* name, const std::vector<unsigned char>& png) {
      write_file(dest / (std::string(name) + ".png"), png);
      out["heatmaps"][name] = (dest / (std::string(name) + ".png")).string();
      m.output(dest / (std::string(name) + ".png"));
    };
    save("stage2_cam", heatmap_png(p.stage2.heatmap));
    if (p.stage3) {
      save("stage3_gradcam", heatmap_png(p.stage3->gradcam));
      save("guided", guided_png(p.stage3->guided));
    }
    write_text(dest / "prediction.json", out.dump(2) + "\n");
    m.output(dest / "prediction.json");
    m.write(dest);
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

struct LeadArgs {
  fs::path manifest;
  fs::path models;
};

int cmd_lead(const Options& o, const LeadArgs& a) {
  auto cfg = pipeline_config(o);
  const auto corpus = load_corpus(a.manifest);
  const auto models = load_models(a.models);
  std::map<std::string, CaseTimeline> cases;
  std::size_t skipped = 0;
  for (const auto& s : corpus.samples) {
    if (!s.rtpcr_confirm_date && s.case_id.empty()) continue;  // not part of a tracked case
    const std::string id = s.case_id.empty() ? s.image.source_id : s.case_id;
    auto& c = cases[id];
    c.case_id = id;
    if (s.symptom_onset_date) c.symptom_onset_date = s.symptom_onset_date;
    if (s.rtpcr_confirm_date) c.rtpcr_confirm_date = s.rtpcr_confirm_date;
    if (!s.image.capture_date) {
      ++skipped;
      continue;
    }
    const auto p = run_cascade(s.image, models, {cfg.stage2_threshold, cfg.stage3_threshold});
    c.captures.push_back({*s.image.capture_date, p.final_class == Label::kCovid});
  }
  if (skipped) log(std::to_string(skipped) + " captures without a capture date were skipped");
  std::vector<CaseTimeline> list;
  for (auto& [id, c] : cases) {
    c.sort_captures();
    list.push_back(std::move(c));
  }
  const auto report = cohort_lead_report(std::move(list));
  const fs::path dest = o.out / "lead";
  write_text(dest / "lead_report.csv", lead_report_csv(report));
  write_text(dest / "lead_report.json", to_json(report).dump(2) + "\n");
  RunManifest m("lead-report", o.argv, to_json(cfg));
  m.input(a.manifest);
  for (const char* s : {"stage1", "stage2", "stage3"}) m.input(a.models / s);
  m.output(dest / "lead_report.csv");
  m.output(dest / "lead_report.json");
  m.write(dest);
  std::cout << lead_report_csv(report);
  return 0;
}

struct ServeArgs {
  std::optional<fs::path> models;
  std::optional<fs::path> data_dir;
  std::optional<int> port;
  std::optional<std::string> host;
};

ScreeningService* g_service = nullptr;

int cmd_serve(const Options& o, const ServeArgs& a) {
  ServiceConfig sc;
  if (!o.config_path.empty()) {
    const auto j = load_json_file(o.config_path);
    if (j.contains("service")) sc = service_config_from_json(j.at("service"), sc);
    if (j.contains("stage2") && j["stage2"].contains("threshold") && !j["service"].contains("stage2_threshold"))
      sc.thresholds.stage2 = j["stage2"]["threshold"].get<float>();
    if (j.contains("stage3") && j["stage3"].contains("threshold") && !j["service"].contains("stage3_threshold"))
      sc.thresholds.stage3 = j["stage3"]["threshold"].get<float>();
  }
  try {
    sc = apply_env_overrides(sc);
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  if (a.models) {
    sc.models_dir = *a.models;
    sc.checkpoints = {};
  }
  if (a.data_dir) sc.data_dir = *a.data_dir;
  if (a.port) sc.port = *a.port;
  if (a.host) sc.host = *a.host;
  for (const auto& p : sc.checkpoint_paths())
    if (!fs::exists(p / "manifest.json")) throw UserError("refusing to start: missing checkpoint " + p.string());

  ScreeningService service(sc);
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  std::thread loader([&] {
    try {
      service.load_models();
      log("models loaded; ready");
    } catch (const std::exception& e) {
      log(std::string("model load failed: ") + e.what());
      service.stop();
    }
  });
  log("listening on " + sc.host + ":" + std::to_string(sc.port));
  const bool ok = service.listen();
  loader.join();
  g_service = nullptr;
  if (!ok && !service.ready()) {
    log("could not bind " + sc.host + ":" + std::to_string(sc.port) + " (port busy?)");
    return 1;
  }
  return 0;
}

int cmd_config(const Options& o) {
  json j = to_json(pipeline_config(o));
  ServiceConfig sc;
  if (!o.config_path.empty()) {
    const auto file = load_json_file(o.config_path);
    if (file.contains("service")) sc = service_config_from_json(file.at("service"), sc);
  }
  j["service"] = to_json(sc);
  std::cout << j.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded chest x-ray screening: data, training, evaluation and serving"};
  app.require_subcommand(1);
  Options opts;
  opts.argv.assign(argv, argv + argc);
  app.add_option("--config", opts.config_path, "JSON config (see configs/pilot.json)");
  app.add_option("--out", opts.out, "Output directory")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Write a synthetic corpus with masks and a manifest");
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--normal", synth.normal, "Number of normal images");
  c_synth->add_option("--covid", synth.covid, "Number of COVID-19 images");
  c_synth->add_option("--pneumonia", synth.pneumonia, "Number of non-COVID pneumonia images");
  c_synth->add_option("--size", synth.size, "Image side in pixels");
  c_synth->add_option("--captures-per-case", synth.captures_per_case, "COVID captures per synthetic case");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one stage and write its checkpoint to OUT/stageN");
  c_train->add_option("--stage", train.stage, "Stage to train")->required()->check(CLI::Range(1, 3));
  c_train->add_option("--data", train.data, "Manifest file or corpus directory")->required();
  c_train->add_option("--models", train.models, "Directory holding upstream stage checkpoints (default: --out)");
  c_train->add_option("--teacher", train.teacher, "Checkpoint of the frozen teacher (incremental mode)");
  c_train->add_option("--lambda", train.lambda, "Distillation weight (default 1 with --teacher)")
      ->check(CLI::NonNegativeNumber);
  c_train->add_option("--epochs", train.epochs, "Override the configured epoch count")
      ->check(CLI::NonNegativeNumber);
  c_train->add_flag("--no-mask", train.no_mask, "Skip lung masking (ablation arm)");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate trained stages on a split");
  c_eval->add_option("--split", eval.split, "val or test")->check(CLI::IsMember({"val", "test"}));
  c_eval->add_option("--data", eval.data, "Manifest file or corpus directory")->required();
  c_eval->add_option("--models", eval.models, "Directory with stage1..stage3 checkpoints")->required();
  c_eval->add_flag("--ablate-mask", eval.ablate_mask, "Compare stage 2 with and without lung masking");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Screen one image and print the record JSON");
  c_infer->add_option("--image", infer.image, "PNG or JPEG file")->required();
  c_infer->add_option("--models", infer.models, "Directory with stage1..stage3 checkpoints")->required();
  c_infer->add_flag("--embed-heatmaps", infer.embed, "Embed heatmaps as base64 PNG");
  c_infer->add_flag("--write", infer.write_outputs, "Also write heatmaps and the record under OUT/infer");

  LeadArgs lead;
  auto* c_lead = app.add_subcommand("lead-report", "Detection lead time against RT-PCR confirmation");
  c_lead->add_option("--manifest", lead.manifest, "Manifest with capture and confirmation dates")->required();
  c_lead->add_option("--models", lead.models, "Directory with stage1..stage3 checkpoints")->required();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP screening service");
  c_serve->add_option("--models", serve.models, "Directory with stage1..stage3 checkpoints");
  c_serve->add_option("--data-dir", serve.data_dir, "Record store directory");
  c_serve->add_option("--port", serve.port, "Port");
  c_serve->add_option("--host", serve.host, "Bind address");

  auto* c_config = app.add_subcommand("config", "Print the effective configuration as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_synth) return cmd_synth(opts, synth);
    if (*c_train) return cmd_train(opts, train);
    if (*c_eval) return cmd_eval(opts, eval);
    if (*c_infer) return cmd_infer(opts, infer);
    if (*c_lead) return cmd_lead(opts, lead);
    if (*c_serve) return cmd_serve(opts, serve);
    if (*c_config) return cmd_config(opts);
  } catch (const UserError& e) {
    log(std::string("error: ") + e.what());
    return 1;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return 2;
  }
  return 1;
}
