#include "cxr/service.hpp"

#include "cxr/image_io.hpp"
#include "cxr/render.hpp"

#include "httplib.h"

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <set>

namespace cxr {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, error_body(code, message));
}

constexpr std::array<const char*, 3> kHeatmapNames{"stage2_cam", "stage3_gradcam", "guided"};

std::string heatmap_url(const std::string& id, const char* name) {
  return "/v1/screenings/" + id + "/heatmaps/" + name;
}

json stage_json(float prob, bool decision, float threshold, bool flat) {
  return {{"prob", round6(prob)},
          {"decision", decision},
          {"threshold", round6(threshold)},
          {"flat_attribution", flat}};
}

template <typename T>
void env_override(const char* name, T& out) {
  const char* v = std::getenv(name);
  if (!v || !*v) return;
  try {
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
      out = T(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v));
    } else {
      out = static_cast<T>(std::stoll(v));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("invalid value for ") + name + ": '" + v + "'");
  }
}

}  // namespace

std::array<std::filesystem::path, 3> ServiceConfig::checkpoint_paths() const {
  auto paths = stage_paths(models_dir);
  for (std::size_t i = 0; i < 3; ++i)
    if (checkpoints[i]) paths[i] = *checkpoints[i];
  return paths;
}

ServiceConfig service_config_from_json(const json& j, ServiceConfig c) {
  if (j.contains("host")) c.host = j.at("host").get<std::string>();
  if (j.contains("port")) c.port = j.at("port").get<int>();
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("models_dir")) c.models_dir = j.at("models_dir").get<std::string>();
  if (j.contains("registry"))
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string key = "stage" + std::to_string(i + 1);
      if (j.at("registry").contains(key)) c.checkpoints[i] = j.at("registry").at(key).get<std::string>();
    }
  if (j.contains("stage2_threshold")) c.thresholds.stage2 = j.at("stage2_threshold").get<float>();
  if (j.contains("stage3_threshold")) c.thresholds.stage3 = j.at("stage3_threshold").get<float>();
  if (j.contains("max_upload_bytes")) c.max_upload_bytes = j.at("max_upload_bytes").get<std::size_t>();
  if (j.contains("colormap")) c.colormap = j.at("colormap").get<std::string>();
  if (j.contains("overlay_alpha")) c.overlay_alpha = j.at("overlay_alpha").get<float>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  return c;
}

ServiceConfig apply_env_overrides(ServiceConfig c) {
  env_override("CASCADE_HOST", c.host);
  env_override("CASCADE_PORT", c.port);
  env_override("CASCADE_DATA_DIR", c.data_dir);
  if (const char* dir = std::getenv("CASCADE_MODELS_DIR"); dir && *dir) {
    c.models_dir = dir;
    c.checkpoints = {};
  }
  env_override("CASCADE_STAGE2_THRESHOLD", c.thresholds.stage2);
  env_override("CASCADE_STAGE3_THRESHOLD", c.thresholds.stage3);
  env_override("CASCADE_MAX_UPLOAD_BYTES", c.max_upload_bytes);
  return c;
}

json to_json(const ServiceConfig& c) {
  // Only explicit overrides; the rest follow models_dir.
  json registry = json::object();
  for (std::size_t i = 0; i < 3; ++i)
    if (c.checkpoints[i]) registry["stage" + std::to_string(i + 1)] = c.checkpoints[i]->string();
  return {{"host", c.host},
          {"port", c.port},
          {"data_dir", c.data_dir.string()},
          {"models_dir", c.models_dir.string()},
          {"registry", registry},
          {"stage2_threshold", c.thresholds.stage2},
          {"stage3_threshold", c.thresholds.stage3},
          {"max_upload_bytes", c.max_upload_bytes},
          {"colormap", c.colormap},
          {"overlay_alpha", round6(c.overlay_alpha)},
          {"threads", c.threads}};
}

double round6(double value) { return std::round(value * 1e6) / 1e6; }

json prediction_json(const CascadePrediction& p, const std::string& id, const std::string& created_at) {
  json out{{"id", id},
           {"created_at", created_at},
           {"final_class", final_class_name(p.final_class)},
           {"stage1", {{"empty_mask", p.empty_mask}, {"lung_pixels", p.lung.mask.count()}}},
           {"stage2", stage_json(p.stage2.prob_pneumonia, p.stage2.decision, p.stage2.threshold,
                                 p.stage2.heatmap.flat)},
           {"stage3", nullptr},
           {"flags", {{"empty_mask", p.empty_mask}, {"flat_attribution", p.flat_attribution}}},
           {"model_versions",
            {{"stage1", p.model_versions[0]}, {"stage2", p.model_versions[1]}, {"stage3", p.model_versions[2]}}}};
  json heatmaps{{"stage2_cam", heatmap_url(id, kHeatmapNames[0])},
                {"stage3_gradcam", nullptr},
                {"guided", nullptr}};
  if (p.stage3) {
    out["stage3"] = stage_json(p.stage3->prob_covid, p.stage3->decision, p.stage3->threshold,
                               p.stage3->gradcam.flat);
    heatmaps["stage3_gradcam"] = heatmap_url(id, kHeatmapNames[1]);
    heatmaps["guided"] = heatmap_url(id, kHeatmapNames[2]);
  }
  out["heatmaps"] = heatmaps;
  return out;
}

std::vector<std::string> audit_record(const json& r) {
  std::vector<std::string> problems;
  const std::string id = r.value("id", "?");
  auto problem = [&](const std::string& what) { problems.push_back(id + ": " + what); };
  try {
    const auto final_class = parse_final_class(r.at("final_class").get<std::string>());
    if (!final_class) return {id + ": unknown final_class"};
    const auto& s2 = r.at("stage2");
    const bool d2 = s2.at("decision").get<bool>();
    const bool has3 = !r.at("stage3").is_null();
    auto check_decision = [&](const json& s, const char* stage) {
      const double prob = s.at("prob").get<double>(), t = s.at("threshold").get<double>();
      if (std::abs(prob - t) > 1e-6 && (prob >= t) != s.at("decision").get<bool>())
        problem(std::string(stage) + " decision disagrees with prob and threshold");
    };
    check_decision(s2, "stage2");
    if ((*final_class == Label::kNormal) == d2) problem("final_class NORMAL must match a negative stage 2");
    if (has3 != d2) problem("stage3 must be present exactly when stage 2 is positive");
    if (has3) {
      check_decision(r.at("stage3"), "stage3");
      const bool d3 = r.at("stage3").at("decision").get<bool>();
      if ((*final_class == Label::kCovid) != d3) problem("final_class disagrees with the stage-3 decision");
    }
    const auto& h = r.at("heatmaps");
    if (h.at("stage2_cam").is_null()) problem("stage2_cam heatmap missing");
    if (h.at("stage3_gradcam").is_null() == has3 || h.at("guided").is_null() == has3)
      problem("stage-3 heatmap references inconsistent with stage 3");
  } catch (const json::exception& e) {
    problem(std::string("malformed record: ") + e.what());
  }
  return problems;
}

// ---------------------------------------------------------------------------

RecordStore::RecordStore(std::filesystem::path data_dir)
    : dir_(std::move(data_dir)), log_path_(dir_ / "records.jsonl") {
  std::filesystem::create_directories(dir_ / "screenings");
  std::ifstream in(log_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception&) {
      break;  // torn final line from an interrupted write
    }
    const auto id = r.at("id").get<std::string>();
    index_[id] = records_.size();
    records_.push_back(std::move(r));
    next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(id) + 1);
  }
}

json RecordStore::append(
    const std::function<json(const std::string&, const std::filesystem::path&)>& build) {
  std::lock_guard lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08llu", static_cast<unsigned long long>(next_id_));
  const std::string id = buf;
  const auto dir = record_dir(id);
  std::filesystem::create_directories(dir);
  json record = build(id, dir);
  {
    std::ofstream out(log_path_, std::ios::app);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + log_path_.string());
  }
  ++next_id_;
  index_[id] = records_.size();
  records_.push_back(record);
  return record;
}

std::optional<json> RecordStore::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return records_[it->second];
}

std::vector<json> RecordStore::all() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::size_t RecordStore::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

std::filesystem::path RecordStore::record_dir(const std::string& id) const {
  return dir_ / "screenings" / id;
}

std::vector<std::string> RecordStore::audit() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> problems;
  std::ifstream in(log_path_);
  std::string line;
  std::set<std::string> seen;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++n;
    const json r = json::parse(line);
    if (!seen.insert(r.value("id", "")).second) problems.push_back("duplicate id " + r.value("id", ""));
    for (auto& p : audit_record(r)) problems.push_back(std::move(p));
  }
  if (n != records_.size()) problems.push_back("log holds " + std::to_string(n) + " records, index " +
                                               std::to_string(records_.size()));
  return problems;
}

// ---------------------------------------------------------------------------

ScreeningService::ScreeningService(ServiceConfig config)
    : config_(std::move(config)), store_(config_.data_dir), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ScreeningService::~ScreeningService() { stop(); }

void ScreeningService::load_models() {
  std::vector<ModelRegistryEntry> entries;
  auto models = ModelRegistry::load(config_.checkpoint_paths(), &entries);
  registry_.install(std::move(models), std::move(entries));
}

void ScreeningService::install_models(std::shared_ptr<const StageModels> models,
                                      std::vector<ModelRegistryEntry> entries) {
  registry_.install(std::move(models), std::move(entries));
}

std::variant<json, ScreeningError> ScreeningService::screen_upload(std::span<const unsigned char> bytes,
                                                                   const std::string& filename) {
  if (bytes.size() > config_.max_upload_bytes)
    return ScreeningError{413, "payload_too_large",
                          "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes"};
  const auto models = registry_.snapshot();
  if (!models) return ScreeningError{503, "models_not_loaded", "models are still loading"};
  DecodedImage decoded;
  try {
    decoded = decode_image(bytes);
  } catch (const ImageDecodeError& e) {
    return ScreeningError{422, "invalid_image", e.what()};
  }
  auto pre = preprocess(decoded, filename);
  const auto prediction = run_cascade(pre.image, *models, config_.thresholds);
  const bool constant = !pre.warnings.empty();
  const std::string hash = git_blob_hash(bytes);
  const std::string created = utc_now();

  // Encode outside the store lock; only the writes are serialised.
  const auto original_png = encode_png_gray8(to_gray8(pre.image.pixels));
  const auto mask_png = encode_png_gray8((prediction.lung.mask.pixels.cast<int>() * 255).cast<std::uint8_t>());
  const auto cam_png = heatmap_png(prediction.stage2.heatmap);
  std::vector<unsigned char> gradcam_png, guided;
  if (prediction.stage3) {
    gradcam_png = heatmap_png(prediction.stage3->gradcam);
    guided = guided_png(prediction.stage3->guided);
  }
  return store_.append([&](const std::string& id, const std::filesystem::path& dir) {
    write_file(dir / "original.png", original_png);
    write_file(dir / "lung_mask.png", mask_png);
    write_file(dir / "stage2_cam.png", cam_png);
    if (prediction.stage3) {
      write_file(dir / "stage3_gradcam.png", gradcam_png);
      write_file(dir / "guided.png", guided);
    }
    json r = prediction_json(prediction, id, created);
    r["source_filename"] = filename;
    r["image_sha1"] = hash;
    r["flags"]["constant_input"] = constant;
    return r;
  });
}

void ScreeningService::install_routes() {
  auto& s = *server_;
  // Allow multipart overhead on top of the image itself; the file size is
  // checked separately so oversize uploads get a JSON error body.
  s.set_payload_max_length(config_.max_upload_bytes + (1u << 20));
  s.new_task_queue = [threads = config_.threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(std::max(threads, 1)));
  };

  s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    if (ready()) send_json(res, 200, {{"status", "ok"}});
    else send_json(res, 503, {{"status", "loading"}});
  });

  s.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& e : registry_.entries())
      list.push_back({{"stage", e.stage}, {"version", e.version}, {"checkpoint", e.checkpoint.string()},
                      {"active", e.active}});
    send_json(res, 200, {{"models", list}, {"ready", ready()}});
  });

  s.Post("/v1/screenings", [this](const httplib::Request& req, httplib::Response& res) {
    std::string content, filename;
    if (req.is_multipart_form_data()) {
      if (req.has_file("image")) {
        const auto f = req.get_file_value("image");
        content = f.content;
        filename = f.filename;
      } else if (!req.files.empty()) {
        content = req.files.begin()->second.content;
        filename = req.files.begin()->second.filename;
      } else {
        return send_error(res, 400, "missing_image", "multipart field 'image' is required");
      }
    } else {
      content = req.body;
    }
    if (content.empty()) return send_error(res, 400, "missing_image", "empty upload");
    const auto result = screen_upload(
        std::span(reinterpret_cast<const unsigned char*>(content.data()), content.size()), filename);
    if (const auto* err = std::get_if<ScreeningError>(&result))
      return send_error(res, err->status, err->code, err->message);
    const auto& record = std::get<json>(result);
    res.set_header("Location", "/v1/screenings/" + record.at("id").get<std::string>());
    send_json(res, 201, record);
  });

  s.Get("/v1/screenings", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<Label> cls;
    if (req.has_param("class")) {
      cls = parse_final_class(req.get_param_value("class"));
      if (!cls) return send_error(res, 400, "invalid_filter", "unknown class '" + req.get_param_value("class") + "'");
    }
    std::string from, to;
    try {
      if (req.has_param("from")) from = format_date(*parse_date(req.get_param_value("from")));
      if (req.has_param("to")) to = format_date(*parse_date(req.get_param_value("to")));
    } catch (const std::exception&) {
      return send_error(res, 400, "invalid_filter", "dates must be YYYY-MM-DD");
    }
    long page = 1, page_size = 20;
    try {
      if (req.has_param("page")) page = std::stol(req.get_param_value("page"));
      if (req.has_param("page_size")) page_size = std::stol(req.get_param_value("page_size"));
    } catch (const std::exception&) {
      return send_error(res, 400, "invalid_page", "page and page_size must be integers");
    }
    if (page < 1 || page_size < 1 || page_size > 100)
      return send_error(res, 400, "invalid_page", "page >= 1 and 1 <= page_size <= 100");
    std::vector<json> matches;
    const auto records = store_.all();
    for (auto it = records.rbegin(); it != records.rend(); ++it) {
      const auto& r = *it;
      if (cls && r.at("final_class").get<std::string>() != final_class_name(*cls)) continue;
      const auto day = r.at("created_at").get<std::string>().substr(0, 10);
      if (!from.empty() && day < from) continue;
      if (!to.empty() && day > to) continue;
      matches.push_back(r);
    }
    const auto total = static_cast<long>(matches.size());
    json items = json::array();
    for (long i = (page - 1) * page_size; i < std::min(total, page * page_size); ++i)
      items.push_back(matches[static_cast<std::size_t>(i)]);
    send_json(res, 200,
              {{"items", items},
               {"page", page},
               {"page_size", page_size},
               {"total", total},
               {"pages", (total + page_size - 1) / page_size}});
  });

  s.Get(R"(/v1/screenings/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto record = store_.get(req.matches[1]);
    if (!record) return send_error(res, 404, "not_found", "no screening " + std::string(req.matches[1]));
    send_json(res, 200, *record);
  });

  s.Get(R"(/v1/screenings/(\d+)/heatmaps/(\w+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1], name = req.matches[2];
    const auto record = store_.get(id);
    if (!record) return send_error(res, 404, "not_found", "no screening " + id);
    if (std::find(kHeatmapNames.begin(), kHeatmapNames.end(), name) == kHeatmapNames.end())
      return send_error(res, 404, "unknown_heatmap", "heatmaps: stage2_cam, stage3_gradcam, guided");
    if (record->at("heatmaps").at(name).is_null())
      return send_error(res, 404, "heatmap_absent", name + " is absent because stage 3 did not run");
    const auto dir = store_.record_dir(id);
    std::vector<unsigned char> png;
    if (req.has_param("overlay") && req.get_param_value("overlay") == "1" && name != "guided") {
      const auto base = read_image(dir / "original.png");
      const auto heat = read_image(dir / (name + ".png"));
      png = overlay_png(base.values.cast<float>() / 255.0f, heat.values.cast<float>() / 255.0f, config_.colormap,
                        config_.overlay_alpha);
    } else {
      png = read_file(dir / (name + ".png"));
    }
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });

  s.Get(R"(/v1/screenings/(\d+)/original)", [this](const httplib::Request& req, httplib::Response& res) {
    if (!store_.get(req.matches[1])) return send_error(res, 404, "not_found", "no such screening");
    const auto png = read_file(store_.record_dir(req.matches[1]) / "original.png");
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send_error(res, 500, "internal", what);
  });
}

httplib::Server& ScreeningService::server() { return *server_; }

bool ScreeningService::listen() { return server_->listen(config_.host, config_.port); }

int ScreeningService::bind_any_port() { return server_->bind_to_any_port(config_.host); }

bool ScreeningService::listen_after_bind() { return server_->listen_after_bind(); }

void ScreeningService::stop() {
  if (server_) server_->stop();
}

}  // namespace cxr
