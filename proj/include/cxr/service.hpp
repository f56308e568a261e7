// service.hpp
//
// HTTP screening service: upload a radiograph, run the cascade, persist the
// record and serve heatmaps. Records live in an append-only JSON-lines file;
// images and heatmaps are stored under <data_dir>/screenings/<id>/.
#ifndef CXR_SERVICE_HPP
#define CXR_SERVICE_HPP

#include "cxr/cascade.hpp"

#include "json.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <map>
#include <mutex>
#include <variant>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace cxr {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "cascade-data";
  std::filesystem::path models_dir = "out/models";
  std::array<std::optional<std::filesystem::path>, 3> checkpoints;  // overrides models_dir/stageN
  Thresholds thresholds;
  std::size_t max_upload_bytes = 20u << 20;
  std::string colormap = "jet";
  float overlay_alpha = 0.4f;
  int threads = 8;

  std::array<std::filesystem::path, 3> checkpoint_paths() const;
};

/// Reads the "service" object of a config file (missing keys keep defaults).
ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base = {});
/// Applies CASCADE_HOST, CASCADE_PORT, CASCADE_DATA_DIR, CASCADE_MODELS_DIR,
/// CASCADE_STAGE2_THRESHOLD, CASCADE_STAGE3_THRESHOLD, CASCADE_MAX_UPLOAD_BYTES.
/// A models directory from the environment drops per-stage registry overrides.
ServiceConfig apply_env_overrides(ServiceConfig config);
nlohmann::json to_json(const ServiceConfig& c);

/// Rounds to six fractional digits.
double round6(double value);

/// JSON record for a prediction; heatmap references point at the service's
/// heatmap endpoints (stage-3 entries are null when stage 3 did not run).
nlohmann::json prediction_json(const CascadePrediction& prediction, const std::string& id,
                               const std::string& created_at);

/// Checks the gating invariants of a stored record; returns problems found.
std::vector<std::string> audit_record(const nlohmann::json& record);

/// Append-only record store. Ids are consecutive zero-padded integers.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path data_dir);

  /// Assigns the next id, lets `write_files` populate the record's
  /// directory, then appends the JSON line. Serialised across threads.
  nlohmann::json append(const std::function<nlohmann::json(const std::string& id,
                                                           const std::filesystem::path& dir)>& build);

  std::optional<nlohmann::json> get(const std::string& id) const;
  std::vector<nlohmann::json> all() const;  // insertion order
  std::size_t size() const;
  std::filesystem::path record_dir(const std::string& id) const;
  /// Re-reads the log from disk and audits every record.
  std::vector<std::string> audit() const;

 private:
  std::filesystem::path dir_;
  std::filesystem::path log_path_;
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> records_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t next_id_ = 1;
};

struct ScreeningError {
  int status = 422;
  std::string code;
  std::string message;
};

class ScreeningService {
 public:
  explicit ScreeningService(ServiceConfig config);
  ~ScreeningService();

  /// Loads the configured checkpoints into the registry.
  void load_models();
  void install_models(std::shared_ptr<const StageModels> models,
                      std::vector<ModelRegistryEntry> entries);
  bool ready() const { return registry_.ready(); }

  /// Decodes, screens and persists one upload. Returns the record or an error.
  std::variant<nlohmann::json, ScreeningError> screen_upload(std::span<const unsigned char> bytes,
                                                             const std::string& filename);

  httplib::Server& server();
  /// Binds and serves until stop(); false when the port cannot be bound.
  bool listen();
  /// Binds to an OS-chosen port; returns it, or -1.
  int bind_any_port();
  bool listen_after_bind();
  void stop();

  RecordStore& store() { return store_; }
  const ModelRegistry& registry() const { return registry_; }
  const ServiceConfig& config() const { return config_; }

 private:
  void install_routes();

  ServiceConfig config_;
  ModelRegistry registry_;
  RecordStore store_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cxr

#endif  // CXR_SERVICE_HPP
