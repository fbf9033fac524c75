#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "floodwatch/classifier.hpp"
#include "floodwatch/detections.hpp"
#include "floodwatch/event_map.hpp"
#include "floodwatch/ingest.hpp"
#include "floodwatch/notifier.hpp"
#include "floodwatch/registry.hpp"

namespace floodwatch {

struct ClassifierChoice {
  enum class Kind { stub, external };
  Kind kind = Kind::stub;
  std::filesystem::path socket_path;
};

struct DetectorChoice {
  enum class Kind { external, records };
  Kind kind = Kind::external;
  std::filesystem::path path;  // socket or record directory
};

/// Pipeline configuration file (JSON, UTF-8). Keys:
///
///   registry              camera registry path (required)
///   data_dir              default "floodwatch-data"
///   mode                  "storm_advisory" | "normal"
///   interval_override_s   optional, >= 60
///   listen                "host:port", default "127.0.0.1:8080"
///   map_url               link sent with reports; default http://{listen}/map.geojson
///   retention             snapshot rounds kept, default 288
///   store_frames          write frames/{round_id}/{tvid}.jpg, default true
///   classify_workers      0 = hardware concurrency
///   tire                  reference tire marking, default "215/60R16"
///   capture               {pool_size, deadline_ms, grace_ms, network_budget_s,
///                          round_budget_s, jpeg_quality}
///   classifier            {"backend": "stub"} | {"backend": "external", "socket": path}
///   detector              {"backend": "external", "socket": path} |
///                         {"backend": "records", "dir": path}
///   notification          {enabled, mode, min_gap_s, recipients: [url...]}
///
/// Relative paths resolve against the config file's directory. Unknown keys
/// are rejected.
struct PipelineConfig {
  std::filesystem::path registry_path;
  CaptureConfig capture;
  RefreshMode mode = RefreshMode::storm_advisory;
  std::optional<std::chrono::seconds> interval_override;
  ClassifierChoice classifier;
  std::optional<DetectorChoice> detector;
  WaterLevelConfig water_level;
  bool notifications_enabled = false;
  NotificationPolicy notification;
  std::string map_url;
  std::filesystem::path data_dir = "floodwatch-data";
  std::string listen_address = "127.0.0.1:8080";
  std::size_t retention = SnapshotStore::kDefaultRetention;
  bool store_frames = true;
  unsigned classify_workers = 0;

  static PipelineConfig parse(std::string_view json_text,
                              const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);

  /// FLOODWATCH_MODE and FLOODWATCH_LISTEN.
  void apply_env();
  /// Paths exist, interval_override >= 60, capture and policy settings sane.
  void validate() const;

  std::chrono::seconds interval() const { return refresh_interval(mode, interval_override); }
  std::string effective_map_url() const;
};

/// "host:port" split; throws ConfigError.
std::pair<std::string, std::uint16_t> parse_listen_address(std::string_view text);

struct RoundMetrics {
  std::uint64_t round_id = 0;
  Timestamp started_at{};
  std::size_t cameras = 0;
  std::int64_t capture_wall_ms = 0;
  std::int64_t classify_wall_ms = 0;  // includes water-level sensing
  std::int64_t map_wall_ms = 0;       // update + persist
  std::int64_t notify_wall_ms = 0;
  std::int64_t total_wall_ms = 0;
  std::map<std::string, std::size_t> failures;  // by FailureKind name
  StatusCounts counts;
  std::size_t deliveries = 0;
  bool fresh = true;  // generated_at - capture start within the interval

  std::string to_json() const;
  static RoundMetrics from_json(std::string_view text);
};

/// Next tick strictly after `now` on the grid anchor + k * tick. Missed ticks
/// are skipped rather than queued.
Timestamp next_tick_after(Timestamp anchor, std::chrono::seconds tick, Timestamp now);

class Pipeline {
 public:
  struct Snapshot {
    MapState state;
    SummaryReport report;
    std::string geojson;
    std::string events_json;
  };

  /// Loads the registry (startup abort on failure) and the newest persisted
  /// snapshot. Backends may be injected; otherwise they come from the config.
  explicit Pipeline(PipelineConfig config,
                    std::shared_ptr<ClassifierBackend> classifier = nullptr,
                    std::shared_ptr<DetectorBackend> detector = nullptr,
                    std::shared_ptr<WebhookTransport> transport = nullptr);

  /// capture -> classify -> water level -> map -> persist -> notify.
  RoundMetrics run_once();

  /// Fixed-tick scheduler; returns when `stop` is requested. The round in
  /// flight is allowed to finish.
  void run(std::stop_token stop);

  std::shared_ptr<const Snapshot> snapshot() const;
  std::vector<RoundMetrics> metrics() const;
  const CameraRegistry& registry() const { return registry_; }
  const PipelineConfig& config() const { return config_; }
  CaptureProbe& probe() { return probe_; }
  Notifier& notifier() { return *notifier_; }
  const SnapshotStore& store() const { return store_; }

 private:
  void publish(MapState state);

  PipelineConfig config_;
  CameraRegistry registry_;
  std::shared_ptr<ClassifierBackend> classifier_;
  std::shared_ptr<DetectorBackend> detector_;
  SnapshotStore store_;
  std::unique_ptr<Notifier> notifier_;
  CaptureProbe probe_;

  std::mutex round_mu_;  // one round at a time
  std::uint64_t next_round_id_ = 1;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snapshot_;

  mutable std::mutex metrics_mu_;
  std::vector<RoundMetrics> metrics_;
  std::filesystem::path metrics_log_;
};

/// Read API over a pipeline's snapshots.
///
///   GET /map.geojson     latest MapState (503 before the first round)
///   GET /events          latest SummaryReport (503 before the first round)
///   GET /camera/{tvid}   one camera's Feature (404 unknown tvid)
///   GET /metrics         RoundMetrics history
///   GET /healthz         liveness
class ApiServer {
 public:
  explicit ApiServer(Pipeline& pipeline);
  ~ApiServer();

  /// Binds and serves on a background thread; port 0 picks one. Returns the
  /// bound port.
  std::uint16_t start(const std::string& host, std::uint16_t port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace floodwatch
