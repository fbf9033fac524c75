#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "floodwatch/classifier.hpp"
#include "floodwatch/common.hpp"
#include "floodwatch/detections.hpp"
#include "floodwatch/ingest.hpp"
#include "floodwatch/registry.hpp"

namespace floodwatch {

enum class CameraState { flood, normal, unknown, no_video };

std::string_view to_string(CameraState s);
/// red, green, gray, white
std::string_view color_of(CameraState s);
std::optional<CameraState> camera_state_from_string(std::string_view s);

struct CameraStatus {
  std::string tvid;
  CameraState state = CameraState::no_video;
  std::optional<ClassProbabilities> probabilities;
  /// Grader output for flood cameras when a detector is configured. Rides
  /// along with the classifier label; it never changes `state`.
  std::optional<CameraAssessment> water_level;
  /// Failure kind for no_video cameras.
  std::optional<std::string> failure;
  Timestamp observed_at{};
  std::optional<std::string> frame_ref;

  double longitude = 0.0;
  double latitude = 0.0;
  std::string roadsection;

  friend bool operator==(const CameraStatus&, const CameraStatus&) = default;
};

struct StatusCounts {
  std::size_t red = 0;
  std::size_t green = 0;
  std::size_t gray = 0;
  std::size_t white = 0;

  std::size_t total() const { return red + green + gray + white; }
  friend bool operator==(const StatusCounts&, const StatusCounts&) = default;
};

struct MapState {
  std::uint64_t round_id = 0;
  std::vector<CameraStatus> statuses;  // registry order
  Timestamp capture_started_at{};
  Timestamp generated_at{};

  const CameraStatus* find(std::string_view tvid) const;
  StatusCounts counts() const;
  std::set<std::string> flood_tvids() const;

  friend bool operator==(const MapState&, const MapState&) = default;
};

class ConsistencyError : public std::logic_error {
 public:
  explicit ConsistencyError(const std::string& what) : std::logic_error(what) {}
};

using LabelMap = std::map<std::string, SceneLabel, std::less<>>;
using AssessmentMap = std::map<std::string, CameraAssessment, std::less<>>;

/// Pure fold of one round into a fresh map state. Failed captures become
/// no_video; every successful capture needs a label (ConsistencyError
/// otherwise). Cameras absent from the round are no_video as well.
/// `generated_at` defaults to the round's finish time.
MapState update_map(const CameraRegistry& registry, const RoundResult& round,
                    const LabelMap& labels, const AssessmentMap& levels = {},
                    std::optional<Timestamp> generated_at = std::nullopt);

/// RFC 7946 FeatureCollection, one Point per camera in [lon, lat] order.
/// round_id, capture_started_at and generated_at are top-level foreign members.
std::string to_geojson(const MapState& state, int indent = -1);
MapState from_geojson(std::string_view text);
/// The GeoJSON Feature for one camera.
std::string camera_feature_json(const CameraStatus& status, int indent = -1);

struct FloodEvent {
  std::size_t event_number = 0;
  std::string tvid;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string roadsection;
  std::optional<std::string> frame_ref;
  std::optional<ClassProbabilities> probabilities;
  std::optional<CameraAssessment> water_level;

  friend bool operator==(const FloodEvent&, const FloodEvent&) = default;
};

struct SummaryReport {
  std::uint64_t round_id = 0;
  std::vector<FloodEvent> events;
  std::string map_url;
  Timestamp generated_at{};

  bool empty() const { return events.empty(); }
  /// Webhook payload document.
  std::string to_json(int indent = -1) const;
  static SummaryReport from_json(std::string_view text);

  friend bool operator==(const SummaryReport&, const SummaryReport&) = default;
};

/// Flood cameras only, north to south (latitude descending, then longitude
/// ascending, then tvid), numbered from 1.
SummaryReport summary_report(const MapState& state, const std::string& map_url);

enum class RefreshMode { storm_advisory, normal };

std::string_view to_string(RefreshMode m);
std::optional<RefreshMode> refresh_mode_from_string(std::string_view s);

inline constexpr std::chrono::seconds kStormInterval{300};
inline constexpr std::chrono::seconds kNormalInterval{3600};

std::chrono::seconds refresh_interval(RefreshMode mode,
                                      std::optional<std::chrono::seconds> override_interval = {});

/// rounds/{round_id}.geojson under a data directory, keeping the newest
/// `retention` rounds. Writes go through a temp file and rename so readers
/// never see a partial document.
class SnapshotStore {
 public:
  static constexpr std::size_t kDefaultRetention = 288;

  explicit SnapshotStore(std::filesystem::path data_dir,
                         std::size_t retention = kDefaultRetention);

  std::filesystem::path save(const MapState& state);
  std::optional<MapState> load(std::uint64_t round_id) const;
  std::optional<MapState> load_latest() const;
  /// Stored round ids, ascending.
  std::vector<std::uint64_t> rounds() const;

  const std::filesystem::path& rounds_dir() const { return rounds_dir_; }
  const std::filesystem::path& frames_dir() const { return frames_dir_; }

 private:
  void prune();

  std::filesystem::path rounds_dir_;
  std::filesystem::path frames_dir_;
  std::size_t retention_;
  mutable std::mutex mu_;
};

}  // namespace floodwatch
