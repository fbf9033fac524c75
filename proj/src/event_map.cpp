#include "floodwatch/event_map.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

namespace floodwatch {

using json = nlohmann::ordered_json;

std::string_view to_string(CameraState s) {
  switch (s) {
    case CameraState::flood:
      return "flood";
    case CameraState::normal:
      return "normal";
    case CameraState::unknown:
      return "unknown";
    case CameraState::no_video:
      return "no_video";
  }
  return "no_video";
}

std::string_view color_of(CameraState s) {
  switch (s) {
    case CameraState::flood:
      return "red";
    case CameraState::normal:
      return "green";
    case CameraState::unknown:
      return "gray";
    case CameraState::no_video:
      return "white";
  }
  return "white";
}

std::optional<CameraState> camera_state_from_string(std::string_view s) {
  for (auto st : {CameraState::flood, CameraState::normal, CameraState::unknown,
                  CameraState::no_video}) {
    if (s == to_string(st)) return st;
  }
  return std::nullopt;
}

const CameraStatus* MapState::find(std::string_view tvid) const {
  for (const auto& s : statuses) {
    if (s.tvid == tvid) return &s;
  }
  return nullptr;
}

StatusCounts MapState::counts() const {
  StatusCounts c;
  for (const auto& s : statuses) {
    switch (s.state) {
      case CameraState::flood:
        ++c.red;
        break;
      case CameraState::normal:
        ++c.green;
        break;
      case CameraState::unknown:
        ++c.gray;
        break;
      case CameraState::no_video:
        ++c.white;
        break;
    }
  }
  return c;
}

std::set<std::string> MapState::flood_tvids() const {
  std::set<std::string> out;
  for (const auto& s : statuses) {
    if (s.state == CameraState::flood) out.insert(s.tvid);
  }
  return out;
}

namespace {

CameraState state_of(SceneClass c) {
  switch (c) {
    case SceneClass::flood:
      return CameraState::flood;
    case SceneClass::normal:
      return CameraState::normal;
    case SceneClass::unknown:
      return CameraState::unknown;
  }
  return CameraState::unknown;
}

}  // namespace

MapState update_map(const CameraRegistry& registry, const RoundResult& round,
                    const LabelMap& labels, const AssessmentMap& levels,
                    std::optional<Timestamp> generated_at) {
  std::map<std::string_view, const CaptureResult*> by_tvid;
  for (const auto& r : round.results) by_tvid[r.tvid] = &r;

  MapState state;
  state.round_id = round.round_id;
  state.capture_started_at = round.started_at;
  state.generated_at = generated_at.value_or(round.finished_at);
  state.statuses.reserve(registry.size());

  for (const auto& cam : registry.records()) {
    CameraStatus st;
    st.tvid = cam.tvid;
    st.longitude = cam.longitude;
    st.latitude = cam.latitude;
    st.roadsection = cam.roadsection;
    st.observed_at = round.started_at;

    auto it = by_tvid.find(cam.tvid);
    if (it == by_tvid.end()) {
      st.state = CameraState::no_video;
      st.failure = "not_attempted";
    } else if (const auto* f = it->second->failure()) {
      st.state = CameraState::no_video;
      st.failure = std::string(to_string(f->kind));
      st.observed_at = it->second->captured_at;
    } else {
      const CaptureResult& r = *it->second;
      auto lab = labels.find(cam.tvid);
      if (lab == labels.end()) {
        throw ConsistencyError("no label for captured camera " + cam.tvid);
      }
      st.state = state_of(lab->second.label);
      st.probabilities = lab->second.probabilities;
      st.observed_at = r.captured_at;
      if (r.frame_path) st.frame_ref = r.frame_path->string();
      if (auto lv = levels.find(cam.tvid); lv != levels.end()) st.water_level = lv->second;
    }
    state.statuses.push_back(std::move(st));
  }
  return state;
}

// --- JSON helpers -----------------------------------------------------------

namespace {

json probs_to_json(const ClassProbabilities& p) {
  return json{{"normal", p.normal}, {"flood", p.flood}, {"unknown", p.unknown}};
}

ClassProbabilities probs_from_json(const json& j) {
  ClassProbabilities p;
  p.normal = j.at("normal").get<double>();
  p.flood = j.at("flood").get<double>();
  p.unknown = j.at("unknown").get<double>();
  return p;
}

json assessment_to_json(const CameraAssessment& a) {
  json j;
  j["grade"] = std::string(to_string(a.grade));
  if (a.estimate) {
    const auto& e = *a.estimate;
    j["flood_fraction"] = e.flood_fraction;
    j["depth_cm"] = e.depth_cm;
    j["wheel_diameter_cm"] = e.wheel_diameter_cm;
    j["compensation"] = e.compensation;
    j["tire"] = e.tire.marking();
  } else {
    j["flood_fraction"] = nullptr;
    j["depth_cm"] = nullptr;
  }
  return j;
}

CameraAssessment assessment_from_json(const json& j) {
  CameraAssessment a;
  auto g = grade_from_string(j.at("grade").get<std::string>());
  if (!g) throw std::runtime_error("unknown grade in document");
  a.grade = *g;
  if (j.contains("depth_cm") && !j["depth_cm"].is_null()) {
    WaterLevelEstimate e;
    e.flood_fraction = j.at("flood_fraction").get<double>();
    e.depth_cm = j.at("depth_cm").get<double>();
    e.wheel_diameter_cm = j.at("wheel_diameter_cm").get<double>();
    e.compensation = j.at("compensation").get<bool>();
    e.tire = TireSpec::parse(j.at("tire").get<std::string>());
    e.grade = a.grade;
    a.estimate = e;
  }
  return a;
}

template <typename T, typename F>
json opt(const std::optional<T>& v, F&& f) {
  return v ? json(f(*v)) : json(nullptr);
}

json feature_of(const CameraStatus& s) {
  json props;
  props["tvid"] = s.tvid;
  props["status"] = std::string(to_string(s.state));
  props["color"] = std::string(color_of(s.state));
  props["roadsection"] = s.roadsection;
  props["observed_at"] = format_timestamp(s.observed_at);
  props["probabilities"] = opt(s.probabilities, probs_to_json);
  props["water_level"] = opt(s.water_level, assessment_to_json);
  props["failure"] = opt(s.failure, [](const std::string& x) { return x; });
  props["frame_ref"] = opt(s.frame_ref, [](const std::string& x) { return x; });
  json geom{{"type", "Point"}, {"coordinates", json::array({s.longitude, s.latitude})}};
  return json{{"type", "Feature"}, {"geometry", std::move(geom)}, {"properties", std::move(props)}};
}

CameraStatus status_of(const json& feature) {
  if (feature.at("type") != "Feature") throw std::runtime_error("expected a Feature");
  const json& geom = feature.at("geometry");
  const json& coords = geom.at("coordinates");
  if (geom.at("type") != "Point" || !coords.is_array() || coords.size() < 2) {
    throw std::runtime_error("expected a Point geometry");
  }
  const json& p = feature.at("properties");
  CameraStatus s;
  s.tvid = p.at("tvid").get<std::string>();
  auto st = camera_state_from_string(p.at("status").get<std::string>());
  if (!st) throw std::runtime_error("unknown status for " + s.tvid);
  s.state = *st;
  s.longitude = coords[0].get<double>();
  s.latitude = coords[1].get<double>();
  s.roadsection = p.value("roadsection", std::string{});
  s.observed_at = parse_timestamp(p.at("observed_at").get<std::string>());
  if (p.contains("probabilities") && !p["probabilities"].is_null()) {
    s.probabilities = probs_from_json(p["probabilities"]);
  }
  if (p.contains("water_level") && !p["water_level"].is_null()) {
    s.water_level = assessment_from_json(p["water_level"]);
  }
  if (p.contains("failure") && !p["failure"].is_null()) s.failure = p["failure"].get<std::string>();
  if (p.contains("frame_ref") && !p["frame_ref"].is_null()) {
    s.frame_ref = p["frame_ref"].get<std::string>();
  }
  return s;
}

}  // namespace

std::string to_geojson(const MapState& state, int indent) {
  json doc;
  doc["type"] = "FeatureCollection";
  doc["round_id"] = state.round_id;
  doc["capture_started_at"] = format_timestamp(state.capture_started_at);
  doc["generated_at"] = format_timestamp(state.generated_at);
  json features = json::array();
  for (const auto& s : state.statuses) features.push_back(feature_of(s));
  doc["features"] = std::move(features);
  return doc.dump(indent);
}

std::string camera_feature_json(const CameraStatus& status, int indent) {
  return feature_of(status).dump(indent);
}

MapState from_geojson(std::string_view text) {
  const json doc = json::parse(text.begin(), text.end());
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection") {
    throw std::runtime_error("not a FeatureCollection");
  }
  MapState state;
  state.round_id = doc.value("round_id", std::uint64_t{0});
  if (doc.contains("capture_started_at")) {
    state.capture_started_at = parse_timestamp(doc["capture_started_at"].get<std::string>());
  }
  if (doc.contains("generated_at")) {
    state.generated_at = parse_timestamp(doc["generated_at"].get<std::string>());
  }
  for (const auto& f : doc.at("features")) state.statuses.push_back(status_of(f));
  return state;
}

// --- summary report -----------------------------------------------------------

std::string SummaryReport::to_json(int indent) const {
  json doc;
  doc["round_id"] = round_id;
  doc["generated_at"] = format_timestamp(generated_at);
  doc["map_url"] = map_url;
  doc["event_count"] = events.size();
  json arr = json::array();
  for (const auto& e : events) {
    json j;
    j["event_number"] = e.event_number;
    j["tvid"] = e.tvid;
    j["latitude"] = e.latitude;
    j["longitude"] = e.longitude;
    j["roadsection"] = e.roadsection;
    j["frame_ref"] = opt(e.frame_ref, [](const std::string& x) { return x; });
    j["probabilities"] = opt(e.probabilities, probs_to_json);
    if (e.probabilities) {
      j["confidence"] = format_confidence(SceneLabel{SceneClass::flood, *e.probabilities, {}});
    }
    j["water_level"] = opt(e.water_level, assessment_to_json);
    arr.push_back(std::move(j));
  }
  doc["events"] = std::move(arr);
  return doc.dump(indent);
}

SummaryReport SummaryReport::from_json(std::string_view text) {
  const json doc = json::parse(text.begin(), text.end());
  SummaryReport r;
  r.round_id = doc.at("round_id").get<std::uint64_t>();
  r.generated_at = parse_timestamp(doc.at("generated_at").get<std::string>());
  r.map_url = doc.at("map_url").get<std::string>();
  for (const auto& j : doc.at("events")) {
    FloodEvent e;
    e.event_number = j.at("event_number").get<std::size_t>();
    e.tvid = j.at("tvid").get<std::string>();
    e.latitude = j.at("latitude").get<double>();
    e.longitude = j.at("longitude").get<double>();
    e.roadsection = j.value("roadsection", std::string{});
    if (!j.at("frame_ref").is_null()) e.frame_ref = j["frame_ref"].get<std::string>();
    if (!j.at("probabilities").is_null()) e.probabilities = probs_from_json(j["probabilities"]);
    if (!j.at("water_level").is_null()) e.water_level = assessment_from_json(j["water_level"]);
    r.events.push_back(std::move(e));
  }
  return r;
}

SummaryReport summary_report(const MapState& state, const std::string& map_url) {
  SummaryReport report;
  report.round_id = state.round_id;
  report.map_url = map_url;
  report.generated_at = state.generated_at;
  for (const auto& s : state.statuses) {
    if (s.state != CameraState::flood) continue;
    report.events.push_back(FloodEvent{0, s.tvid, s.latitude, s.longitude, s.roadsection,
                                       s.frame_ref, s.probabilities, s.water_level});
  }
  std::sort(report.events.begin(), report.events.end(), [](const auto& a, const auto& b) {
    if (a.latitude != b.latitude) return a.latitude > b.latitude;
    if (a.longitude != b.longitude) return a.longitude < b.longitude;
    return a.tvid < b.tvid;
  });
  for (std::size_t i = 0; i < report.events.size(); ++i) report.events[i].event_number = i + 1;
  return report;
}

// --- refresh ------------------------------------------------------------------

std::string_view to_string(RefreshMode m) {
  return m == RefreshMode::storm_advisory ? "storm_advisory" : "normal";
}

std::optional<RefreshMode> refresh_mode_from_string(std::string_view s) {
  if (s == "storm_advisory" || s == "storm") return RefreshMode::storm_advisory;
  if (s == "normal") return RefreshMode::normal;
  return std::nullopt;
}

std::chrono::seconds refresh_interval(RefreshMode mode,
                                      std::optional<std::chrono::seconds> override_interval) {
  if (override_interval) return *override_interval;
  return mode == RefreshMode::storm_advisory ? kStormInterval : kNormalInterval;
}

// --- snapshots ------------------------------------------------------------------

namespace fs = std::filesystem;

SnapshotStore::SnapshotStore(fs::path data_dir, std::size_t retention)
    : rounds_dir_(data_dir / "rounds"), frames_dir_(data_dir / "frames"), retention_(retention) {
  if (retention_ == 0) throw ConfigError("snapshot retention must be >= 1");
  fs::create_directories(rounds_dir_);
}

fs::path SnapshotStore::save(const MapState& state) {
  std::lock_guard lock(mu_);
  const fs::path final_path = rounds_dir_ / (std::to_string(state.round_id) + ".geojson");
  const fs::path tmp = rounds_dir_ / (std::to_string(state.round_id) + ".geojson.tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << to_geojson(state);
    out.flush();
    if (!out) throw std::runtime_error("cannot write snapshot " + tmp.string());
  }
  fs::rename(tmp, final_path);
  prune();
  return final_path;
}

std::vector<std::uint64_t> SnapshotStore::rounds() const {
  std::vector<std::uint64_t> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(rounds_dir_, ec)) {
    if (entry.path().extension() != ".geojson") continue;
    const std::string stem = entry.path().stem().string();
    std::uint64_t id = 0;
    auto [ptr, err] = std::from_chars(stem.data(), stem.data() + stem.size(), id);
    if (err == std::errc{} && ptr == stem.data() + stem.size()) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<MapState> SnapshotStore::load(std::uint64_t round_id) const {
  std::ifstream in(rounds_dir_ / (std::to_string(round_id) + ".geojson"), std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  return from_geojson(ss.str());
}

std::optional<MapState> SnapshotStore::load_latest() const {
  auto ids = rounds();
  // Newest readable snapshot; a corrupt file falls back to the one before.
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    try {
      if (auto s = load(*it)) return s;
    } catch (const std::exception& e) {
      spdlog::warn("snapshot {} unreadable: {}", *it, e.what());
    }
  }
  return std::nullopt;
}

void SnapshotStore::prune() {
  auto ids = rounds();
  if (ids.size() <= retention_) return;
  std::error_code ec;
  for (std::size_t i = 0; i + retention_ < ids.size(); ++i) {
    fs::remove(rounds_dir_ / (std::to_string(ids[i]) + ".geojson"), ec);
    fs::remove_all(frames_dir_ / std::to_string(ids[i]), ec);
  }
}

}  // namespace floodwatch
