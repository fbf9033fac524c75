#include "floodwatch/detections.hpp"

#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "floodwatch/framed_socket.hpp"

namespace floodwatch {

using json = nlohmann::json;

namespace {

PixelBox box_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) {
    throw DetectionFormatError(std::string(what) + " box must be [left, top, right, bottom]");
  }
  for (const auto& v : j) {
    if (!v.is_number()) throw DetectionFormatError(std::string(what) + " box must be numeric");
  }
  PixelBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!(b.bottom > b.top) || !(b.right >= b.left)) {
    throw DetectionFormatError(std::string(what) + " box has non-positive extent");
  }
  return b;
}

json box_to(const PixelBox& b) { return json::array({b.left, b.top, b.right, b.bottom}); }

}  // namespace

DetectionRecord parse_detection_record(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw DetectionFormatError(e.what());
  }
  if (!doc.is_object()) throw DetectionFormatError("detection record must be an object");
  if (doc.value("version", 0) != kDetectionFormatVersion) {
    throw DetectionFormatError("unsupported detection record version");
  }
  DetectionRecord rec;
  rec.tvid = doc.value("tvid", std::string{});
  const json vehicles = doc.value("vehicles", json::array());
  if (!vehicles.is_array()) throw DetectionFormatError("'vehicles' must be a list");
  for (const auto& v : vehicles) {
    if (!v.is_object() || !v.contains("box")) throw DetectionFormatError("vehicle needs a box");
    VehicleContext ctx;
    ctx.vehicle_box = box_from(v["box"], "vehicle");
    for (const auto& w : v.value("wheels", json::array())) {
      if (!w.is_object() || !w.contains("box")) throw DetectionFormatError("wheel needs a box");
      WheelObservation obs;
      obs.tvid = rec.tvid;
      obs.box = box_from(w["box"], "wheel");
      if (w.contains("waterline") && !w["waterline"].is_null()) {
        obs.waterline_px = w["waterline"].get<double>();
        if (*obs.waterline_px < obs.box.top || *obs.waterline_px > obs.box.bottom) {
          throw DetectionFormatError("waterline outside the wheel box");
        }
      }
      if (w.contains("mask_rows") && !w["mask_rows"].is_null()) {
        const auto& m = w["mask_rows"];
        if (!m.is_array() || m.size() != 2) throw DetectionFormatError("mask_rows must be [top, bottom]");
        obs.visible_mask_rows = RowSpan{m[0].get<double>(), m[1].get<double>()};
        if (obs.visible_mask_rows->bottom < obs.visible_mask_rows->top) {
          throw DetectionFormatError("mask_rows inverted");
        }
      }
      ctx.wheels.push_back(std::move(obs));
    }
    rec.vehicles.push_back(std::move(ctx));
  }
  return rec;
}

std::string serialize_detection_record(const DetectionRecord& record) {
  json doc;
  doc["version"] = kDetectionFormatVersion;
  doc["tvid"] = record.tvid;
  doc["vehicles"] = json::array();
  for (const auto& v : record.vehicles) {
    json jv;
    jv["box"] = box_to(v.vehicle_box);
    jv["wheels"] = json::array();
    for (const auto& w : v.wheels) {
      json jw;
      jw["box"] = box_to(w.box);
      if (w.waterline_px) jw["waterline"] = *w.waterline_px;
      if (w.visible_mask_rows) {
        jw["mask_rows"] = json::array({w.visible_mask_rows->top, w.visible_mask_rows->bottom});
      }
      jv["wheels"].push_back(std::move(jw));
    }
    doc["vehicles"].push_back(std::move(jv));
  }
  return doc.dump();
}

std::optional<CameraAssessment> assess(const DetectionRecord& record, const WaterLevelConfig& cfg) {
  if (record.vehicles.empty()) return std::nullopt;
  CameraAssessment out;
  for (const auto& vehicle : record.vehicles) {
    const GradeResult g = grade(vehicle, cfg);
    if (!g.estimate) continue;
    if (!out.estimate || g.estimate->depth_cm > out.estimate->depth_cm) {
      out.estimate = g.estimate;
      out.grade = g.grade;
    }
  }
  return out;
}

namespace {

void adopt_tvid(DetectionRecord& rec, const std::string& tvid) {
  rec.tvid = tvid;
  for (auto& v : rec.vehicles) {
    for (auto& w : v.wheels) w.tvid = tvid;
  }
}

}  // namespace

SocketDetector::SocketDetector(std::filesystem::path socket_path) : path_(std::move(socket_path)) {}

SocketDetector::~SocketDetector() {
  if (fd_ >= 0) ::close(fd_);
}

DetectionRecord SocketDetector::detect(const std::string& tvid, std::span<const std::uint8_t> frame) {
  std::lock_guard lock(mu_);
  for (int attempt = 0;; ++attempt) {
    try {
      if (fd_ < 0) fd_ = connect_unix(path_);
      write_frame(fd_, frame);
      auto reply = read_frame(fd_);
      if (!reply) throw TransportError("detector closed the connection");
      DetectionRecord rec = parse_detection_record(
          std::string_view(reinterpret_cast<const char*>(reply->data()), reply->size()));
      if (rec.tvid.empty()) adopt_tvid(rec, tvid);
      return rec;
    } catch (const TransportError&) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = -1;
      if (attempt >= 1) throw;
    }
  }
}

RecordDirectoryDetector::RecordDirectoryDetector(std::filesystem::path dir) : dir_(std::move(dir)) {}

DetectionRecord RecordDirectoryDetector::detect(const std::string& tvid, std::span<const std::uint8_t>) {
  std::ifstream in(dir_ / (tvid + ".json"));
  if (!in) return DetectionRecord{tvid, {}};
  std::stringstream ss;
  ss << in.rdbuf();
  DetectionRecord rec = parse_detection_record(ss.str());
  if (rec.tvid.empty()) adopt_tvid(rec, tvid);
  return rec;
}

}  // namespace floodwatch
