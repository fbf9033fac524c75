#pragma once

// Bridge format between an external vehicle/wheel detector and the wheel
// geometry. Version 1, one JSON document per frame:
//
//   {
//     "version": 1,
//     "tvid": "<camera id>",
//     "vehicles": [
//       {
//         "box": [left, top, right, bottom],          // image pixels, rows grow downward
//         "wheels": [
//           {
//             "box": [left, top, right, bottom],
//             "waterline": 412.0,                    // optional: water's upper bound row
//             "mask_rows": [380.0, 412.0]            // optional: visible wheel mask rows
//           }
//         ]
//       }
//     ]
//   }

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodwatch/water_level.hpp"

namespace floodwatch {

inline constexpr int kDetectionFormatVersion = 1;

class DetectionFormatError : public std::runtime_error {
 public:
  explicit DetectionFormatError(const std::string& what) : std::runtime_error(what) {}
};

struct DetectionRecord {
  std::string tvid;
  std::vector<VehicleContext> vehicles;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

DetectionRecord parse_detection_record(std::string_view text);
std::string serialize_detection_record(const DetectionRecord& record);

/// Per-camera outcome of water-level sensing across every detected vehicle.
struct CameraAssessment {
  Grade grade = Grade::exception;
  std::optional<WaterLevelEstimate> estimate;

  friend bool operator==(const CameraAssessment&, const CameraAssessment&) = default;
};

/// Deepest estimate among graded vehicles; exception only when every vehicle
/// is an exception. No vehicles at all gives no assessment.
std::optional<CameraAssessment> assess(const DetectionRecord& record,
                                       const WaterLevelConfig& cfg = {});

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual DetectionRecord detect(const std::string& tvid, std::span<const std::uint8_t> frame) = 0;
  virtual std::string name() const = 0;
};

/// Same framing as the classifier sidecar; the reply payload is a detection
/// record document.
class SocketDetector final : public DetectorBackend {
 public:
  explicit SocketDetector(std::filesystem::path socket_path);
  ~SocketDetector() override;
  DetectionRecord detect(const std::string& tvid, std::span<const std::uint8_t> frame) override;
  std::string name() const override { return "external:" + path_.string(); }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  int fd_ = -1;
};

/// Reads `<dir>/<tvid>.json` for each camera; a missing file means no
/// vehicles were detected.
class RecordDirectoryDetector final : public DetectorBackend {
 public:
  explicit RecordDirectoryDetector(std::filesystem::path dir);
  DetectionRecord detect(const std::string& tvid, std::span<const std::uint8_t> frame) override;
  std::string name() const override { return "records:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
};

}  // namespace floodwatch
