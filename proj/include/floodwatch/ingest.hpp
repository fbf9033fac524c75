#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "floodwatch/common.hpp"
#include "floodwatch/registry.hpp"

namespace floodwatch {

struct CaptureConfig {
  std::size_t pool_size = 256;
  std::chrono::milliseconds per_stream_deadline{15000};
  std::chrono::milliseconds grace{2000};
  std::chrono::seconds network_budget{60};
  std::chrono::seconds round_budget{300};
  int jpeg_quality = 85;
  /// When set, frames are written to <spool_dir>/<round_id>/<tvid>.jpg.
  std::optional<std::filesystem::path> spool_dir;

  void validate() const;
};

enum class FailureKind { connect_error, timeout, decode_error, empty_stream };

std::string_view to_string(FailureKind k);

struct CapturedFrame {
  std::vector<std::uint8_t> jpeg;  // canonical baseline JPEG
  int width = 0;
  int height = 0;
};

struct CaptureFailure {
  FailureKind kind = FailureKind::connect_error;
  std::string detail;
};

struct CaptureResult {
  std::string tvid;
  std::variant<CapturedFrame, CaptureFailure> outcome;
  Timestamp captured_at{};
  std::chrono::milliseconds elapsed{0};
  std::optional<std::filesystem::path> frame_path;

  bool ok() const { return std::holds_alternative<CapturedFrame>(outcome); }
  const CapturedFrame* frame() const { return std::get_if<CapturedFrame>(&outcome); }
  const CaptureFailure* failure() const { return std::get_if<CaptureFailure>(&outcome); }
};

struct RoundResult {
  std::uint64_t round_id = 0;
  std::vector<CaptureResult> results;  // registry order
  Timestamp started_at{};
  Timestamp finished_at{};

  std::chrono::milliseconds wall_time() const { return finished_at - started_at; }
  std::size_t failures(FailureKind kind) const;
  std::size_t successes() const;
};

/// Incremental parser for multipart/x-mixed-replace bodies. Yields the first
/// complete part; parts with a Content-Length are cut exactly, others run to
/// the next boundary.
class MultipartFrameReader {
 public:
  explicit MultipartFrameReader(std::string boundary);

  /// Extracts the boundary parameter from a Content-Type header value.
  static std::optional<std::string> boundary_from_content_type(std::string_view content_type);

  /// Returns true once a complete part is available.
  bool feed(std::span<const std::uint8_t> bytes);
  bool complete() const { return complete_; }
  const std::vector<std::uint8_t>& frame() const { return frame_; }
  /// Bytes of a part that was started but not finished (for diagnostics).
  std::span<const std::uint8_t> partial() const;
  std::size_t bytes_seen() const { return seen_; }

 private:
  bool try_extract();

  std::string delimiter_;
  std::vector<std::uint8_t> buffer_;
  std::vector<std::uint8_t> frame_;
  std::size_t seen_ = 0;
  std::size_t body_start_ = 0;
  bool in_part_ = false;
  bool complete_ = false;
  std::optional<std::size_t> content_length_;
};

/// Fetches one frame (single image or first multipart part) within `deadline`,
/// decodes it and re-encodes it as canonical JPEG. Never throws for camera
/// faults; they come back as CaptureFailure.
CaptureResult capture_one(const CameraRecord& camera, std::chrono::milliseconds deadline,
                          int jpeg_quality = 85);

/// In-flight instrumentation for a round.
struct CaptureProbe {
  std::atomic<std::size_t> in_flight{0};
  std::atomic<std::size_t> max_in_flight{0};
  std::atomic<std::size_t> started{0};
};

/// Attempts every camera exactly once with at most pool_size captures in
/// flight. The result is complete even if every capture fails.
RoundResult run_round(const CameraRegistry& registry, const CaptureConfig& config,
                      std::uint64_t round_id = 1, CaptureProbe* probe = nullptr);

struct PoolTiming {
  std::size_t pool_size = 0;
  std::chrono::milliseconds wall{0};
  std::size_t successes = 0;
};

std::vector<PoolTiming> measure_pool_sweep(const CameraRegistry& registry,
                                           std::span<const std::size_t> pool_sizes,
                                           const CaptureConfig& base = {});

}  // namespace floodwatch
