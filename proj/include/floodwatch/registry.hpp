#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "floodwatch/common.hpp"

namespace floodwatch {

enum class Codec { MJPEG, JPEG, FLV };

std::string_view to_string(Codec c);
std::optional<Codec> codec_from_string(std::string_view s);

/// One camera of the fleet as described in the registry document.
///
/// The five standard keys (tvid, Longitude, Latitude, roadsection, url) are
/// required. `codec` and `resolution` are optional extension keys; any other
/// key is kept in `extra` and written back unchanged.
struct CameraRecord {
  std::string tvid;
  double longitude = 0.0;
  double latitude = 0.0;
  std::string roadsection;
  std::string url;
  std::string network;
  std::optional<Codec> codec_hint;
  std::optional<Resolution> resolution_hint;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const CameraRecord&, const CameraRecord&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t line, std::size_t column);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class DuplicateIdError : public std::runtime_error {
 public:
  explicit DuplicateIdError(std::string id);
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string record, const std::string& reason);
  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

/// Immutable, validated camera fleet. Safe to share read-only across threads.
class CameraRegistry {
 public:
  CameraRegistry() = default;

  /// Strict JSON; see README for the trailing-comma note.
  static CameraRegistry parse(std::string_view text);
  static CameraRegistry load(const std::filesystem::path& path);

  /// Builds from records in order. Network keys appear in first-seen order.
  static CameraRegistry from_records(std::vector<CameraRecord> records);

  std::string serialize(int indent = 2) const;

  const CameraRecord* lookup(std::string_view tvid) const;

  /// One row per network key in document order; counts sum to size().
  std::vector<std::pair<std::string, std::size_t>> network_summary() const;

  std::span<const CameraRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Record indices belonging to `network`, in input order.
  std::span<const std::size_t> members(std::string_view network) const;

  friend bool operator==(const CameraRegistry& a, const CameraRegistry& b) {
    return a.records_ == b.records_ && a.network_order_ == b.network_order_;
  }

 private:
  void add_network(const std::string& key);
  void add(CameraRecord rec);

  std::vector<CameraRecord> records_;
  std::vector<std::string> network_order_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_network_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

}  // namespace floodwatch
