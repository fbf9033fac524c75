#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace floodwatch {

using Clock = std::chrono::system_clock;
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

inline Timestamp now_ms() {
  return std::chrono::floor<std::chrono::milliseconds>(Clock::now());
}

// ISO-8601 UTC with millisecond precision, e.g. 2021-08-07T04:05:06.789Z.
std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view text);

enum class SceneClass : std::uint8_t { normal = 0, flood = 1, unknown = 2 };

std::string_view to_string(SceneClass c);
std::optional<SceneClass> scene_class_from_string(std::string_view s);

struct Resolution {
  int width = 0;
  int height = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

class NotFound : public std::runtime_error {
 public:
  explicit NotFound(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// True for `scheme:rest` with an RFC 3986 scheme and a non-empty remainder.
bool is_valid_uri(std::string_view uri);

}  // namespace floodwatch
