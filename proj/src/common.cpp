#include "floodwatch/common.hpp"

#include <cctype>
#include <cstdio>
#include <ctime>

namespace floodwatch {

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto secs = floor<seconds>(t);
  const auto ms = (t - secs).count();
  const std::time_t tt = secs.time_since_epoch().count();
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

Timestamp parse_timestamp(std::string_view text) {
  std::tm tm{};
  int ms = 0;
  std::string s(text);
  int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ", &tm.tm_year,
                      &tm.tm_mon, &tm.tm_mday, &tm.tm_hour, &tm.tm_min,
                      &tm.tm_sec, &ms);
  if (n != 7 && n != 6) {
    throw std::invalid_argument("bad timestamp: " + s);
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t tt = timegm(&tm);
  return Timestamp{std::chrono::milliseconds{static_cast<std::int64_t>(tt) * 1000 + ms}};
}

std::string_view to_string(SceneClass c) {
  switch (c) {
    case SceneClass::normal:
      return "normal";
    case SceneClass::flood:
      return "flood";
    case SceneClass::unknown:
      return "unknown";
  }
  return "unknown";
}

std::optional<SceneClass> scene_class_from_string(std::string_view s) {
  if (s == "normal") return SceneClass::normal;
  if (s == "flood") return SceneClass::flood;
  if (s == "unknown") return SceneClass::unknown;
  return std::nullopt;
}

bool is_valid_uri(std::string_view uri) {
  const auto colon = uri.find(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 >= uri.size()) {
    return false;
  }
  if (!std::isalpha(static_cast<unsigned char>(uri[0]))) return false;
  for (std::size_t i = 1; i < colon; ++i) {
    const auto c = static_cast<unsigned char>(uri[i]);
    if (!std::isalnum(c) && c != '+' && c != '-' && c != '.') return false;
  }
  for (char c : uri) {
    if (std::isspace(static_cast<unsigned char>(c)) || std::iscntrl(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  // hierarchical form needs an authority or path after "//"
  if (uri.substr(colon + 1).starts_with("//") && uri.size() <= colon + 3) return false;
  return true;
}

}  // namespace floodwatch
