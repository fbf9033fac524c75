#include "floodwatch/scene_tag.hpp"

#include <charconv>
#include <cmath>

namespace floodwatch {

namespace {

constexpr std::string_view kPrefix = "FWTAG/1 ";

// Mean-color distance and per-channel spread accepted as a band match.
constexpr double kMaxColorDistance = 48.0;
constexpr double kMaxChannelStddev = 24.0;

std::optional<std::string_view> take_field(std::string_view& rest, std::string_view key) {
  if (!rest.starts_with(key)) return std::nullopt;
  rest.remove_prefix(key.size());
  const auto space = rest.find(' ');
  std::string_view value = rest.substr(0, space);
  rest.remove_prefix(space == std::string_view::npos ? rest.size() : space + 1);
  return value;
}

}  // namespace

std::string encode_scene_tag(const SceneTag& tag) {
  std::string s(kPrefix);
  s += "class=";
  s += to_string(tag.scene);
  s += " seq=";
  s += std::to_string(tag.sequence);
  s += " tvid=";
  s += tag.tvid;
  return s;
}

std::optional<SceneTag> parse_scene_tag(std::string_view text) {
  if (!text.starts_with(kPrefix)) return std::nullopt;
  std::string_view rest = text.substr(kPrefix.size());
  auto cls = take_field(rest, "class=");
  auto seq = take_field(rest, "seq=");
  if (!cls || !seq || !rest.starts_with("tvid=")) return std::nullopt;
  SceneTag tag;
  auto scene = scene_class_from_string(*cls);
  if (!scene) return std::nullopt;
  tag.scene = *scene;
  auto [ptr, ec] = std::from_chars(seq->data(), seq->data() + seq->size(), tag.sequence);
  if (ec != std::errc{} || ptr != seq->data() + seq->size()) return std::nullopt;
  tag.tvid = std::string(rest.substr(5));
  if (tag.tvid.empty()) return std::nullopt;
  return tag;
}

Rgb band_color(SceneClass scene) {
  switch (scene) {
    case SceneClass::normal:
      return {32, 192, 32};
    case SceneClass::flood:
      return {32, 64, 224};
    case SceneClass::unknown:
      return {224, 32, 224};
  }
  return {0, 0, 0};
}

int band_height(int frame_height) {
  return std::max(8, static_cast<int>(std::lround(frame_height * 0.08)));
}

std::optional<SceneClass> read_band(const Image& img) {
  if (img.height < 64 || img.width < 8) return std::nullopt;
  // Rows strictly inside the band, away from chroma bleed at its lower edge.
  const int first = 1;
  const int last = std::max(first + 1, band_height(img.height) * 2 / 3);
  double sum[3] = {0, 0, 0};
  double sq[3] = {0, 0, 0};
  std::size_t count = 0;
  for (int y = first; y < last; ++y) {
    const std::uint8_t* p = img.row(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = p[x * 3 + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += static_cast<std::size_t>(img.width);
  }
  double mean[3];
  for (int c = 0; c < 3; ++c) {
    mean[c] = sum[c] / count;
    const double var = sq[c] / count - mean[c] * mean[c];
    if (std::sqrt(std::max(var, 0.0)) > kMaxChannelStddev) return std::nullopt;
  }
  for (SceneClass s : {SceneClass::normal, SceneClass::flood, SceneClass::unknown}) {
    const Rgb ref = band_color(s);
    double d2 = 0;
    for (int c = 0; c < 3; ++c) d2 += (mean[c] - ref[c]) * (mean[c] - ref[c]);
    if (std::sqrt(d2) < kMaxColorDistance) return s;
  }
  return std::nullopt;
}

}  // namespace floodwatch
