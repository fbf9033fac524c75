#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "floodwatch/common.hpp"
#include "floodwatch/image.hpp"

namespace floodwatch {

/// Ground-truth label the simulator embeds in every frame it serves. Carried
/// twice: as a JPEG COM segment and as a solid color band across the top rows.
struct SceneTag {
  SceneClass scene = SceneClass::normal;
  std::string tvid;
  std::uint64_t sequence = 0;

  friend bool operator==(const SceneTag&, const SceneTag&) = default;
};

// "FWTAG/1 class=<c> seq=<n> tvid=<rest of line>"
std::string encode_scene_tag(const SceneTag& tag);
std::optional<SceneTag> parse_scene_tag(std::string_view text);

using Rgb = std::array<std::uint8_t, 3>;

Rgb band_color(SceneClass scene);

/// Band height in rows for a frame of the given height (about 8%, at least 8).
int band_height(int frame_height);

/// Reads the band from an image whose top rows carry it at the same relative
/// height (any size ≥ 64 rows). Returns nothing for untagged content.
std::optional<SceneClass> read_band(const Image& img);

}  // namespace floodwatch
