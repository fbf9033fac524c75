#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace floodwatch {

/// Interleaved 8-bit RGB, rows top to bottom.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::size_t stride() const { return static_cast<std::size_t>(width) * 3; }
  std::uint8_t* row(int y) { return rgb.data() + stride() * y; }
  const std::uint8_t* row(int y) const { return rgb.data() + stride() * y; }
  bool empty() const { return width == 0 || height == 0; }

  friend bool operator==(const Image&, const Image&) = default;
};

class DecodeError : public std::runtime_error {
 public:
  explicit DecodeError(const std::string& what) : std::runtime_error(what) {}
};

/// Decodes a baseline/progressive JPEG to RGB. Any libjpeg warning (premature
/// end of data, corrupt segment) is treated as failure.
Image decode_jpeg(std::span<const std::uint8_t> bytes);

/// Encodes RGB to JPEG. A non-empty `comment` is written as a COM segment.
std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality, std::string_view comment = {});

/// Returns the first COM segment payload, scanning markers only (no decode).
std::optional<std::string> read_jpeg_comment(std::span<const std::uint8_t> bytes);

/// Inserts a COM segment after SOI (and after a leading APP0 when present).
std::vector<std::uint8_t> splice_jpeg_comment(std::span<const std::uint8_t> jpeg, std::string_view comment);

}  // namespace floodwatch
