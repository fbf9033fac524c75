#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace floodwatch {

class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// Length-prefixed frames over a stream socket: 4-byte big-endian payload
/// length followed by the payload.
inline constexpr std::uint32_t kMaxFramePayload = 64u << 20;

int connect_unix(const std::filesystem::path& path);
/// Listening UNIX socket bound at `path` (an existing socket file is replaced).
int listen_unix(const std::filesystem::path& path, int backlog = 16);

void write_frame(int fd, std::span<const std::uint8_t> payload);
/// Returns nothing on clean EOF before the header; throws on short reads.
std::optional<std::vector<std::uint8_t>> read_frame(int fd);

}  // namespace floodwatch
