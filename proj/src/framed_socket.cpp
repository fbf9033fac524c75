#include "floodwatch/framed_socket.hpp"

#include <cerrno>
#include <cstring>

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace floodwatch {

namespace {

sockaddr_un make_address(const std::filesystem::path& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const std::string s = path.string();
  if (s.size() >= sizeof(addr.sun_path)) throw TransportError("socket path too long: " + s);
  std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
  return addr;
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket write: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns bytes read; less than n only on EOF.
std::size_t read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket read: ") + std::strerror(errno));
    }
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

}  // namespace

int connect_unix(const std::filesystem::path& path) {
  const sockaddr_un addr = make_address(path);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int e = errno;
    ::close(fd);
    throw TransportError("connect " + path.string() + ": " + std::strerror(e));
  }
  return fd;
}

int listen_unix(const std::filesystem::path& path, int backlog) {
  const sockaddr_un addr = make_address(path);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd, backlog) != 0) {
    const int e = errno;
    ::close(fd);
    throw TransportError("listen " + path.string() + ": " + std::strerror(e));
  }
  return fd;
}

void write_frame(int fd, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxFramePayload) throw TransportError("frame payload too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  const std::uint8_t header[4] = {static_cast<std::uint8_t>(n >> 24),
                                  static_cast<std::uint8_t>(n >> 16),
                                  static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)};
  write_all(fd, header, 4);
  write_all(fd, payload.data(), payload.size());
}

std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::uint8_t header[4];
  const std::size_t got = read_all(fd, header, 4);
  if (got == 0) return std::nullopt;
  if (got < 4) throw TransportError("truncated frame header");
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFramePayload) throw TransportError("frame payload too large");
  std::vector<std::uint8_t> payload(n);
  if (read_all(fd, payload.data(), n) != n) throw TransportError("truncated frame payload");
  return payload;
}

}  // namespace floodwatch
