#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "floodwatch/common.hpp"
#include "floodwatch/image.hpp"
#include "floodwatch/registry.hpp"

namespace floodwatch {

struct Fault {
  enum class Kind { none, no_connect, stall, noise, truncated_frame };
  Kind kind = Kind::none;
  double stall_seconds = 0.0;

  static Fault none() { return {}; }
  static Fault no_connect() { return {Kind::no_connect, 0.0}; }
  static Fault stall(double seconds) { return {Kind::stall, seconds}; }
  static Fault noise() { return {Kind::noise, 0.0}; }
  static Fault truncated_frame() { return {Kind::truncated_frame, 0.0}; }

  friend bool operator==(const Fault&, const Fault&) = default;
};

/// "none", "no_connect", "stall:<seconds>", "noise", "truncated_frame"
std::string to_string(const Fault& f);
std::optional<Fault> parse_fault(std::string_view text);

enum class ServeMode { single_frame, multipart };

struct SimCamera {
  std::string tvid;
  SceneClass scene = SceneClass::normal;
  Fault fault;
  std::optional<Resolution> frame_size;
  ServeMode mode = ServeMode::single_frame;

  // Registry metadata for the generated CameraRecord.
  std::string network = "SIM";
  double longitude = 121.5;
  double latitude = 25.0;
  std::string roadsection;
  std::optional<Codec> codec;
};

struct SimScenario {
  std::vector<SimCamera> cameras;
  Resolution frame_size{640, 480};
  std::chrono::milliseconds frame_interval{1000};
  std::string host = "127.0.0.1";
  /// 0: every camera gets an ephemeral port. Otherwise camera i listens on base_port + i.
  std::uint16_t base_port = 0;
  /// 0: chosen from the core count.
  unsigned event_loops = 0;

  void validate() const;
  static SimScenario parse(std::string_view json_text);
  std::string serialize() const;
};

/// Reference fleet with the network split (DGH 1424, NTPC 289, TYC 152
/// incl. 29 FLV sewer cameras, TNC 148, KC 341, NC 25 = 2379), with each
/// network's resolution list and codec. Smaller `total` scales the split
/// proportionally. Coordinates are deterministic pseudo-random points inside
/// each network's service area.
SimScenario reference_fleet(std::size_t total = 2379, std::uint64_t seed = 2379);

/// Synthetic scene with the class band across the top rows.
Image render_scene(Resolution size, SceneClass scene);
/// Adds bounded uniform noise in place (deterministic for a seed).
void add_pixel_noise(Image& img, std::uint64_t seed, int amplitude = 12);

/// Encoded frame exactly as the simulator would serve it.
std::vector<std::uint8_t> make_tagged_frame(Resolution size, SceneClass scene,
                                            std::string_view tvid, std::uint64_t sequence,
                                            bool noisy = false);

class SpawnError : public std::runtime_error {
 public:
  explicit SpawnError(const std::string& what) : std::runtime_error(what) {}
};

/// Synthetic camera fleet served over HTTP on loopback.
///
///   GET /cam/{tvid}/frame   single image/jpeg response
///   GET /cam/{tvid}/stream  multipart/x-mixed-replace, one part per frame_interval
///
/// Each camera listens on its own port so that no_connect refuses connections.
/// Optional admin endpoint: POST /admin/scene {"tvid","scene"},
/// POST /admin/fault {"tvid","fault"}.
class FleetSimulator {
 public:
  static std::unique_ptr<FleetSimulator> spawn(SimScenario scenario);
  ~FleetSimulator();

  FleetSimulator(const FleetSimulator&) = delete;
  FleetSimulator& operator=(const FleetSimulator&) = delete;

  /// One URL per camera in scenario order, /frame or /stream by ServeMode.
  std::vector<std::string> endpoints() const;
  std::string frame_url(std::string_view tvid) const;
  std::string stream_url(std::string_view tvid) const;

  /// Registry whose urls point at this fleet.
  CameraRegistry registry() const;

  void set_scene(std::string_view tvid, SceneClass scene);
  void inject_fault(std::string_view tvid, const Fault& fault);
  SceneClass scene(std::string_view tvid) const;
  Fault fault(std::string_view tvid) const;

  /// Starts the admin HTTP endpoint; returns the bound port.
  std::uint16_t start_admin(std::uint16_t port = 0);

  std::uint64_t frames_served() const;
  std::size_t size() const;
  void stop();

 private:
  struct Impl;
  explicit FleetSimulator(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace floodwatch
