#include "floodwatch/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <queue>
#include <random>
#include <thread>
#include <tuple>
#include <unordered_map>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/epoll.h>
#include <sys/eventfd.h>
#include <sys/resource.h>
#include <sys/socket.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "floodwatch/scene_tag.hpp"

namespace floodwatch {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Faults and scenarios

std::string to_string(const Fault& f) {
  switch (f.kind) {
    case Fault::Kind::none:
      return "none";
    case Fault::Kind::no_connect:
      return "no_connect";
    case Fault::Kind::stall: {
      char buf[48];
      std::snprintf(buf, sizeof buf, "stall:%g", f.stall_seconds);
      return buf;
    }
    case Fault::Kind::noise:
      return "noise";
    case Fault::Kind::truncated_frame:
      return "truncated_frame";
  }
  return "none";
}

std::optional<Fault> parse_fault(std::string_view text) {
  if (text == "none") return Fault::none();
  if (text == "no_connect") return Fault::no_connect();
  if (text == "noise") return Fault::noise();
  if (text == "truncated_frame") return Fault::truncated_frame();
  if (text.starts_with("stall:")) {
    try {
      std::size_t used = 0;
      const std::string num(text.substr(6));
      const double s = std::stod(num, &used);
      if (used != num.size() || !(s >= 0.0) || !std::isfinite(s)) return std::nullopt;
      return Fault::stall(s);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

void SimScenario::validate() const {
  if (frame_size.width <= 0 || frame_size.height <= 0) throw std::invalid_argument("bad frame_size");
  if (frame_interval.count() <= 0) throw std::invalid_argument("frame_interval must be positive");
  if (base_port != 0 && base_port + cameras.size() > 65536) {
    throw std::invalid_argument("port range exceeds 65535");
  }
  std::map<std::string_view, int> seen;
  for (const auto& cam : cameras) {
    if (cam.tvid.empty()) throw std::invalid_argument("camera with empty tvid");
    if (seen[cam.tvid]++ > 0) throw std::invalid_argument("duplicate tvid in scenario: " + cam.tvid);
    if (cam.frame_size && (cam.frame_size->width <= 0 || cam.frame_size->height <= 0)) {
      throw std::invalid_argument("bad frame_size for " + cam.tvid);
    }
  }
}

SimScenario SimScenario::parse(std::string_view text) {
  const json doc = json::parse(text.begin(), text.end());
  SimScenario sc;
  if (doc.contains("frame_size")) {
    sc.frame_size = {doc["frame_size"].at(0).get<int>(), doc["frame_size"].at(1).get<int>()};
  }
  sc.frame_interval = std::chrono::milliseconds(doc.value("frame_interval_ms", 1000));
  sc.host = doc.value("host", std::string("127.0.0.1"));
  sc.base_port = doc.value("base_port", std::uint16_t{0});
  sc.event_loops = doc.value("event_loops", 0u);
  for (const auto& c : doc.value("cameras", json::array())) {
    SimCamera cam;
    cam.tvid = c.at("tvid").get<std::string>();
    auto scene = scene_class_from_string(c.value("scene", std::string("normal")));
    if (!scene) throw std::invalid_argument("bad scene for " + cam.tvid);
    cam.scene = *scene;
    auto fault = parse_fault(c.value("fault", std::string("none")));
    if (!fault) throw std::invalid_argument("bad fault for " + cam.tvid);
    cam.fault = *fault;
    if (c.contains("frame_size")) {
      cam.frame_size = Resolution{c["frame_size"].at(0).get<int>(), c["frame_size"].at(1).get<int>()};
    }
    cam.mode = c.value("mode", std::string("frame")) == "stream" ? ServeMode::multipart
                                                                  : ServeMode::single_frame;
    cam.network = c.value("network", std::string("SIM"));
    cam.longitude = c.value("longitude", 121.5);
    cam.latitude = c.value("latitude", 25.0);
    cam.roadsection = c.value("roadsection", std::string{});
    if (c.contains("codec")) cam.codec = codec_from_string(c["codec"].get<std::string>());
    sc.cameras.push_back(std::move(cam));
  }
  sc.validate();
  return sc;
}

std::string SimScenario::serialize() const {
  json doc;
  doc["frame_size"] = {frame_size.width, frame_size.height};
  doc["frame_interval_ms"] = frame_interval.count();
  doc["host"] = host;
  doc["base_port"] = base_port;
  doc["event_loops"] = event_loops;
  doc["cameras"] = json::array();
  for (const auto& cam : cameras) {
    json c;
    c["tvid"] = cam.tvid;
    c["scene"] = to_string(cam.scene);
    c["fault"] = to_string(cam.fault);
    if (cam.frame_size) c["frame_size"] = {cam.frame_size->width, cam.frame_size->height};
    c["mode"] = cam.mode == ServeMode::multipart ? "stream" : "frame";
    c["network"] = cam.network;
    c["longitude"] = cam.longitude;
    c["latitude"] = cam.latitude;
    c["roadsection"] = cam.roadsection;
    if (cam.codec) c["codec"] = to_string(*cam.codec);
    doc["cameras"].push_back(std::move(c));
  }
  return doc.dump(2);
}

namespace {

struct NetworkSpec {
  const char* key;
  const char* tvid_prefix;
  std::size_t count;
  Codec codec;
  std::vector<Resolution> resolutions;
  double lat_min, lat_max, lon_min, lon_max;
};

const std::vector<NetworkSpec>& reference_networks() {
  static const std::vector<NetworkSpec> nets = {
      {"DGH", "DGH", 1424, Codec::MJPEG, {{320, 240}, {352, 240}, {480, 270}, {720, 480}},
       22.0, 25.3, 120.2, 121.9},
      {"NTPC", "NTPC", 289, Codec::MJPEG, {{800, 600}, {320, 180}, {320, 192}},
       24.85, 25.30, 121.30, 122.00},
      {"TYC", "TYC", 123, Codec::MJPEG, {{320, 240}, {352, 240}, {480, 270}, {704, 480}},
       24.80, 25.10, 121.10, 121.40},
      {"TYC", "TYC-SEWER", 29, Codec::FLV, {{800, 464}, {1280, 720}}, 24.80, 25.10, 121.10, 121.40},
      {"TNC", "TNC", 148, Codec::MJPEG, {{352, 240}, {704, 480}, {960, 480}, {1920, 1080}},
       22.90, 23.40, 120.10, 120.50},
      {"KC", "KC", 341, Codec::JPEG, {{320, 240}, {352, 240}, {640, 480}, {704, 480}, {720, 480}},
       22.50, 23.00, 120.20, 120.60},
      {"NC", "NC", 25, Codec::JPEG, {{1280, 720}, {1280, 1024}, {352, 240}, {720, 480}},
       23.70, 24.10, 120.60, 121.00},
  };
  return nets;
}

}  // namespace

SimScenario reference_fleet(std::size_t total, std::uint64_t seed) {
  const auto& nets = reference_networks();
  std::size_t full = 0;
  for (const auto& n : nets) full += n.count;

  // Largest-remainder apportionment keeps the split proportional at any size.
  std::vector<std::size_t> counts(nets.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const double exact = static_cast<double>(nets[i].count) * total / full;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % nets.size()].second];

  SimScenario sc;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto& n = nets[i];
    std::uniform_real_distribution<double> lat(n.lat_min, n.lat_max);
    std::uniform_real_distribution<double> lon(n.lon_min, n.lon_max);
    for (std::size_t k = 0; k < counts[i]; ++k) {
      SimCamera cam;
      char id[48];
      std::snprintf(id, sizeof id, "%s-%04zu", n.tvid_prefix, k + 1);
      cam.tvid = id;
      cam.network = n.key;
      cam.codec = n.codec;
      cam.frame_size = n.resolutions[k % n.resolutions.size()];
      cam.mode = n.codec == Codec::JPEG ? ServeMode::single_frame : ServeMode::multipart;
      // Five decimals, like real registry coordinates.
      cam.latitude = std::round(lat(rng) * 1e5) / 1e5;
      cam.longitude = std::round(lon(rng) * 1e5) / 1e5;
      cam.roadsection = std::string(n.key) + " road section " + std::to_string(k + 1);
      sc.cameras.push_back(std::move(cam));
    }
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Synthetic frames

Image render_scene(Resolution size, SceneClass scene) {
  Image img(size.width, size.height);
  const int band = band_height(size.height);
  const Rgb tag = band_color(scene);
  const int horizon = size.height * 2 / 5;
  const int water = size.height * 3 / 5;
  for (int y = 0; y < size.height; ++y) {
    std::uint8_t* row = img.row(y);
    for (int x = 0; x < size.width; ++x) {
      std::uint8_t* p = row + x * 3;
      if (y < band) {
        p[0] = tag[0];
        p[1] = tag[1];
        p[2] = tag[2];
        continue;
      }
      const int gx = x * 40 / std::max(1, size.width);
      if (scene == SceneClass::unknown) {
        // Lost signal: dark frame with faint scan lines.
        const std::uint8_t v = (y / 4) % 2 ? 24 : 32;
        p[0] = p[1] = p[2] = v;
      } else if (y < horizon) {
        p[0] = static_cast<std::uint8_t>(150 + gx);
        p[1] = static_cast<std::uint8_t>(170 + gx);
        p[2] = 200;
      } else if (scene == SceneClass::flood && y >= water) {
        const int ripple = ((x / 7 + y / 3) % 5) * 4;
        p[0] = static_cast<std::uint8_t>(110 + ripple);
        p[1] = static_cast<std::uint8_t>(95 + ripple);
        p[2] = static_cast<std::uint8_t>(70 + ripple);
      } else {
        const bool lane = (x % 64) < 6 && (y % 24) < 12;
        const std::uint8_t v = lane ? 220 : static_cast<std::uint8_t>(90 + (y - horizon) % 20);
        p[0] = p[1] = p[2] = v;
      }
    }
  }
  return img;
}

void add_pixel_noise(Image& img, std::uint64_t seed, int amplitude) {
  std::uint64_t s = seed * 0x9E3779B97F4A7C15ull + 1;
  const int span = 2 * amplitude + 1;
  for (auto& v : img.rgb) {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    const int delta = static_cast<int>(s % static_cast<std::uint64_t>(span)) - amplitude;
    v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + delta, 0, 255));
  }
}

namespace {

constexpr int kSimJpegQuality = 80;
constexpr std::string_view kBoundary = "fwframe";

class FrameCache {
 public:
  std::shared_ptr<const std::vector<std::uint8_t>> base(Resolution size, SceneClass scene) {
    const auto key = std::make_tuple(size.width, size.height, static_cast<int>(scene));
    {
      std::lock_guard lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    auto encoded = std::make_shared<const std::vector<std::uint8_t>>(
        encode_jpeg(render_scene(size, scene), kSimJpegQuality));
    std::lock_guard lock(mu_);
    return cache_.emplace(key, std::move(encoded)).first->second;
  }

 private:
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, std::shared_ptr<const std::vector<std::uint8_t>>> cache_;
};

FrameCache& frame_cache() {
  static FrameCache cache;
  return cache;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> make_tagged_frame(Resolution size, SceneClass scene, std::string_view tvid,
                                            std::uint64_t sequence, bool noisy) {
  const std::string tag = encode_scene_tag(SceneTag{scene, std::string(tvid), sequence});
  if (noisy) {
    Image img = render_scene(size, scene);
    add_pixel_noise(img, fnv1a(tvid) ^ (sequence * 0x2545F4914F6CDD1Dull));
    return encode_jpeg(img, kSimJpegQuality, tag);
  }
  auto base = frame_cache().base(size, scene);
  return splice_jpeg_comment(*base, tag);
}

// ---------------------------------------------------------------------------
// Server

struct FleetSimulator::Impl {
  struct Camera {
    SimCamera meta;
    Resolution size;
    std::size_t loop = 0;
    std::uint16_t port = 0;
    int listen_fd = -1;  // owned by the loop thread after start
    mutable std::mutex mu;
    SceneClass scene = SceneClass::normal;
    Fault fault;
    std::atomic<std::uint64_t> sequence{0};
  };

  struct Conn {
    int fd = -1;
    std::uint64_t id = 0;
    std::size_t cam = 0;
    std::string in;
    std::string out;
    std::size_t out_off = 0;
    bool responded = false;
    bool started = false;
    bool stream = false;
    bool close_after_write = false;
    bool writable_armed = false;
  };

  struct Timer {
    std::chrono::steady_clock::time_point due;
    int fd;
    std::uint64_t conn_id;
    bool operator>(const Timer& o) const { return due > o.due; }
  };

  class Loop {
   public:
    Loop(Impl& owner) : owner_(owner) {
      epfd_ = ::epoll_create1(EPOLL_CLOEXEC);
      wakefd_ = ::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC);
      if (epfd_ < 0 || wakefd_ < 0) throw SpawnError("epoll/eventfd creation failed");
      epoll_event ev{};
      ev.events = EPOLLIN;
      ev.data.u64 = kWakeTag;
      ::epoll_ctl(epfd_, EPOLL_CTL_ADD, wakefd_, &ev);
    }

    ~Loop() {
      stop();
      for (auto& [fd, conn] : conns_) ::close(fd);
      for (auto& [fd, cam] : listeners_) ::close(fd);
      if (epfd_ >= 0) ::close(epfd_);
      if (wakefd_ >= 0) ::close(wakefd_);
    }

    void start() { thread_ = std::thread([this] { run(); }); }

    void stop() {
      if (!thread_.joinable()) return;
      stopping_ = true;
      wake();
      thread_.join();
    }

    // Runs fn on the loop thread and waits for it.
    void call(std::function<void()> fn) {
      if (!thread_.joinable()) {
        fn();
        return;
      }
      std::packaged_task<void()> task(std::move(fn));
      auto done = task.get_future();
      {
        std::lock_guard lock(tasks_mu_);
        tasks_.push_back(std::move(task));
      }
      wake();
      done.get();
    }

    void open_listener(std::size_t cam_index) {
      Camera& cam = *owner_.cameras[cam_index];
      const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0);
      if (fd < 0) throw SpawnError(std::string("socket: ") + std::strerror(errno));
      const int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_port = htons(cam.port);
      if (::inet_pton(AF_INET, owner_.scenario.host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw SpawnError("bad host " + owner_.scenario.host);
      }
      if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
          ::listen(fd, SOMAXCONN) != 0) {
        const int e = errno;
        ::close(fd);
        throw SpawnError("listen for " + cam.meta.tvid + ": " + std::strerror(e));
      }
      socklen_t len = sizeof addr;
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
      cam.port = ntohs(addr.sin_port);
      cam.listen_fd = fd;
      listeners_[fd] = cam_index;
      epoll_event ev{};
      ev.events = EPOLLIN;
      ev.data.u64 = static_cast<std::uint64_t>(fd);
      ::epoll_ctl(epfd_, EPOLL_CTL_ADD, fd, &ev);
    }

    void close_listener(std::size_t cam_index) {
      Camera& cam = *owner_.cameras[cam_index];
      if (cam.listen_fd < 0) return;
      ::epoll_ctl(epfd_, EPOLL_CTL_DEL, cam.listen_fd, nullptr);
      listeners_.erase(cam.listen_fd);
      ::close(cam.listen_fd);
      cam.listen_fd = -1;
    }

   private:
    static constexpr std::uint64_t kWakeTag = ~0ull;

    void wake() {
      const std::uint64_t one = 1;
      [[maybe_unused]] auto r = ::write(wakefd_, &one, sizeof one);
    }

    void run() {
      std::vector<epoll_event> events(512);
      while (!stopping_) {
        int timeout_ms = -1;
        if (!timers_.empty()) {
          const auto now = std::chrono::steady_clock::now();
          const auto due = timers_.top().due;
          timeout_ms = due <= now ? 0
                                  : static_cast<int>(std::chrono::ceil<std::chrono::milliseconds>(
                                                         due - now)
                                                         .count());
        }
        const int n = ::epoll_wait(epfd_, events.data(), static_cast<int>(events.size()), timeout_ms);
        if (n < 0 && errno != EINTR) {
          spdlog::error("simulator epoll_wait: {}", std::strerror(errno));
          break;
        }
        for (int i = 0; i < n; ++i) dispatch(events[i]);
        fire_timers();
        drain_tasks();
      }
    }

    void drain_tasks() {
      std::vector<std::packaged_task<void()>> tasks;
      {
        std::lock_guard lock(tasks_mu_);
        tasks.swap(tasks_);
      }
      for (auto& t : tasks) t();
    }

    void dispatch(const epoll_event& ev) {
      if (ev.data.u64 == kWakeTag) {
        std::uint64_t v;
        [[maybe_unused]] auto r = ::read(wakefd_, &v, sizeof v);
        return;
      }
      const int fd = static_cast<int>(ev.data.u64);
      if (auto it = listeners_.find(fd); it != listeners_.end()) {
        accept_all(fd, it->second);
        return;
      }
      auto it = conns_.find(fd);
      if (it == conns_.end()) return;
      Conn& c = *it->second;
      if (ev.events & (EPOLLERR | EPOLLHUP | EPOLLRDHUP)) {
        close_conn(c);
        return;
      }
      if (ev.events & EPOLLIN) {
        if (!on_readable(c)) return;
      }
      if (ev.events & EPOLLOUT) flush(c);
    }

    void accept_all(int listen_fd, std::size_t cam) {
      for (;;) {
        const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
        if (fd < 0) {
          if (errno == EINTR) continue;
          if (errno != EAGAIN && errno != EWOULDBLOCK) {
            spdlog::warn("simulator accept: {}", std::strerror(errno));
          }
          return;
        }
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        auto conn = std::make_unique<Conn>();
        conn->fd = fd;
        conn->id = ++next_conn_id_;
        conn->cam = cam;
        epoll_event ev{};
        ev.events = EPOLLIN | EPOLLRDHUP;
        ev.data.u64 = static_cast<std::uint64_t>(fd);
        ::epoll_ctl(epfd_, EPOLL_CTL_ADD, fd, &ev);
        conns_[fd] = std::move(conn);
      }
    }

    // False when the connection was closed.
    bool on_readable(Conn& c) {
      char buf[4096];
      for (;;) {
        const ssize_t r = ::recv(c.fd, buf, sizeof buf, 0);
        if (r > 0) {
          if (!c.responded) c.in.append(buf, static_cast<std::size_t>(r));
          continue;
        }
        if (r == 0) {
          close_conn(c);
          return false;
        }
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) break;
        close_conn(c);
        return false;
      }
      if (c.responded) return true;
      if (c.in.find("\r\n\r\n") == std::string::npos) {
        if (c.in.size() > 16384) {
          close_conn(c);
          return false;
        }
        return true;
      }
      c.responded = true;
      return handle_request(c);
    }

    bool handle_request(Conn& c) {
      const std::size_t line_end = c.in.find("\r\n");
      const std::string line = c.in.substr(0, line_end);
      const auto sp1 = line.find(' ');
      const auto sp2 = line.find(' ', sp1 + 1);
      if (sp1 == std::string::npos || sp2 == std::string::npos) {
        return respond_simple(c, 400, "Bad Request");
      }
      const std::string method = line.substr(0, sp1);
      std::string path = line.substr(sp1 + 1, sp2 - sp1 - 1);
      if (auto q = path.find('?'); q != std::string::npos) path.resize(q);
      if (method != "GET") return respond_simple(c, 405, "Method Not Allowed");

      Camera& cam = *owner_.cameras[c.cam];
      constexpr std::string_view prefix = "/cam/";
      const auto slash = path.rfind('/');
      if (!std::string_view(path).starts_with(prefix) || slash <= prefix.size()) {
        return respond_simple(c, 404, "Not Found");
      }
      const std::string tvid = url_decode(std::string_view(path).substr(prefix.size(), slash - prefix.size()));
      const std::string kind = path.substr(slash + 1);
      if (tvid != cam.meta.tvid || (kind != "frame" && kind != "stream")) {
        return respond_simple(c, 404, "Not Found");
      }
      c.stream = kind == "stream";

      Fault fault;
      {
        std::lock_guard lock(cam.mu);
        fault = cam.fault;
      }
      if (fault.kind == Fault::Kind::stall && fault.stall_seconds > 0.0) {
        const auto delay = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(fault.stall_seconds));
        timers_.push(Timer{std::chrono::steady_clock::now() + delay, c.fd, c.id});
        return true;
      }
      return begin_response(c);
    }

    bool begin_response(Conn& c) {
      c.started = true;
      if (c.stream) {
        c.out += "HTTP/1.1 200 OK\r\nContent-Type: multipart/x-mixed-replace; boundary=";
        c.out += kBoundary;
        c.out += "\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n";
        return send_part(c);
      }
      const auto [frame, truncated] = next_frame(c);
      c.out += "HTTP/1.1 200 OK\r\nContent-Type: image/jpeg\r\nContent-Length: ";
      c.out += std::to_string(frame.size());
      c.out += "\r\nCache-Control: no-cache\r\nConnection: close\r\n\r\n";
      const std::size_t n = truncated ? frame.size() / 2 : frame.size();
      c.out.append(reinterpret_cast<const char*>(frame.data()), n);
      c.close_after_write = true;
      return flush(c);
    }

    bool send_part(Conn& c) {
      const auto [frame, truncated] = next_frame(c);
      c.out += "--";
      c.out += kBoundary;
      c.out += "\r\nContent-Type: image/jpeg\r\nContent-Length: ";
      c.out += std::to_string(frame.size());
      c.out += "\r\n\r\n";
      const std::size_t n = truncated ? frame.size() / 2 : frame.size();
      c.out.append(reinterpret_cast<const char*>(frame.data()), n);
      if (truncated) {
        c.close_after_write = true;
      } else {
        c.out += "\r\n";
      }
      return flush(c);
    }

    std::pair<std::vector<std::uint8_t>, bool> next_frame(Conn& c) {
      Camera& cam = *owner_.cameras[c.cam];
      SceneClass scene;
      Fault fault;
      {
        std::lock_guard lock(cam.mu);
        scene = cam.scene;
        fault = cam.fault;
      }
      const std::uint64_t seq = ++cam.sequence;
      auto frame = make_tagged_frame(cam.size, scene, cam.meta.tvid, seq,
                                     fault.kind == Fault::Kind::noise);
      const bool truncated = fault.kind == Fault::Kind::truncated_frame;
      if (!truncated) ++owner_.frames_served;
      return {std::move(frame), truncated};
    }

    bool respond_simple(Conn& c, int code, std::string_view reason) {
      c.started = true;
      c.out += "HTTP/1.1 " + std::to_string(code) + " " + std::string(reason) +
               "\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
      c.close_after_write = true;
      return flush(c);
    }

    // False when the connection was closed.
    bool flush(Conn& c) {
      while (c.out_off < c.out.size()) {
        const ssize_t w = ::send(c.fd, c.out.data() + c.out_off, c.out.size() - c.out_off, MSG_NOSIGNAL);
        if (w > 0) {
          c.out_off += static_cast<std::size_t>(w);
          continue;
        }
        if (w < 0 && errno == EINTR) continue;
        if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
          arm_writable(c, true);
          return true;
        }
        close_conn(c);
        return false;
      }
      c.out.clear();
      c.out_off = 0;
      arm_writable(c, false);
      if (c.close_after_write) {
        close_conn(c);
        return false;
      }
      if (c.stream) {
        timers_.push(Timer{std::chrono::steady_clock::now() + owner_.scenario.frame_interval, c.fd, c.id});
      }
      return true;
    }

    void arm_writable(Conn& c, bool on) {
      if (c.writable_armed == on) return;
      c.writable_armed = on;
      epoll_event ev{};
      ev.events = EPOLLIN | EPOLLRDHUP | (on ? EPOLLOUT : 0u);
      ev.data.u64 = static_cast<std::uint64_t>(c.fd);
      ::epoll_ctl(epfd_, EPOLL_CTL_MOD, c.fd, &ev);
    }

    void fire_timers() {
      const auto now = std::chrono::steady_clock::now();
      while (!timers_.empty() && timers_.top().due <= now) {
        const Timer t = timers_.top();
        timers_.pop();
        auto it = conns_.find(t.fd);
        if (it == conns_.end() || it->second->id != t.conn_id) continue;
        Conn& c = *it->second;
        if (!c.started) {
          begin_response(c);  // end of a stall
        } else if (c.stream && c.out.empty()) {
          send_part(c);
        }
      }
    }

    void close_conn(Conn& c) {
      const int fd = c.fd;
      ::epoll_ctl(epfd_, EPOLL_CTL_DEL, fd, nullptr);
      ::close(fd);
      conns_.erase(fd);
    }

    Impl& owner_;
    int epfd_ = -1;
    int wakefd_ = -1;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    std::mutex tasks_mu_;
    std::vector<std::packaged_task<void()>> tasks_;
    std::unordered_map<int, std::unique_ptr<Conn>> conns_;
    std::unordered_map<int, std::size_t> listeners_;
    std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
    std::uint64_t next_conn_id_ = 0;
  };

  SimScenario scenario;
  std::vector<std::unique_ptr<Camera>> cameras;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::unique_ptr<Loop>> loops;
  std::atomic<std::uint64_t> frames_served{0};
  std::unique_ptr<httplib::Server> admin;
  std::thread admin_thread;
  bool stopped = false;

  Camera& find(std::string_view tvid) const {
    auto it = index.find(std::string(tvid));
    if (it == index.end()) throw NotFound("no simulated camera '" + std::string(tvid) + "'");
    return *cameras[it->second];
  }

  std::string url_for(const Camera& cam, std::string_view kind) const {
    return "http://" + scenario.host + ":" + std::to_string(cam.port) + "/cam/" +
           url_encode(cam.meta.tvid) + "/" + std::string(kind);
  }
};


FleetSimulator::FleetSimulator(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

FleetSimulator::~FleetSimulator() { stop(); }

namespace {

void raise_fd_limit(std::size_t wanted) {
  rlimit lim{};
  if (::getrlimit(RLIMIT_NOFILE, &lim) != 0) return;
  if (lim.rlim_cur >= wanted) return;
  lim.rlim_cur = std::min<rlim_t>(lim.rlim_max, std::max<rlim_t>(wanted, lim.rlim_cur));
  ::setrlimit(RLIMIT_NOFILE, &lim);
}

}  // namespace

std::unique_ptr<FleetSimulator> FleetSimulator::spawn(SimScenario scenario) {
  scenario.validate();
  auto impl = std::make_unique<Impl>();
  impl->scenario = std::move(scenario);
  const SimScenario& sc = impl->scenario;

  // listeners + server-side connections + the client side of a capture round
  raise_fd_limit(sc.cameras.size() * 3 + 1024);
  rlimit lim{};
  ::getrlimit(RLIMIT_NOFILE, &lim);
  if (lim.rlim_cur < sc.cameras.size() + 64) {
    throw SpawnError("file descriptor limit " + std::to_string(lim.rlim_cur) + " too low for " +
                     std::to_string(sc.cameras.size()) + " cameras");
  }

  unsigned loops = sc.event_loops;
  if (loops == 0) loops = std::clamp(std::thread::hardware_concurrency() / 2, 1u, 4u);
  loops = std::max(1u, std::min<unsigned>(loops, static_cast<unsigned>(std::max<std::size_t>(1, sc.cameras.size()))));
  for (unsigned i = 0; i < loops; ++i) impl->loops.push_back(std::make_unique<Impl::Loop>(*impl));

  for (std::size_t i = 0; i < sc.cameras.size(); ++i) {
    auto cam = std::make_unique<Impl::Camera>();
    cam->meta = sc.cameras[i];
    cam->size = sc.cameras[i].frame_size.value_or(sc.frame_size);
    cam->scene = sc.cameras[i].scene;
    cam->fault = sc.cameras[i].fault;
    cam->loop = i % loops;
    cam->port = sc.base_port == 0 ? 0 : static_cast<std::uint16_t>(sc.base_port + i);
    impl->index.emplace(cam->meta.tvid, i);
    impl->cameras.push_back(std::move(cam));
  }
  for (std::size_t i = 0; i < impl->cameras.size(); ++i) {
    Impl::Camera& cam = *impl->cameras[i];
    // The port is bound even for no_connect cameras so the endpoint is stable.
    impl->loops[cam.loop]->open_listener(i);
    if (cam.fault.kind == Fault::Kind::no_connect) impl->loops[cam.loop]->close_listener(i);
    for (SceneClass s : {SceneClass::normal, SceneClass::flood, SceneClass::unknown}) {
      frame_cache().base(cam.size, s);
    }
  }
  for (auto& loop : impl->loops) loop->start();
  spdlog::debug("fleet simulator: {} cameras on {} event loop(s)", impl->cameras.size(), loops);
  return std::unique_ptr<FleetSimulator>(new FleetSimulator(std::move(impl)));
}

void FleetSimulator::stop() {
  if (!impl_ || impl_->stopped) return;
  impl_->stopped = true;
  if (impl_->admin) impl_->admin->stop();
  if (impl_->admin_thread.joinable()) impl_->admin_thread.join();
  for (auto& loop : impl_->loops) loop->stop();
  impl_->loops.clear();
}

std::vector<std::string> FleetSimulator::endpoints() const {
  std::vector<std::string> out;
  out.reserve(impl_->cameras.size());
  for (const auto& cam : impl_->cameras) {
    out.push_back(impl_->url_for(*cam, cam->meta.mode == ServeMode::multipart ? "stream" : "frame"));
  }
  return out;
}

std::string FleetSimulator::frame_url(std::string_view tvid) const {
  return impl_->url_for(impl_->find(tvid), "frame");
}

std::string FleetSimulator::stream_url(std::string_view tvid) const {
  return impl_->url_for(impl_->find(tvid), "stream");
}

CameraRegistry FleetSimulator::registry() const {
  std::vector<CameraRecord> records;
  const auto urls = endpoints();
  records.reserve(urls.size());
  for (std::size_t i = 0; i < impl_->cameras.size(); ++i) {
    const auto& meta = impl_->cameras[i]->meta;
    CameraRecord rec;
    rec.tvid = meta.tvid;
    rec.longitude = meta.longitude;
    rec.latitude = meta.latitude;
    rec.roadsection = meta.roadsection.empty() ? meta.tvid : meta.roadsection;
    rec.url = urls[i];
    rec.network = meta.network;
    rec.codec_hint = meta.codec;
    rec.resolution_hint = impl_->cameras[i]->size;
    records.push_back(std::move(rec));
  }
  return CameraRegistry::from_records(std::move(records));
}

void FleetSimulator::set_scene(std::string_view tvid, SceneClass scene) {
  auto& cam = impl_->find(tvid);
  std::lock_guard lock(cam.mu);
  cam.scene = scene;
}

void FleetSimulator::inject_fault(std::string_view tvid, const Fault& fault) {
  auto& cam = impl_->find(tvid);
  const std::size_t cam_index = impl_->index.at(std::string(tvid));
  bool refuse;
  {
    std::lock_guard lock(cam.mu);
    cam.fault = fault;
    refuse = fault.kind == Fault::Kind::no_connect;
  }
  if (impl_->stopped) return;
  auto& loop = *impl_->loops[cam.loop];
  std::exception_ptr error;
  loop.call([&] {
    try {
      if (refuse) {
        loop.close_listener(cam_index);
      } else if (cam.listen_fd < 0) {
        loop.open_listener(cam_index);
      }
    } catch (...) {
      error = std::current_exception();
    }
  });
  if (error) std::rethrow_exception(error);
}

SceneClass FleetSimulator::scene(std::string_view tvid) const {
  auto& cam = impl_->find(tvid);
  std::lock_guard lock(cam.mu);
  return cam.scene;
}

Fault FleetSimulator::fault(std::string_view tvid) const {
  auto& cam = impl_->find(tvid);
  std::lock_guard lock(cam.mu);
  return cam.fault;
}

std::uint64_t FleetSimulator::frames_served() const { return impl_->frames_served.load(); }

std::size_t FleetSimulator::size() const { return impl_->cameras.size(); }

std::uint16_t FleetSimulator::start_admin(std::uint16_t port) {
  if (impl_->admin) throw std::logic_error("admin endpoint already running");
  auto server = std::make_unique<httplib::Server>();
  auto reply = [](httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"ok", status == 200}, {"message", message}}.dump(), "application/json");
  };
  server->Post("/admin/scene", [this, reply](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const auto scene = scene_class_from_string(body.at("scene").get<std::string>());
      if (!scene) return reply(res, 400, "unknown scene class");
      set_scene(body.at("tvid").get<std::string>(), *scene);
      reply(res, 200, "scene updated");
    } catch (const NotFound& e) {
      reply(res, 404, e.what());
    } catch (const std::exception& e) {
      reply(res, 400, e.what());
    }
  });
  server->Post("/admin/fault", [this, reply](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const auto fault = parse_fault(body.at("fault").get<std::string>());
      if (!fault) return reply(res, 400, "unknown fault");
      inject_fault(body.at("tvid").get<std::string>(), *fault);
      reply(res, 200, "fault updated");
    } catch (const NotFound& e) {
      reply(res, 404, e.what());
    } catch (const std::exception& e) {
      reply(res, 400, e.what());
    }
  });
  int bound = port == 0 ? server->bind_to_any_port(impl_->scenario.host)
                        : (server->bind_to_port(impl_->scenario.host, port) ? port : -1);
  if (bound < 0) throw SpawnError("admin endpoint: cannot bind port " + std::to_string(port));
  impl_->admin = std::move(server);
  impl_->admin_thread = std::thread([srv = impl_->admin.get()] { srv->listen_after_bind(); });
  return static_cast<std::uint16_t>(bound);
}

}  // namespace floodwatch
