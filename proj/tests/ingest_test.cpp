#include <fstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <httplib.h>

#include "floodwatch/image.hpp"
#include "floodwatch/ingest.hpp"
#include "floodwatch/scene_tag.hpp"
#include "floodwatch/simulator.hpp"
#include "support/temp_dir.hpp"

using namespace floodwatch;
using namespace std::chrono_literals;

namespace {

std::span<const std::uint8_t> bytes_of(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

SimScenario fleet_of(std::size_t n, ServeMode mode = ServeMode::single_frame) {
  SimScenario sc;
  sc.frame_size = {320, 240};
  sc.frame_interval = 50ms;
  for (std::size_t i = 0; i < n; ++i) {
    SimCamera c;
    c.tvid = "cam-" + std::to_string(i);
    c.scene = static_cast<SceneClass>(i % 3);
    c.mode = mode;
    sc.cameras.push_back(c);
  }
  return sc;
}

CameraRecord record(std::string tvid, std::string url) {
  CameraRecord r;
  r.tvid = std::move(tvid);
  r.network = "T";
  r.longitude = 121;
  r.latitude = 25;
  r.url = std::move(url);
  return r;
}

// A loopback port with nothing listening on it.
std::uint16_t dead_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST(Multipart, BoundaryFromContentType) {
  EXPECT_EQ(MultipartFrameReader::boundary_from_content_type(
                "multipart/x-mixed-replace; boundary=frame"),
            "frame");
  EXPECT_EQ(MultipartFrameReader::boundary_from_content_type(
                "multipart/x-mixed-replace;boundary=\"--myb\""),
            "--myb");
  EXPECT_FALSE(MultipartFrameReader::boundary_from_content_type("image/jpeg"));
}

TEST(Multipart, ContentLengthPartFedByteByByte) {
  const std::string body =
      "--frame\r\nContent-Type: image/jpeg\r\nContent-Length: 5\r\n\r\nAB\r\nC\r\n--frame\r\n";
  MultipartFrameReader r("frame");
  bool done = false;
  for (char ch : body) {
    done = r.feed(bytes_of(std::string(1, ch))) || done;
  }
  ASSERT_TRUE(done);
  EXPECT_TRUE(r.complete());
  EXPECT_EQ(std::string(r.frame().begin(), r.frame().end()), "AB\r\nC");
}

TEST(Multipart, PartWithoutLengthRunsToBoundary) {
  MultipartFrameReader r("xyz");
  EXPECT_FALSE(r.feed(bytes_of("preamble\r\n--xyz\r\nContent-Type: image/jpeg\r\n\r\nhello")));
  EXPECT_FALSE(r.complete());
  EXPECT_GT(r.partial().size(), 0u);
  EXPECT_TRUE(r.feed(bytes_of(" world\r\n--xyz\r\n")));
  EXPECT_EQ(std::string(r.frame().begin(), r.frame().end()), "hello world");
}

TEST(Multipart, TruncatedPartNeverCompletes) {
  MultipartFrameReader r("b");
  EXPECT_FALSE(r.feed(bytes_of("--b\r\nContent-Length: 100\r\n\r\nshort")));
  EXPECT_FALSE(r.complete());
  EXPECT_EQ(r.bytes_seen(), 33u);
}

TEST(CaptureConfig, Validation) {
  CaptureConfig c;
  EXPECT_NO_THROW(c.validate());
  c.pool_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.per_stream_deadline = 0ms;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.jpeg_quality = 101;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CaptureOne, SingleFrameAndStreamSucceed) {
  auto sc = fleet_of(2);
  sc.cameras[1].mode = ServeMode::multipart;
  auto sim = FleetSimulator::spawn(sc);
  const auto reg = sim->registry();
  for (const auto& rec : reg.records()) {
    const auto r = capture_one(rec, 5s);
    ASSERT_TRUE(r.ok()) << rec.tvid << " " << (r.failure() ? r.failure()->detail : "");
    EXPECT_EQ(r.tvid, rec.tvid);
    EXPECT_EQ(r.frame()->width, 320);
    EXPECT_EQ(r.frame()->height, 240);
    const Image img = decode_jpeg(r.frame()->jpeg);
    EXPECT_EQ(img.width, 320);
    // canonical re-encode drops the comment but keeps the band
    EXPECT_FALSE(read_jpeg_comment(r.frame()->jpeg));
    EXPECT_EQ(read_band(img), sim->scene(rec.tvid));
  }
}

TEST(CaptureOne, FaultsMapToFailureKinds) {
  auto sc = fleet_of(4);
  sc.cameras[3].mode = ServeMode::multipart;
  auto sim = FleetSimulator::spawn(sc);
  sim->inject_fault("cam-0", Fault::no_connect());
  sim->inject_fault("cam-1", Fault::stall(5));
  sim->inject_fault("cam-2", Fault::truncated_frame());
  sim->inject_fault("cam-3", Fault::truncated_frame());
  const auto reg = sim->registry();

  auto kind = [&](const char* id, std::chrono::milliseconds deadline) {
    const auto r = capture_one(*reg.lookup(id), deadline);
    EXPECT_FALSE(r.ok()) << id;
    return r.ok() ? FailureKind::empty_stream : r.failure()->kind;
  };
  EXPECT_EQ(kind("cam-0", 2s), FailureKind::connect_error);
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(kind("cam-1", 500ms), FailureKind::timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 3s);
  EXPECT_EQ(kind("cam-2", 2s), FailureKind::decode_error);
  EXPECT_EQ(kind("cam-3", 2s), FailureKind::decode_error);
}

TEST(CaptureOne, HttpErrorsEmptyBodyAndGarbage) {
  httplib::Server srv;
  srv.Get("/empty", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("", "image/jpeg");
  });
  srv.Get("/garbage", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("definitely not a jpeg", "image/jpeg");
  });
  srv.Get("/emptystream", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("--b\r\n", "multipart/x-mixed-replace; boundary=b");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  auto kind = [&](const std::string& path) {
    const auto r = capture_one(record("x", base + path), 2s);
    EXPECT_FALSE(r.ok()) << path;
    return r.failure() ? r.failure()->kind : FailureKind::connect_error;
  };
  EXPECT_EQ(kind("/missing"), FailureKind::connect_error);
  EXPECT_EQ(kind("/empty"), FailureKind::empty_stream);
  EXPECT_EQ(kind("/garbage"), FailureKind::decode_error);
  EXPECT_EQ(kind("/emptystream"), FailureKind::empty_stream);
  srv.stop();
  t.join();
}

TEST(RunRound, CompleteInRegistryOrderWithSpool) {
  auto sim = FleetSimulator::spawn(fleet_of(12));
  sim->inject_fault("cam-4", Fault::no_connect());
  const auto reg = sim->registry();
  fwtest::TempDir spool("spool");
  CaptureConfig cfg;
  cfg.pool_size = 4;
  cfg.per_stream_deadline = 3s;
  cfg.spool_dir = spool.path();
  const auto round = run_round(reg, cfg, 7);
  EXPECT_EQ(round.round_id, 7u);
  ASSERT_EQ(round.results.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(round.results[i].tvid, reg.records()[i].tvid);
  EXPECT_EQ(round.successes(), 11u);
  EXPECT_EQ(round.failures(FailureKind::connect_error), 1u);
  EXPECT_FALSE(round.results[4].frame_path);
  ASSERT_TRUE(round.results[0].frame_path);
  EXPECT_EQ(*round.results[0].frame_path, spool.path() / "7" / "cam-0.jpg");
  EXPECT_TRUE(std::filesystem::exists(*round.results[0].frame_path));
  EXPECT_GE(round.finished_at, round.started_at);
}

TEST(RunRound, ConcurrencyNeverExceedsPool) {
  auto sc = fleet_of(12);
  for (auto& c : sc.cameras) c.fault = Fault::stall(2);
  auto sim = FleetSimulator::spawn(sc);
  const auto reg = sim->registry();
  CaptureConfig cfg;
  cfg.pool_size = 4;
  cfg.per_stream_deadline = 300ms;
  CaptureProbe probe;
  const auto t0 = std::chrono::steady_clock::now();
  const auto round = run_round(reg, cfg, 1, &probe);
  const auto wall = std::chrono::steady_clock::now() - t0;
  EXPECT_EQ(probe.started.load(), 12u);
  EXPECT_EQ(probe.max_in_flight.load(), 4u);
  EXPECT_EQ(probe.in_flight.load(), 0u);
  EXPECT_EQ(round.failures(FailureKind::timeout), 12u);
  // 12 stalls over 4 workers: at least three deadline waves
  EXPECT_GE(wall, 850ms);
}

TEST(RunRound, EveryCameraUnreachable) {
  const auto port = dead_port();
  std::vector<CameraRecord> recs;
  for (int i = 0; i < 100; ++i) {
    recs.push_back(record("dead-" + std::to_string(i),
                          "http://127.0.0.1:" + std::to_string(port) + "/cam/" + std::to_string(i)));
  }
  const auto reg = CameraRegistry::from_records(std::move(recs));
  CaptureConfig cfg;
  cfg.pool_size = 16;
  cfg.per_stream_deadline = 2s;
  const auto round = run_round(reg, cfg);
  ASSERT_EQ(round.results.size(), 100u);
  EXPECT_EQ(round.failures(FailureKind::connect_error), 100u);
  EXPECT_EQ(round.successes(), 0u);
  EXPECT_LT(round.wall_time(), 10s);
}

TEST(RunRound, EmptyRegistry) {
  const auto round = run_round(CameraRegistry{}, CaptureConfig{});
  EXPECT_TRUE(round.results.empty());
}

TEST(PoolSweep, OneRowPerPoolSize) {
  auto sim = FleetSimulator::spawn(fleet_of(3));
  const auto reg = sim->registry();
  const std::vector<std::size_t> pools{1, 3};
  const auto rows = measure_pool_sweep(reg, pools);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].pool_size, 1u);
  EXPECT_EQ(rows[1].pool_size, 3u);
  for (const auto& r : rows) EXPECT_EQ(r.successes, 3u);
}
