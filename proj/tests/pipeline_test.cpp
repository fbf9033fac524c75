#include <cstdlib>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "floodwatch/pipeline.hpp"
#include "floodwatch/simulator.hpp"
#include "support/geojson_check.hpp"
#include "support/temp_dir.hpp"
#include "support/webhook_sink.hpp"

using namespace floodwatch;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

const Timestamp kT0{std::chrono::milliseconds{1'700'000'000'000}};

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

// flood, normal, unknown, and one camera that refuses connections.
std::unique_ptr<FleetSimulator> four_cameras() {
  SimScenario sc;
  sc.frame_size = {320, 240};
  const std::tuple<const char*, SceneClass, double> cams[] = {
      {"north", SceneClass::flood, 25.1},
      {"mid", SceneClass::normal, 24.5},
      {"south", SceneClass::unknown, 23.0},
      {"dark", SceneClass::normal, 22.0}};
  for (auto [id, scene, lat] : cams) {
    SimCamera c;
    c.tvid = id;
    c.scene = scene;
    c.latitude = lat;
    c.longitude = 121.0;
    sc.cameras.push_back(c);
  }
  sc.cameras[3].fault = Fault::no_connect();
  return FleetSimulator::spawn(sc);
}

PipelineConfig config_for(const fwtest::TempDir& dir, const FleetSimulator& sim) {
  write(dir / "registry.json", sim.registry().serialize());
  PipelineConfig cfg = PipelineConfig::parse(R"({"registry": "registry.json", "data_dir": "data",
      "capture": {"pool_size": 4, "deadline_ms": 3000}, "classify_workers": 2})",
                                             dir.path());
  cfg.validate();
  return cfg;
}

struct Api {
  explicit Api(Pipeline& p) : server(p) { port = server.start("127.0.0.1", 0); }
  ~Api() { server.stop(); }
  httplib::Result get(const std::string& path) {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(5s);
    return cli.Get(path);
  }
  ApiServer server;
  std::uint16_t port = 0;
};

}  // namespace

TEST(Config, ParsesDocumentedKeysAndResolvesPaths) {
  fwtest::TempDir dir("cfg");
  write(dir / "reg.json", R"({"A": []})");
  std::filesystem::create_directories(dir / "records");
  write(dir / "fw.json", R"({
    "registry": "reg.json", "data_dir": "store", "mode": "normal",
    "interval_override_s": 600, "listen": "0.0.0.0:9000", "retention": 10,
    "store_frames": false, "classify_workers": 3, "tire": "185/55R14",
    "capture": {"pool_size": 32, "deadline_ms": 5000, "grace_ms": 100,
                "network_budget_s": 30, "round_budget_s": 120, "jpeg_quality": 90},
    "classifier": {"backend": "stub"},
    "detector": {"backend": "records", "dir": "records"},
    "notification": {"enabled": true, "mode": "every_round", "min_gap_s": 60,
                     "recipients": ["http://127.0.0.1:9/hook"]}})");
  const auto cfg = PipelineConfig::load(dir / "fw.json");
  EXPECT_EQ(cfg.registry_path, dir / "reg.json");
  EXPECT_EQ(cfg.data_dir, dir / "store");
  EXPECT_EQ(cfg.mode, RefreshMode::normal);
  EXPECT_EQ(cfg.interval(), 600s);
  EXPECT_EQ(cfg.retention, 10u);
  EXPECT_FALSE(cfg.store_frames);
  EXPECT_EQ(cfg.water_level.tire, (TireSpec{185, 55, 14}));
  EXPECT_EQ(cfg.capture.pool_size, 32u);
  EXPECT_EQ(cfg.capture.per_stream_deadline, 5000ms);
  EXPECT_EQ(cfg.capture.jpeg_quality, 90);
  ASSERT_TRUE(cfg.detector);
  EXPECT_EQ(cfg.detector->kind, DetectorChoice::Kind::records);
  EXPECT_EQ(cfg.detector->path, dir / "records");
  EXPECT_TRUE(cfg.notifications_enabled);
  EXPECT_EQ(cfg.notification.mode, NotifyMode::every_round);
  EXPECT_EQ(cfg.notification.min_gap, 60s);
  EXPECT_EQ(cfg.effective_map_url(), "http://0.0.0.0:9000/map.geojson");
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(PipelineConfig::parse(R"({"registry": "r", "colour": 1})"), ConfigError);
  EXPECT_THROW(PipelineConfig::parse(R"({"registry": "r", "capture": {"pools": 1}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::parse(R"({"data_dir": "d"})"), ConfigError);
  EXPECT_THROW(PipelineConfig::parse(R"({"registry": "r", "mode": "hourly"})"), ConfigError);
  EXPECT_THROW(PipelineConfig::parse(R"({"registry": "r", "tire": "215-60-16"})"), ConfigError);
  EXPECT_THROW(PipelineConfig::parse(R"({"registry": "r", "classifier": {"backend": "gpu"}})"),
               ConfigError);
  EXPECT_THROW(PipelineConfig::parse("{not json"), ConfigError);

  fwtest::TempDir dir("cfg");
  write(dir / "reg.json", "{}");
  auto cfg = PipelineConfig::parse(R"({"registry": "reg.json", "interval_override_s": 30})", dir.path());
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.interval_override = 60s;
  EXPECT_NO_THROW(cfg.validate());
  cfg.listen_address = "nohostport";
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.listen_address = "127.0.0.1:70000";
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.listen_address = "127.0.0.1:8080";
  cfg.notifications_enabled = true;
  EXPECT_THROW(cfg.validate(), ConfigError);  // no recipients
  cfg.notifications_enabled = false;
  cfg.registry_path = dir / "missing.json";
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, EnvironmentOverrides) {
  auto cfg = PipelineConfig::parse(R"({"registry": "r"})");
  EXPECT_EQ(cfg.mode, RefreshMode::storm_advisory);
  ::setenv("FLOODWATCH_MODE", "normal", 1);
  ::setenv("FLOODWATCH_LISTEN", "127.0.0.1:9999", 1);
  cfg.apply_env();
  EXPECT_EQ(cfg.mode, RefreshMode::normal);
  EXPECT_EQ(cfg.interval(), 3600s);
  EXPECT_EQ(cfg.listen_address, "127.0.0.1:9999");
  ::setenv("FLOODWATCH_MODE", "sometimes", 1);
  EXPECT_THROW(cfg.apply_env(), ConfigError);
  ::unsetenv("FLOODWATCH_MODE");
  ::unsetenv("FLOODWATCH_LISTEN");
}

TEST(ListenAddress, Parse) {
  EXPECT_EQ(parse_listen_address("127.0.0.1:8080"), (std::pair<std::string, std::uint16_t>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_listen_address("[::1]:80").second, 80);
  EXPECT_THROW(parse_listen_address(":80"), ConfigError);
  EXPECT_THROW(parse_listen_address("host:"), ConfigError);
  EXPECT_THROW(parse_listen_address("host:8o"), ConfigError);
}

TEST(Scheduler, NextTickSkipsMissedTicks) {
  EXPECT_EQ(next_tick_after(kT0, 300s, kT0), kT0 + 300s);
  EXPECT_EQ(next_tick_after(kT0, 300s, kT0 + 299s), kT0 + 300s);
  EXPECT_EQ(next_tick_after(kT0, 300s, kT0 + 300s), kT0 + 600s);
  // a 1000 s overrun lands on the next grid point, not on the missed ones
  EXPECT_EQ(next_tick_after(kT0, 300s, kT0 + 1000s), kT0 + 1200s);
  EXPECT_EQ(next_tick_after(kT0, 300s, kT0 - 5s), kT0);
  EXPECT_THROW(next_tick_after(kT0, 0s, kT0), std::invalid_argument);
}

TEST(Metrics, JsonRoundTrip) {
  RoundMetrics m;
  m.round_id = 3;
  m.started_at = kT0;
  m.cameras = 4;
  m.capture_wall_ms = 10;
  m.classify_wall_ms = 11;
  m.map_wall_ms = 12;
  m.notify_wall_ms = 13;
  m.total_wall_ms = 46;
  m.failures = {{"timeout", 2}};
  m.counts = {1, 1, 1, 1};
  m.deliveries = 1;
  m.fresh = false;
  const auto back = RoundMetrics::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
}

TEST(Pipeline, RoundsProduceMapMetricsAndApi) {
  auto sim = four_cameras();
  fwtest::TempDir dir("pipe");
  Pipeline p(config_for(dir, *sim));
  Api api(p);

  EXPECT_EQ(api.get("/map.geojson")->status, 503);
  EXPECT_EQ(api.get("/events")->status, 503);
  EXPECT_EQ(api.get("/camera/north")->status, 503);
  EXPECT_EQ(api.get("/camera/nobody")->status, 404);
  EXPECT_EQ(api.get("/healthz")->status, 200);

  for (int i = 0; i < 3; ++i) {
    const auto m = p.run_once();
    EXPECT_EQ(m.round_id, static_cast<std::uint64_t>(i + 1));
    EXPECT_EQ(m.counts, (StatusCounts{1, 1, 1, 1}));
    EXPECT_EQ(m.failures.at("connect_error"), 1u);
    EXPECT_TRUE(m.fresh);
  }
  EXPECT_EQ(p.metrics().size(), 3u);
  EXPECT_EQ(p.store().rounds(), (std::vector<std::uint64_t>{1, 2, 3}));

  const auto snap = p.snapshot();
  ASSERT_TRUE(snap);
  EXPECT_EQ(snap->state.round_id, 3u);
  EXPECT_EQ(color_of(snap->state.find("north")->state), "red");
  EXPECT_EQ(color_of(snap->state.find("dark")->state), "white");
  ASSERT_TRUE(snap->state.find("north")->frame_ref);
  EXPECT_TRUE(std::filesystem::exists(*snap->state.find("north")->frame_ref));

  auto map = api.get("/map.geojson");
  ASSERT_TRUE(map);
  EXPECT_EQ(map->status, 200);
  const json doc = json::parse(map->body);
  EXPECT_TRUE(fwtest::check_feature_collection(doc).empty());
  EXPECT_EQ(doc["features"].size(), 4u);

  auto events = api.get("/events");
  ASSERT_EQ(events->status, 200);
  const auto report = SummaryReport::from_json(events->body);
  ASSERT_EQ(report.events.size(), 1u);
  EXPECT_EQ(report.events[0].tvid, "north");
  EXPECT_EQ(report.map_url, "http://127.0.0.1:8080/map.geojson");

  auto camera = api.get("/camera/mid");
  ASSERT_EQ(camera->status, 200);
  EXPECT_EQ(json::parse(camera->body)["properties"]["color"], "green");
  EXPECT_EQ(api.get("/camera/nobody")->status, 404);

  auto metrics = api.get("/metrics");
  ASSERT_EQ(metrics->status, 200);
  EXPECT_EQ(json::parse(metrics->body).size(), 3u);
}

TEST(Pipeline, RestartServesPersistedSnapshotAndContinuesNumbering) {
  auto sim = four_cameras();
  fwtest::TempDir dir("pipe");
  const auto cfg = config_for(dir, *sim);
  {
    Pipeline p(cfg);
    p.run_once();
    p.run_once();
  }
  Pipeline restarted(cfg);
  const auto snap = restarted.snapshot();
  ASSERT_TRUE(snap);
  EXPECT_EQ(snap->state.round_id, 2u);
  EXPECT_EQ(restarted.metrics().size(), 2u);
  Api api(restarted);
  EXPECT_EQ(api.get("/map.geojson")->status, 200);
  EXPECT_EQ(restarted.run_once().round_id, 3u);
}

TEST(Pipeline, DeadFleetGivesAllWhiteMap) {
  auto sim = four_cameras();
  fwtest::TempDir dir("pipe");
  Pipeline p(config_for(dir, *sim));
  sim->stop();
  const auto m = p.run_once();
  EXPECT_EQ(m.counts, (StatusCounts{0, 0, 0, 4}));
  EXPECT_EQ(p.snapshot()->state.counts().white, 4u);
  EXPECT_TRUE(p.snapshot()->report.empty());
}

TEST(Pipeline, BadRegistryAbortsStartup) {
  fwtest::TempDir dir("pipe");
  write(dir / "bad.json", R"({"A": [{"tvid": "x"}]})");
  auto cfg = PipelineConfig::parse(R"({"registry": "bad.json"})", dir.path());
  EXPECT_THROW(Pipeline{cfg}, std::exception);
}

TEST(Pipeline, NotifiesOnFloodAndAttachesWaterLevel) {
  auto sim = four_cameras();
  fwtest::TempDir dir("pipe");
  fwtest::WebhookSink sink;
  auto cfg = config_for(dir, *sim);
  cfg.notifications_enabled = true;
  cfg.notification.recipients = {sink.url()};
  cfg.map_url = "http://maps.local/map.geojson";
  std::filesystem::create_directories(dir / "records");
  // wheel 60 px tall, waterline 24 px up: F_h 0.4
  write(dir / "records" / "north.json", R"({"version": 1, "vehicles": [{"box": [0, 0, 400, 200],
      "wheels": [{"box": [40, 140, 100, 200], "waterline": 176}]}]})");
  write(dir / "records" / "mid.json", R"({"version": 1, "vehicles": [{"box": [0, 0, 400, 200],
      "wheels": [{"box": [40, 140, 100, 200], "waterline": 140}]}]})");
  cfg.detector = DetectorChoice{DetectorChoice::Kind::records, dir / "records"};
  cfg.validate();
  Pipeline p(cfg);

  const auto m1 = p.run_once();
  EXPECT_EQ(m1.deliveries, 1u);
  const auto m2 = p.run_once();  // same flood set
  EXPECT_EQ(m2.deliveries, 0u);
  const auto reqs = sink.requests();
  ASSERT_EQ(reqs.size(), 1u);
  const auto report = SummaryReport::from_json(reqs[0].body);
  EXPECT_EQ(report.map_url, "http://maps.local/map.geojson");
  ASSERT_EQ(report.events.size(), 1u);
  ASSERT_TRUE(report.events[0].water_level);
  EXPECT_EQ(report.events[0].water_level->grade, Grade::flooded_above_third);
  EXPECT_NEAR(report.events[0].water_level->estimate->depth_cm, 26.576, 1e-9);

  // only flood cameras are graded
  EXPECT_FALSE(p.snapshot()->state.find("mid")->water_level);
}

TEST(Pipeline, SchedulerRunsUntilStopped) {
  auto sim = four_cameras();
  fwtest::TempDir dir("pipe");
  Pipeline p(config_for(dir, *sim));
  std::jthread loop([&](std::stop_token st) { p.run(st); });
  for (int i = 0; i < 200 && p.metrics().empty(); ++i) std::this_thread::sleep_for(50ms);
  const auto t0 = std::chrono::steady_clock::now();
  loop.request_stop();
  loop.join();
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 5s);
  EXPECT_EQ(p.metrics().size(), 1u);
}
