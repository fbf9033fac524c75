#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "floodwatch/notifier.hpp"
#include "support/temp_dir.hpp"
#include "support/webhook_sink.hpp"

using namespace floodwatch;
using namespace std::chrono_literals;

namespace {

const Timestamp kT0{std::chrono::milliseconds{1'700'000'000'000}};

// Round `id` generated at kT0 + id * 5 min; flood cameras listed, one extra normal camera.
MapState state_with(std::uint64_t id, const std::set<std::string>& floods) {
  MapState s;
  s.round_id = id;
  s.capture_started_at = kT0 + std::chrono::minutes(5 * id);
  s.generated_at = s.capture_started_at + 30s;
  double lat = 25.0;
  for (const auto& tvid : floods) {
    CameraStatus st;
    st.tvid = tvid;
    st.state = CameraState::flood;
    st.probabilities = ClassProbabilities{0.04, 0.92, 0.04};
    st.latitude = lat;
    lat -= 0.1;
    st.longitude = 121.5;
    s.statuses.push_back(st);
  }
  CameraStatus normal;
  normal.tvid = "calm";
  normal.state = CameraState::normal;
  s.statuses.push_back(normal);
  return s;
}

class FakeClock {
 public:
  Timestamp now() const { return t_; }
  void set(Timestamp t) { t_ = t; }
  Notifier::Clock fn() {
    return [this] { return t_; };
  }

 private:
  Timestamp t_ = kT0;
};

// In-process transport counting posts.
class CountingTransport final : public WebhookTransport {
 public:
  TransportResponse post(const std::string& url, const std::string&,
                         const std::multimap<std::string, std::string>&) override {
    std::lock_guard lock(mu_);
    urls.push_back(url);
    return {200};
  }
  std::mutex mu_;
  std::vector<std::string> urls;
};

}  // namespace

TEST(Policy, Validation) {
  NotificationPolicy p;
  EXPECT_THROW(p.validate(true), ConfigError);
  EXPECT_NO_THROW(p.validate(false));
  p.recipients = {"http://127.0.0.1:9/hook"};
  EXPECT_NO_THROW(p.validate());
  p.recipients = {"not a uri"};
  EXPECT_THROW(p.validate(), ConfigError);
  p.recipients = {"https://secure.example/hook"};
  EXPECT_THROW(p.validate(), ConfigError);
  p.recipients = {"http://ok/hook"};
  p.min_gap = -1s;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_EQ(notify_mode_from_string("every_round"), NotifyMode::every_round);
  EXPECT_EQ(notify_mode_from_string("on_change"), NotifyMode::on_change);
  EXPECT_FALSE(notify_mode_from_string("sometimes"));
}

TEST(ShouldNotify, OnChangeExamples) {
  NotificationPolicy p;
  const auto none = state_with(1, {});
  const auto a = state_with(2, {"A"});
  const auto ab = state_with(3, {"A", "B"});
  EXPECT_FALSE(should_notify(nullptr, none, p, std::nullopt));
  EXPECT_TRUE(should_notify(nullptr, a, p, std::nullopt));
  EXPECT_TRUE(should_notify(&none, a, p, std::nullopt));
  EXPECT_FALSE(should_notify(&a, a, p, std::nullopt));
  EXPECT_TRUE(should_notify(&a, ab, p, std::nullopt));
  EXPECT_FALSE(should_notify(&ab, none, p, std::nullopt));
  // inside the gap
  EXPECT_FALSE(should_notify(&a, ab, p, ab.generated_at - 299s));
  EXPECT_TRUE(should_notify(&a, ab, p, ab.generated_at - 300s));
  EXPECT_FALSE(should_notify(&a, ab, p, kT0, kT0 + 10s));
}

TEST(ShouldNotify, EveryRound) {
  NotificationPolicy p;
  p.mode = NotifyMode::every_round;
  const auto a = state_with(2, {"A"});
  EXPECT_TRUE(should_notify(&a, a, p, std::nullopt));
  EXPECT_FALSE(should_notify(&a, state_with(3, {}), p, std::nullopt));
  EXPECT_FALSE(should_notify(&a, a, p, a.generated_at - 60s));
}

TEST(DeliveryLog, AtMostOnceAndPersistence) {
  fwtest::TempDir dir("log");
  const auto path = dir / "deliveries.log";
  {
    DeliveryLog log(path);
    Delivery d{"http://h/a", 3, Delivery::Outcome::delivered, "", kT0};
    EXPECT_TRUE(log.record(d));
    EXPECT_FALSE(log.record(d));
    EXPECT_TRUE(log.record({"http://h/b", 3, Delivery::Outcome::failed, "http 500", kT0 + 1s}));
    EXPECT_TRUE(log.contains(3, "http://h/a"));
    EXPECT_FALSE(log.contains(4, "http://h/a"));
    EXPECT_EQ(log.last_delivered("http://h/a"), kT0);
    EXPECT_FALSE(log.last_delivered("http://h/b"));
    EXPECT_EQ(log.last_delivered_any(), kT0);
  }
  std::ofstream(path, std::ios::app) << "{\"round_id\": 9, \"recip";  // torn tail
  DeliveryLog reloaded(path);
  EXPECT_EQ(reloaded.entries().size(), 2u);
  EXPECT_TRUE(reloaded.contains(3, "http://h/b"));
  EXPECT_FALSE(reloaded.record({"http://h/a", 3, Delivery::Outcome::delivered, "", kT0}));
  EXPECT_TRUE(DeliveryLog().entries().empty());
}

TEST(Notifier, PostsPayloadToWebhook) {
  fwtest::WebhookSink sink;
  NotificationPolicy p;
  p.recipients = {sink.url("/line")};
  auto log = std::make_shared<DeliveryLog>();
  Notifier n(p, log, std::make_shared<HttpTransport>(2s));
  const auto report = summary_report(state_with(4, {"A", "B"}), "http://map/map.geojson");
  const auto out = n.notify(report);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_TRUE(out[0].delivered());
  const auto reqs = sink.requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].path, "/line");
  EXPECT_EQ(reqs[0].round_header, "4");
  EXPECT_NE(reqs[0].content_type.find("application/json"), std::string::npos);
  EXPECT_EQ(SummaryReport::from_json(reqs[0].body), report);
  EXPECT_EQ(nlohmann::json::parse(reqs[0].body)["map_url"], "http://map/map.geojson");
  EXPECT_THROW(n.notify(summary_report(state_with(5, {}), "u")), std::invalid_argument);
}

TEST(Notifier, FailingRecipientIsIsolated) {
  fwtest::WebhookSink good;
  fwtest::WebhookSink bad(500);
  NotificationPolicy p;
  p.recipients = {bad.url(), good.url(), "http://127.0.0.1:1/nobody"};
  Notifier n(p, std::make_shared<DeliveryLog>(), std::make_shared<HttpTransport>(1s));
  const auto out = n.notify(summary_report(state_with(1, {"A"}), "u"));
  ASSERT_EQ(out.size(), 3u);
  std::map<std::string, Delivery> by;
  for (const auto& d : out) by[d.recipient] = d;
  EXPECT_FALSE(by[bad.url()].delivered());
  EXPECT_EQ(by[bad.url()].reason, "http 500");
  EXPECT_TRUE(by[good.url()].delivered());
  EXPECT_FALSE(by["http://127.0.0.1:1/nobody"].delivered());
  EXPECT_FALSE(by["http://127.0.0.1:1/nobody"].reason.empty());
  EXPECT_EQ(good.requests().size(), 1u);
}

TEST(Notifier, RejectsBadRecipientsUpFront) {
  NotificationPolicy p;
  p.recipients = {"::nope::"};
  EXPECT_THROW(Notifier(p, std::make_shared<DeliveryLog>()), ConfigError);
}

TEST(Notifier, OnChangeSequenceYieldsTwoDeliveriesAndReplayIsSilent) {
  auto transport = std::make_shared<CountingTransport>();
  FakeClock clock;
  NotificationPolicy p;
  p.recipients = {"http://h/hook"};
  auto log = std::make_shared<DeliveryLog>();
  Notifier n(p, log, transport, clock.fn());
  const std::vector<MapState> rounds{state_with(1, {}), state_with(2, {"A"}), state_with(3, {"A"}),
                                     state_with(4, {"A", "B"}), state_with(5, {})};
  const MapState* prev = nullptr;
  std::size_t delivered = 0;
  for (const auto& r : rounds) {
    clock.set(r.generated_at);
    for (const auto& d : n.on_round(prev, r, "u")) delivered += d.delivered();
    prev = &r;
  }
  EXPECT_EQ(delivered, 2u);
  EXPECT_EQ(transport->urls.size(), 2u);

  // replay every round later, outside any gap
  clock.set(kT0 + 24h);
  prev = nullptr;
  for (const auto& r : rounds) {
    EXPECT_TRUE(n.on_round(prev, r, "u").empty());
    prev = &r;
  }
  EXPECT_EQ(transport->urls.size(), 2u);
}

TEST(Notifier, MinGapSuppressesBurst) {
  auto transport = std::make_shared<CountingTransport>();
  FakeClock clock;
  NotificationPolicy p;
  p.mode = NotifyMode::every_round;
  p.min_gap = 600s;
  p.recipients = {"http://h/hook"};
  Notifier n(p, std::make_shared<DeliveryLog>(), transport, clock.fn());
  std::size_t sent = 0;
  for (std::uint64_t id = 1; id <= 6; ++id) {
    const auto s = state_with(id, {"A"});  // 5 minutes apart
    clock.set(s.generated_at);
    sent += n.on_round(nullptr, s, "u").size();
  }
  // rounds 1, 3, 5
  EXPECT_EQ(sent, 3u);
}

TEST(Notifier, PersistentLogSurvivesRestart) {
  fwtest::TempDir dir("log");
  auto transport = std::make_shared<CountingTransport>();
  NotificationPolicy p;
  p.recipients = {"http://h/hook"};
  const auto report = summary_report(state_with(7, {"A"}), "u");
  {
    Notifier n(p, std::make_shared<DeliveryLog>(dir / "d.log"), transport);
    EXPECT_EQ(n.notify(report).size(), 1u);
  }
  Notifier again(p, std::make_shared<DeliveryLog>(dir / "d.log"), transport,
                 [] { return kT0 + 48h; });
  EXPECT_TRUE(again.notify(report).empty());
  EXPECT_EQ(transport->urls.size(), 1u);
}
