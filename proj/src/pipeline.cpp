#include "floodwatch/pipeline.hpp"

#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace floodwatch {

namespace fs = std::filesystem;
using json = nlohmann::json;
using std::chrono::milliseconds;
using std::chrono::seconds;

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename T>
T get(const json& obj, const char* key, const char* where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad or missing '") + key + "' in " + where);
  }
}

std::int64_t ms_between(std::chrono::steady_clock::time_point a,
                        std::chrono::steady_clock::time_point b) {
  return std::chrono::duration_cast<milliseconds>(b - a).count();
}

}  // namespace

PipelineConfig PipelineConfig::parse(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(doc,
                      {"registry", "data_dir", "mode", "interval_override_s", "listen", "map_url",
                       "retention", "store_frames", "classify_workers", "tire", "capture",
                       "classifier", "detector", "notification"},
                      "config");

  PipelineConfig cfg;
  cfg.registry_path = resolve(base_dir, get<std::string>(doc, "registry", "config"));
  if (doc.contains("data_dir")) {
    cfg.data_dir = resolve(base_dir, get<std::string>(doc, "data_dir", "config"));
  } else if (!base_dir.empty()) {
    cfg.data_dir = base_dir / cfg.data_dir;
  }
  if (doc.contains("mode")) {
    auto m = refresh_mode_from_string(get<std::string>(doc, "mode", "config"));
    if (!m) throw ConfigError("mode must be storm_advisory or normal");
    cfg.mode = *m;
  }
  if (doc.contains("interval_override_s")) {
    cfg.interval_override = seconds(get<std::int64_t>(doc, "interval_override_s", "config"));
  }
  if (doc.contains("listen")) cfg.listen_address = get<std::string>(doc, "listen", "config");
  if (doc.contains("map_url")) cfg.map_url = get<std::string>(doc, "map_url", "config");
  if (doc.contains("retention")) cfg.retention = get<std::size_t>(doc, "retention", "config");
  if (doc.contains("store_frames")) cfg.store_frames = get<bool>(doc, "store_frames", "config");
  if (doc.contains("classify_workers")) {
    cfg.classify_workers = get<unsigned>(doc, "classify_workers", "config");
  }
  if (doc.contains("tire")) {
    try {
      cfg.water_level.tire = TireSpec::parse(get<std::string>(doc, "tire", "config"));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("tire: ") + e.what());
    }
  }

  if (doc.contains("capture")) {
    const json& c = doc["capture"];
    if (!c.is_object()) throw ConfigError("capture must be an object");
    reject_unknown_keys(c,
                        {"pool_size", "deadline_ms", "grace_ms", "network_budget_s",
                         "round_budget_s", "jpeg_quality"},
                        "capture");
    auto& cap = cfg.capture;
    if (c.contains("pool_size")) cap.pool_size = get<std::size_t>(c, "pool_size", "capture");
    if (c.contains("deadline_ms")) {
      cap.per_stream_deadline = milliseconds(get<std::int64_t>(c, "deadline_ms", "capture"));
    }
    if (c.contains("grace_ms")) cap.grace = milliseconds(get<std::int64_t>(c, "grace_ms", "capture"));
    if (c.contains("network_budget_s")) {
      cap.network_budget = seconds(get<std::int64_t>(c, "network_budget_s", "capture"));
    }
    if (c.contains("round_budget_s")) {
      cap.round_budget = seconds(get<std::int64_t>(c, "round_budget_s", "capture"));
    }
    if (c.contains("jpeg_quality")) cap.jpeg_quality = get<int>(c, "jpeg_quality", "capture");
  }

  if (doc.contains("classifier")) {
    const json& c = doc["classifier"];
    reject_unknown_keys(c, {"backend", "socket"}, "classifier");
    const auto backend = get<std::string>(c, "backend", "classifier");
    if (backend == "stub") {
      cfg.classifier.kind = ClassifierChoice::Kind::stub;
    } else if (backend == "external") {
      cfg.classifier.kind = ClassifierChoice::Kind::external;
      cfg.classifier.socket_path = resolve(base_dir, get<std::string>(c, "socket", "classifier"));
    } else {
      throw ConfigError("classifier backend must be stub or external");
    }
  }

  if (doc.contains("detector") && !doc["detector"].is_null()) {
    const json& d = doc["detector"];
    reject_unknown_keys(d, {"backend", "socket", "dir"}, "detector");
    const auto backend = get<std::string>(d, "backend", "detector");
    DetectorChoice choice;
    if (backend == "external") {
      choice.kind = DetectorChoice::Kind::external;
      choice.path = resolve(base_dir, get<std::string>(d, "socket", "detector"));
    } else if (backend == "records") {
      choice.kind = DetectorChoice::Kind::records;
      choice.path = resolve(base_dir, get<std::string>(d, "dir", "detector"));
    } else {
      throw ConfigError("detector backend must be external or records");
    }
    cfg.detector = choice;
  }

  if (doc.contains("notification")) {
    const json& n = doc["notification"];
    reject_unknown_keys(n, {"enabled", "mode", "min_gap_s", "recipients"}, "notification");
    cfg.notifications_enabled = n.value("enabled", true);
    if (n.contains("mode")) {
      auto m = notify_mode_from_string(get<std::string>(n, "mode", "notification"));
      if (!m) throw ConfigError("notification mode must be every_round or on_change");
      cfg.notification.mode = *m;
    }
    if (n.contains("min_gap_s")) {
      cfg.notification.min_gap = seconds(get<std::int64_t>(n, "min_gap_s", "notification"));
    }
    if (n.contains("recipients")) {
      cfg.notification.recipients = get<std::vector<std::string>>(n, "recipients", "notification");
    }
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

void PipelineConfig::apply_env() {
  if (const char* m = std::getenv("FLOODWATCH_MODE"); m && *m) {
    auto mode_value = refresh_mode_from_string(m);
    if (!mode_value) throw ConfigError(std::string("FLOODWATCH_MODE: unknown mode ") + m);
    mode = *mode_value;
  }
  if (const char* l = std::getenv("FLOODWATCH_LISTEN"); l && *l) listen_address = l;
}

void PipelineConfig::validate() const {
  if (!fs::exists(registry_path)) throw ConfigError("registry not found: " + registry_path.string());
  if (interval_override && *interval_override < seconds(60)) {
    throw ConfigError("interval_override must be >= 60 s");
  }
  if (retention == 0) throw ConfigError("retention must be >= 1");
  capture.validate();
  notification.validate(notifications_enabled);
  if (classifier.kind == ClassifierChoice::Kind::external && !fs::exists(classifier.socket_path)) {
    throw ConfigError("classifier socket not found: " + classifier.socket_path.string());
  }
  if (detector && !fs::exists(detector->path)) {
    throw ConfigError("detector path not found: " + detector->path.string());
  }
  parse_listen_address(listen_address);
  if (!map_url.empty() && !is_valid_uri(map_url)) throw ConfigError("map_url is not a URI");
}

std::string PipelineConfig::effective_map_url() const {
  return map_url.empty() ? "http://" + listen_address + "/map.geojson" : map_url;
}

std::pair<std::string, std::uint16_t> parse_listen_address(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw ConfigError("listen address must be host:port: " + std::string(text));
  }
  const std::string port_text(text.substr(colon + 1));
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw ConfigError("bad port in listen address: " + std::string(text));
  return {std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

// --- metrics ------------------------------------------------------------------

std::string RoundMetrics::to_json() const {
  json j;
  j["round_id"] = round_id;
  j["started_at"] = format_timestamp(started_at);
  j["cameras"] = cameras;
  j["capture_wall_ms"] = capture_wall_ms;
  j["classify_wall_ms"] = classify_wall_ms;
  j["map_wall_ms"] = map_wall_ms;
  j["notify_wall_ms"] = notify_wall_ms;
  j["total_wall_ms"] = total_wall_ms;
  j["failures"] = failures;
  j["status"] = {{"red", counts.red}, {"green", counts.green}, {"gray", counts.gray},
                 {"white", counts.white}};
  j["deliveries"] = deliveries;
  j["fresh"] = fresh;
  return j.dump();
}

RoundMetrics RoundMetrics::from_json(std::string_view text) {
  const json j = json::parse(text.begin(), text.end());
  RoundMetrics m;
  m.round_id = j.at("round_id").get<std::uint64_t>();
  m.started_at = parse_timestamp(j.at("started_at").get<std::string>());
  m.cameras = j.value("cameras", std::size_t{0});
  m.capture_wall_ms = j.at("capture_wall_ms").get<std::int64_t>();
  m.classify_wall_ms = j.at("classify_wall_ms").get<std::int64_t>();
  m.map_wall_ms = j.at("map_wall_ms").get<std::int64_t>();
  m.notify_wall_ms = j.at("notify_wall_ms").get<std::int64_t>();
  m.total_wall_ms = j.at("total_wall_ms").get<std::int64_t>();
  m.failures = j.value("failures", std::map<std::string, std::size_t>{});
  const json& s = j.at("status");
  m.counts = StatusCounts{s.at("red").get<std::size_t>(), s.at("green").get<std::size_t>(),
                          s.at("gray").get<std::size_t>(), s.at("white").get<std::size_t>()};
  m.deliveries = j.value("deliveries", std::size_t{0});
  m.fresh = j.value("fresh", true);
  return m;
}

Timestamp next_tick_after(Timestamp anchor, seconds tick, Timestamp now) {
  if (tick.count() <= 0) throw std::invalid_argument("tick must be positive");
  if (now < anchor) return anchor;
  const auto elapsed = now - anchor;
  const auto k = elapsed / tick + 1;
  return anchor + k * std::chrono::duration_cast<milliseconds>(tick);
}

// --- pipeline -------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<ClassifierBackend> classifier,
                   std::shared_ptr<DetectorBackend> detector,
                   std::shared_ptr<WebhookTransport> transport)
    : config_(std::move(config)),
      registry_(CameraRegistry::load(config_.registry_path)),
      classifier_(std::move(classifier)),
      detector_(std::move(detector)),
      store_(config_.data_dir, config_.retention),
      metrics_log_(config_.data_dir / "metrics.log") {
  if (!classifier_) {
    if (config_.classifier.kind == ClassifierChoice::Kind::external) {
      classifier_ = std::make_shared<SocketBackend>(config_.classifier.socket_path);
    } else {
      classifier_ = stub_backend();
    }
  }
  if (!detector_ && config_.detector) {
    if (config_.detector->kind == DetectorChoice::Kind::external) {
      detector_ = std::make_shared<SocketDetector>(config_.detector->path);
    } else {
      detector_ = std::make_shared<RecordDirectoryDetector>(config_.detector->path);
    }
  }
  if (config_.store_frames) config_.capture.spool_dir = store_.frames_dir();

  NotificationPolicy policy = config_.notification;
  if (!config_.notifications_enabled) policy.recipients.clear();
  notifier_ = std::make_unique<Notifier>(
      policy, std::make_shared<DeliveryLog>(config_.data_dir / "deliveries.log"),
      std::move(transport));

  if (auto latest = store_.load_latest()) {
    next_round_id_ = latest->round_id + 1;
    spdlog::info("serving persisted round {} until the next round completes", latest->round_id);
    publish(std::move(*latest));
  }

  std::ifstream in(metrics_log_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      metrics_.push_back(RoundMetrics::from_json(line));
    } catch (const std::exception&) {
      spdlog::warn("skipping unreadable metrics line");
    }
  }
}

void Pipeline::publish(MapState state) {
  auto snap = std::make_shared<Snapshot>();
  snap->report = summary_report(state, config_.effective_map_url());
  snap->geojson = to_geojson(state);
  snap->events_json = snap->report.to_json();
  snap->state = std::move(state);
  std::lock_guard lock(snap_mu_);
  snapshot_ = std::move(snap);
}

std::shared_ptr<const Pipeline::Snapshot> Pipeline::snapshot() const {
  std::lock_guard lock(snap_mu_);
  return snapshot_;
}

std::vector<RoundMetrics> Pipeline::metrics() const {
  std::lock_guard lock(metrics_mu_);
  return metrics_;
}

RoundMetrics Pipeline::run_once() {
  std::lock_guard round_lock(round_mu_);
  using clock = std::chrono::steady_clock;
  const std::uint64_t round_id = next_round_id_++;
  RoundMetrics m;
  m.round_id = round_id;
  m.cameras = registry_.size();

  const auto t0 = clock::now();
  RoundResult round = run_round(registry_, config_.capture, round_id, &probe_);
  m.started_at = round.started_at;
  const auto t1 = clock::now();

  std::vector<std::size_t> ok_index;
  std::vector<std::span<const std::uint8_t>> frames;
  for (std::size_t i = 0; i < round.results.size(); ++i) {
    if (const auto* f = round.results[i].frame()) {
      ok_index.push_back(i);
      frames.emplace_back(f->jpeg);
    }
  }
  const auto labels_vec = classify_batch(*classifier_, frames, config_.classify_workers);
  LabelMap labels;
  for (std::size_t k = 0; k < ok_index.size(); ++k) {
    labels.emplace(round.results[ok_index[k]].tvid, labels_vec[k]);
  }
  AssessmentMap levels;
  if (detector_) {
    for (std::size_t k = 0; k < ok_index.size(); ++k) {
      if (labels_vec[k].label != SceneClass::flood) continue;
      const auto& r = round.results[ok_index[k]];
      try {
        if (auto a = assess(detector_->detect(r.tvid, r.frame()->jpeg), config_.water_level)) {
          levels.emplace(r.tvid, *a);
        }
      } catch (const std::exception& e) {
        spdlog::warn("round {}: water level for {} failed: {}", round_id, r.tvid, e.what());
      }
    }
  }
  const auto t2 = clock::now();

  MapState state = update_map(registry_, round, labels, levels, now_ms());
  store_.save(state);
  const auto previous = snapshot();
  const auto t3 = clock::now();

  std::vector<Delivery> deliveries;
  try {
    deliveries = notifier_->on_round(previous ? &previous->state : nullptr, state,
                                     config_.effective_map_url());
  } catch (const std::exception& e) {
    spdlog::error("round {}: notification step failed: {}", round_id, e.what());
  }
  const auto t4 = clock::now();

  m.capture_wall_ms = ms_between(t0, t1);
  m.classify_wall_ms = ms_between(t1, t2);
  m.map_wall_ms = ms_between(t2, t3);
  m.notify_wall_ms = ms_between(t3, t4);
  m.total_wall_ms = ms_between(t0, t4);
  for (auto kind : {FailureKind::connect_error, FailureKind::timeout, FailureKind::decode_error,
                    FailureKind::empty_stream}) {
    m.failures[std::string(to_string(kind))] = round.failures(kind);
  }
  m.counts = state.counts();
  m.deliveries = static_cast<std::size_t>(
      std::count_if(deliveries.begin(), deliveries.end(), [](auto& d) { return d.delivered(); }));
  m.fresh = state.generated_at - state.capture_started_at <= config_.interval();
  if (!m.fresh) {
    spdlog::warn("round {}: map is older than the {} s refresh interval", round_id,
                 config_.interval().count());
  }

  publish(std::move(state));
  {
    std::lock_guard lock(metrics_mu_);
    metrics_.push_back(m);
    std::ofstream out(metrics_log_, std::ios::app);
    out << m.to_json() << '\n';
  }
  spdlog::info("round {}: capture {} ms, classify {} ms, total {} ms, red {} green {} gray {} white {}",
               round_id, m.capture_wall_ms, m.classify_wall_ms, m.total_wall_ms, m.counts.red,
               m.counts.green, m.counts.gray, m.counts.white);
  return m;
}

void Pipeline::run(std::stop_token stop) {
  const seconds tick = config_.interval();
  const Timestamp anchor = now_ms();
  std::mutex mu;
  std::condition_variable_any cv;
  while (!stop.stop_requested()) {
    try {
      run_once();
    } catch (const std::exception& e) {
      spdlog::error("round failed: {}", e.what());
    }
    const Timestamp next = next_tick_after(anchor, tick, now_ms());
    std::unique_lock lock(mu);
    cv.wait_for(lock, stop, next - now_ms(), [] { return false; });
  }
}

// --- HTTP API ---------------------------------------------------------------------

struct ApiServer::Impl {
  Pipeline& pipeline;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Pipeline& p) : pipeline(p) {}
};

ApiServer::ApiServer(Pipeline& pipeline) : impl_(std::make_unique<Impl>(pipeline)) {
  auto& srv = impl_->server;
  Pipeline& p = pipeline;
  auto unavailable = [](httplib::Response& res) {
    res.status = 503;
    res.set_content(R"({"error":"no round completed yet"})", "application/json");
  };
  srv.Get("/map.geojson", [&p, unavailable](const httplib::Request&, httplib::Response& res) {
    auto snap = p.snapshot();
    if (!snap) return unavailable(res);
    res.set_content(snap->geojson, "application/geo+json");
  });
  srv.Get("/events", [&p, unavailable](const httplib::Request&, httplib::Response& res) {
    auto snap = p.snapshot();
    if (!snap) return unavailable(res);
    res.set_content(snap->events_json, "application/json");
  });
  srv.Get(R"(/camera/([^/]+))", [&p, unavailable](const httplib::Request& req,
                                                   httplib::Response& res) {
    const std::string tvid = req.matches[1];
    auto snap = p.snapshot();
    const CameraStatus* st = snap ? snap->state.find(tvid) : nullptr;
    if (!st) {
      if (snap || !p.registry().lookup(tvid)) {
        res.status = 404;
        res.set_content(json{{"error", "unknown camera"}, {"tvid", tvid}}.dump(),
                        "application/json");
        return;
      }
      return unavailable(res);
    }
    res.set_content(camera_feature_json(*st), "application/geo+json");
  });
  srv.Get("/metrics", [&p](const httplib::Request&, httplib::Response& res) {
    std::string body = "[";
    bool first = true;
    for (const auto& m : p.metrics()) {
      if (!first) body += ',';
      body += m.to_json();
      first = false;
    }
    body += ']';
    res.set_content(body, "application/json");
  });
  srv.Get("/healthz", [&p](const httplib::Request&, httplib::Response& res) {
    auto snap = p.snapshot();
    json j{{"status", "ok"}, {"cameras", p.registry().size()}};
    j["last_round"] = snap ? json(snap->state.round_id) : json(nullptr);
    res.set_content(j.dump(), "application/json");
  });
}

ApiServer::~ApiServer() { stop(); }

std::uint16_t ApiServer::start(const std::string& host, std::uint16_t port) {
  auto& srv = impl_->server;
  int bound = port;
  if (port == 0) {
    bound = srv.bind_to_any_port(host);
  } else if (!srv.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw std::runtime_error("cannot bind API server to " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return static_cast<std::uint16_t>(bound);
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace floodwatch
