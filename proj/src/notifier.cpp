#include "floodwatch/notifier.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace floodwatch {

using json = nlohmann::json;

std::string_view to_string(NotifyMode m) {
  return m == NotifyMode::every_round ? "every_round" : "on_change";
}

std::optional<NotifyMode> notify_mode_from_string(std::string_view s) {
  if (s == "every_round") return NotifyMode::every_round;
  if (s == "on_change") return NotifyMode::on_change;
  return std::nullopt;
}

namespace {

struct HttpTarget {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

std::optional<HttpTarget> split_http_url(std::string_view url) {
  constexpr std::string_view scheme = "http://";
  if (url.size() <= scheme.size() || url.substr(0, scheme.size()) != scheme) return std::nullopt;
  const auto slash = url.find('/', scheme.size());
  HttpTarget t;
  t.origin = std::string(url.substr(0, slash));
  t.path = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
  if (t.origin.size() == scheme.size()) return std::nullopt;
  return t;
}

}  // namespace

void NotificationPolicy::validate(bool enabled) const {
  if (min_gap.count() < 0) throw ConfigError("notification min_gap must be >= 0");
  if (enabled && recipients.empty()) throw ConfigError("notification enabled without recipients");
  for (const auto& r : recipients) {
    if (!is_valid_uri(r)) throw ConfigError("malformed recipient URI: " + r);
    if (!split_http_url(r)) throw ConfigError("recipient must be an http:// URL: " + r);
  }
}

bool should_notify(const MapState* previous, const MapState& current,
                   const NotificationPolicy& policy, std::optional<Timestamp> last_sent_at,
                   std::optional<Timestamp> now) {
  const auto floods = current.flood_tvids();
  if (floods.empty()) return false;
  const Timestamp t = now.value_or(current.generated_at);
  if (last_sent_at && t - *last_sent_at < policy.min_gap) return false;
  if (policy.mode == NotifyMode::every_round) return true;
  const auto before = previous ? previous->flood_tvids() : std::set<std::string>{};
  return floods != before;
}

// --- delivery log -------------------------------------------------------------

namespace {

json delivery_to_json(const Delivery& d) {
  return json{{"round_id", d.round_id},
              {"recipient", d.recipient},
              {"outcome", d.delivered() ? "delivered" : "failed"},
              {"reason", d.reason},
              {"attempted_at", format_timestamp(d.attempted_at)}};
}

Delivery delivery_from_json(const json& j) {
  Delivery d;
  d.round_id = j.at("round_id").get<std::uint64_t>();
  d.recipient = j.at("recipient").get<std::string>();
  d.outcome = j.at("outcome") == "delivered" ? Delivery::Outcome::delivered
                                             : Delivery::Outcome::failed;
  d.reason = j.value("reason", std::string{});
  d.attempted_at = parse_timestamp(j.at("attempted_at").get<std::string>());
  return d;
}

}  // namespace

DeliveryLog::DeliveryLog(std::optional<std::filesystem::path> path) : path_(std::move(path)) {
  if (!path_) return;
  std::ifstream in(*path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      entries_.push_back(delivery_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      // A torn last line from a crash is skipped, not fatal.
      spdlog::warn("{}:{}: skipping unreadable delivery entry ({})", path_->string(), lineno,
                   e.what());
    }
  }
}

bool DeliveryLog::contains(std::uint64_t round_id, std::string_view recipient) const {
  std::lock_guard lock(mu_);
  return std::any_of(entries_.begin(), entries_.end(), [&](const Delivery& d) {
    return d.round_id == round_id && d.recipient == recipient;
  });
}

bool DeliveryLog::record(const Delivery& d) {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.round_id == d.round_id && e.recipient == d.recipient) return false;
  }
  if (path_) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    std::ofstream out(*path_, std::ios::app);
    out << delivery_to_json(d).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + path_->string());
  }
  entries_.push_back(d);
  return true;
}

std::optional<Timestamp> DeliveryLog::last_delivered(std::string_view recipient) const {
  std::lock_guard lock(mu_);
  std::optional<Timestamp> last;
  for (const auto& e : entries_) {
    if (e.delivered() && e.recipient == recipient && (!last || e.attempted_at > *last)) {
      last = e.attempted_at;
    }
  }
  return last;
}

std::optional<Timestamp> DeliveryLog::last_delivered_any() const {
  std::lock_guard lock(mu_);
  std::optional<Timestamp> last;
  for (const auto& e : entries_) {
    if (e.delivered() && (!last || e.attempted_at > *last)) last = e.attempted_at;
  }
  return last;
}

std::vector<Delivery> DeliveryLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

// --- transport ------------------------------------------------------------------

HttpTransport::HttpTransport(std::chrono::milliseconds timeout) : timeout_(timeout) {}

TransportResponse HttpTransport::post(const std::string& url, const std::string& body,
                                      const std::multimap<std::string, std::string>& headers) {
  auto target = split_http_url(url);
  if (!target) throw WebhookError("unsupported URL " + url);
  httplib::Client client(target->origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers h(headers.begin(), headers.end());
  auto res = client.Post(target->path, h, body, "application/json");
  if (!res) throw WebhookError(httplib::to_string(res.error()));
  return TransportResponse{res->status};
}

// --- notifier ---------------------------------------------------------------------

Notifier::Notifier(NotificationPolicy policy, std::shared_ptr<DeliveryLog> log,
                   std::shared_ptr<WebhookTransport> transport, Clock clock)
    : policy_(std::move(policy)),
      log_(log ? std::move(log) : std::make_shared<DeliveryLog>()),
      transport_(transport ? std::move(transport) : std::make_shared<HttpTransport>()),
      clock_(std::move(clock)) {
  policy_.validate(false);
}

std::vector<Delivery> Notifier::notify(const SummaryReport& report) {
  if (report.empty()) throw std::invalid_argument("notify called with an empty report");
  const std::string body = report.to_json();
  const std::multimap<std::string, std::string> headers{
      {"X-Floodwatch-Round", std::to_string(report.round_id)}};
  const Timestamp now = clock_();

  std::vector<std::string> targets;
  for (const auto& r : policy_.recipients) {
    if (log_->contains(report.round_id, r)) continue;
    const auto last = log_->last_delivered(r);
    if (last && now - *last < policy_.min_gap) continue;
    targets.push_back(r);
  }

  std::vector<Delivery> out(targets.size());
  {
    std::vector<std::jthread> senders;
    senders.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      senders.emplace_back([&, i] {
        Delivery d;
        d.recipient = targets[i];
        d.round_id = report.round_id;
        d.attempted_at = now;
        try {
          const auto res = transport_->post(targets[i], body, headers);
          if (res.status >= 200 && res.status < 300) {
            d.outcome = Delivery::Outcome::delivered;
          } else {
            d.reason = "http " + std::to_string(res.status);
          }
        } catch (const std::exception& e) {
          d.reason = e.what();
        }
        out[i] = std::move(d);
      });
    }
  }

  std::vector<Delivery> recorded;
  for (auto& d : out) {
    try {
      // Another writer may have claimed the pair in the meantime.
      if (!log_->record(d)) continue;
    } catch (const std::exception& e) {
      spdlog::error("delivery log: {}", e.what());
    }
    if (!d.delivered()) {
      spdlog::warn("round {}: delivery to {} failed: {}", d.round_id, d.recipient, d.reason);
    }
    recorded.push_back(std::move(d));
  }
  return recorded;
}

std::vector<Delivery> Notifier::on_round(const MapState* previous, const MapState& current,
                                         const std::string& map_url) {
  const Timestamp now = clock_();
  if (!should_notify(previous, current, policy_, log_->last_delivered_any(), now)) return {};
  return notify(summary_report(current, map_url));
}

}  // namespace floodwatch
