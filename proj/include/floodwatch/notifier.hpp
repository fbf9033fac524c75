#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "floodwatch/common.hpp"
#include "floodwatch/event_map.hpp"

namespace floodwatch {

enum class NotifyMode { every_round, on_change };

std::string_view to_string(NotifyMode m);
std::optional<NotifyMode> notify_mode_from_string(std::string_view s);

struct NotificationPolicy {
  NotifyMode mode = NotifyMode::on_change;
  std::chrono::seconds min_gap{300};
  std::vector<std::string> recipients;

  /// Rejects a negative gap and malformed recipient URIs; an enabled policy
  /// needs at least one recipient.
  void validate(bool enabled = true) const;
};

/// Gate evaluated once per round. `now` defaults to `current.generated_at`.
/// every_round: at least one flood and min_gap elapsed since last_sent_at.
/// on_change: the flood set differs from `previous`, at least one flood, and
/// min_gap elapsed.
bool should_notify(const MapState* previous, const MapState& current,
                   const NotificationPolicy& policy, std::optional<Timestamp> last_sent_at,
                   std::optional<Timestamp> now = std::nullopt);

struct Delivery {
  enum class Outcome { delivered, failed };

  std::string recipient;
  std::uint64_t round_id = 0;
  Outcome outcome = Outcome::failed;
  std::string reason;  // empty when delivered
  Timestamp attempted_at{};

  bool delivered() const { return outcome == Outcome::delivered; }
  friend bool operator==(const Delivery&, const Delivery&) = default;
};

/// Append-only JSON-lines record of every (round, recipient) decision.
/// Reloaded on construction so the at-most-once rule holds across restarts.
class DeliveryLog {
 public:
  /// Without a path the log is memory-only.
  explicit DeliveryLog(std::optional<std::filesystem::path> path = std::nullopt);

  bool contains(std::uint64_t round_id, std::string_view recipient) const;
  /// Returns false (and writes nothing) if the pair was already recorded.
  bool record(const Delivery& d);
  std::optional<Timestamp> last_delivered(std::string_view recipient) const;
  std::optional<Timestamp> last_delivered_any() const;
  std::vector<Delivery> entries() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::vector<Delivery> entries_;
};

struct TransportResponse {
  int status = 0;
};

class WebhookError : public std::runtime_error {
 public:
  explicit WebhookError(const std::string& what) : std::runtime_error(what) {}
};

class WebhookTransport {
 public:
  virtual ~WebhookTransport() = default;
  /// POSTs `body` as application/json with the given extra headers.
  virtual TransportResponse post(const std::string& url, const std::string& body,
                                 const std::multimap<std::string, std::string>& headers) = 0;
};

/// Plain-HTTP transport (http:// recipients only).
class HttpTransport final : public WebhookTransport {
 public:
  explicit HttpTransport(std::chrono::milliseconds timeout = std::chrono::seconds(10));
  TransportResponse post(const std::string& url, const std::string& body,
                         const std::multimap<std::string, std::string>& headers) override;

 private:
  std::chrono::milliseconds timeout_;
};

class Notifier {
 public:
  using Clock = std::function<Timestamp()>;

  /// Validates the policy up front; bad recipient URIs fail here.
  Notifier(NotificationPolicy policy, std::shared_ptr<DeliveryLog> log,
           std::shared_ptr<WebhookTransport> transport = nullptr, Clock clock = now_ms);

  /// One POST per recipient not already recorded for this round and outside
  /// its min_gap window. Failures come back as Delivery::failed; nothing throws
  /// except the empty-report precondition (std::invalid_argument).
  std::vector<Delivery> notify(const SummaryReport& report);

  /// should_notify followed by notify when the gate opens.
  std::vector<Delivery> on_round(const MapState* previous, const MapState& current,
                                 const std::string& map_url);

  const NotificationPolicy& policy() const { return policy_; }
  DeliveryLog& log() { return *log_; }

 private:
  NotificationPolicy policy_;
  std::shared_ptr<DeliveryLog> log_;
  std::shared_ptr<WebhookTransport> transport_;
  Clock clock_;
};

}  // namespace floodwatch
