#pragma once

// Loopback HTTP server that records webhook POSTs and answers with a fixed
// status.

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

namespace fwtest {

class WebhookSink {
 public:
  struct Request {
    std::string path;
    std::string body;
    std::string round_header;
    std::string content_type;
  };

  explicit WebhookSink(int status = 200) : status_(status) {
    server_.Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mu_);
        requests_.push_back({req.path, req.body, req.get_header_value("X-Floodwatch-Round"),
                             req.get_header_value("Content-Type")});
      }
      res.status = status_;
      res.set_content("{}", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~WebhookSink() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path = "/hook") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

  std::vector<Request> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  int status_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::vector<Request> requests_;
};

}  // namespace fwtest
