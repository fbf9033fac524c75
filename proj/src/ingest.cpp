#include "floodwatch/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <curl/curl.h>
#include <spdlog/spdlog.h>

#include "floodwatch/image.hpp"

namespace floodwatch {

namespace {

constexpr std::size_t kMaxBodyBytes = 32u << 20;

void ensure_curl_global() {
  static const bool ready = [] { return curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK; }();
  if (!ready) throw std::runtime_error("curl_global_init failed");
}

bool iequals_prefix(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t find_bytes(const std::vector<std::uint8_t>& hay, std::string_view needle,
                       std::size_t from) {
  if (needle.empty() || hay.size() < needle.size()) return std::string_view::npos;
  auto it = std::search(hay.begin() + static_cast<std::ptrdiff_t>(std::min(from, hay.size())),
                        hay.end(), needle.begin(), needle.end());
  return it == hay.end() ? std::string_view::npos : static_cast<std::size_t>(it - hay.begin());
}

struct Transfer {
  std::string content_type;
  long status = 0;
  std::vector<std::uint8_t> body;
  std::optional<MultipartFrameReader> multipart;
  bool body_overflow = false;
  bool first_body_chunk = true;
};

std::size_t on_header(char* data, std::size_t size, std::size_t n, void* user) {
  auto* t = static_cast<Transfer*>(user);
  const std::string_view line(data, size * n);
  if (line.starts_with("HTTP/")) {
    t->content_type.clear();  // new response (redirect or 100-continue)
  } else if (iequals_prefix(line, "content-type:")) {
    t->content_type = std::string(trim(line.substr(13)));
  }
  return size * n;
}

std::size_t on_body(char* data, std::size_t size, std::size_t n, void* user) {
  auto* t = static_cast<Transfer*>(user);
  const std::size_t len = size * n;
  if (t->first_body_chunk) {
    t->first_body_chunk = false;
    if (auto boundary = MultipartFrameReader::boundary_from_content_type(t->content_type)) {
      t->multipart.emplace(*boundary);
    }
  }
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(data), len);
  if (t->multipart) {
    // Returning short aborts the transfer once the first frame is complete.
    return t->multipart->feed(bytes) ? 0 : len;
  }
  if (t->body.size() + len > kMaxBodyBytes) {
    t->body_overflow = true;
    return 0;
  }
  t->body.insert(t->body.end(), bytes.begin(), bytes.end());
  return len;
}

CaptureFailure failure(FailureKind kind, std::string detail) {
  return CaptureFailure{kind, std::move(detail)};
}

}  // namespace

void CaptureConfig::validate() const {
  if (pool_size < 1) throw ConfigError("capture pool_size must be >= 1");
  if (per_stream_deadline.count() <= 0) throw ConfigError("per_stream_deadline must be > 0");
  if (grace.count() < 0) throw ConfigError("grace must be >= 0");
  if (network_budget.count() <= 0 || round_budget.count() <= 0) {
    throw ConfigError("round budgets must be > 0");
  }
  if (jpeg_quality < 1 || jpeg_quality > 100) throw ConfigError("jpeg_quality must be in 1..100");
}

std::string_view to_string(FailureKind k) {
  switch (k) {
    case FailureKind::connect_error:
      return "connect_error";
    case FailureKind::timeout:
      return "timeout";
    case FailureKind::decode_error:
      return "decode_error";
    case FailureKind::empty_stream:
      return "empty_stream";
  }
  return "connect_error";
}

std::size_t RoundResult::failures(FailureKind kind) const {
  return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [&](const auto& r) {
    const auto* f = r.failure();
    return f && f->kind == kind;
  }));
}

std::size_t RoundResult::successes() const {
  return static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const auto& r) { return r.ok(); }));
}

// ---------------------------------------------------------------------------

MultipartFrameReader::MultipartFrameReader(std::string boundary)
    : delimiter_(boundary.starts_with("--") ? std::move(boundary) : "--" + boundary) {}

std::optional<std::string> MultipartFrameReader::boundary_from_content_type(
    std::string_view content_type) {
  if (!iequals_prefix(trim(content_type), "multipart/")) return std::nullopt;
  std::size_t pos = 0;
  while (pos < content_type.size()) {
    const auto semi = content_type.find(';', pos);
    std::string_view param = trim(content_type.substr(pos, semi == std::string_view::npos
                                                                   ? std::string_view::npos
                                                                   : semi - pos));
    if (iequals_prefix(param, "boundary=")) {
      std::string_view value = trim(param.substr(9));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
      }
      if (value.empty()) return std::nullopt;
      return std::string(value);
    }
    if (semi == std::string_view::npos) break;
    pos = semi + 1;
  }
  return std::nullopt;
}

bool MultipartFrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (complete_) return true;
  seen_ += bytes.size();
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
  return try_extract();
}

bool MultipartFrameReader::try_extract() {
  if (!in_part_) {
    const std::size_t d = find_bytes(buffer_, delimiter_, 0);
    if (d == std::string_view::npos) return false;
    const std::size_t headers_end = find_bytes(buffer_, "\r\n\r\n", d + delimiter_.size());
    if (headers_end == std::string_view::npos) return false;
    const std::string headers(buffer_.begin() + static_cast<std::ptrdiff_t>(d + delimiter_.size()),
                              buffer_.begin() + static_cast<std::ptrdiff_t>(headers_end));
    content_length_.reset();
    std::size_t line_start = 0;
    while (line_start < headers.size()) {
      auto line_end = headers.find("\r\n", line_start);
      if (line_end == std::string::npos) line_end = headers.size();
      const std::string_view line(headers.data() + line_start, line_end - line_start);
      if (iequals_prefix(line, "content-length:")) {
        try {
          content_length_ = static_cast<std::size_t>(std::stoull(std::string(trim(line.substr(15)))));
        } catch (const std::exception&) {
          content_length_.reset();
        }
      }
      line_start = line_end + 2;
    }
    body_start_ = headers_end + 4;
    in_part_ = true;
  }
  if (content_length_) {
    if (buffer_.size() < body_start_ + *content_length_) return false;
    frame_.assign(buffer_.begin() + static_cast<std::ptrdiff_t>(body_start_),
                  buffer_.begin() + static_cast<std::ptrdiff_t>(body_start_ + *content_length_));
  } else {
    const std::size_t next = find_bytes(buffer_, "\r\n" + delimiter_, body_start_);
    if (next == std::string_view::npos) return false;
    frame_.assign(buffer_.begin() + static_cast<std::ptrdiff_t>(body_start_),
                  buffer_.begin() + static_cast<std::ptrdiff_t>(next));
  }
  complete_ = true;
  return true;
}

std::span<const std::uint8_t> MultipartFrameReader::partial() const {
  if (!in_part_ || body_start_ > buffer_.size()) return {};
  return std::span<const std::uint8_t>(buffer_).subspan(body_start_);
}

// ---------------------------------------------------------------------------

CaptureResult capture_one(const CameraRecord& camera, std::chrono::milliseconds deadline,
                          int jpeg_quality) {
  ensure_curl_global();
  const auto t0 = std::chrono::steady_clock::now();
  CaptureResult result;
  result.tvid = camera.tvid;
  auto finish = [&](auto outcome) {
    result.outcome = std::move(outcome);
    result.captured_at = now_ms();
    result.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    return result;
  };
  if (deadline.count() <= 0) throw std::invalid_argument("capture deadline must be > 0");

  Transfer t;
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), &curl_easy_cleanup);
  if (!curl) return finish(failure(FailureKind::connect_error, "curl_easy_init failed"));
  CURL* h = curl.get();
  curl_easy_setopt(h, CURLOPT_URL, camera.url.c_str());
  curl_easy_setopt(h, CURLOPT_NOSIGNAL, 1L);
  curl_easy_setopt(h, CURLOPT_TIMEOUT_MS, static_cast<long>(deadline.count()));
  curl_easy_setopt(h, CURLOPT_CONNECTTIMEOUT_MS, static_cast<long>(deadline.count()));
  curl_easy_setopt(h, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(h, CURLOPT_MAXREDIRS, 3L);
  curl_easy_setopt(h, CURLOPT_FORBID_REUSE, 1L);
  curl_easy_setopt(h, CURLOPT_HEADERFUNCTION, &on_header);
  curl_easy_setopt(h, CURLOPT_HEADERDATA, &t);
  curl_easy_setopt(h, CURLOPT_WRITEFUNCTION, &on_body);
  curl_easy_setopt(h, CURLOPT_WRITEDATA, &t);
  char errbuf[CURL_ERROR_SIZE] = {0};
  curl_easy_setopt(h, CURLOPT_ERRORBUFFER, errbuf);

  const CURLcode rc = curl_easy_perform(h);
  curl_easy_getinfo(h, CURLINFO_RESPONSE_CODE, &t.status);
  curl.reset();
  const std::string why = errbuf[0] ? errbuf : curl_easy_strerror(rc);

  const bool multipart_done = t.multipart && t.multipart->complete();
  if (!multipart_done) {
    switch (rc) {
      case CURLE_OK:
      case CURLE_PARTIAL_FILE:
      case CURLE_RECV_ERROR:
      case CURLE_GOT_NOTHING:
        break;
      case CURLE_OPERATION_TIMEDOUT:
        return finish(failure(FailureKind::timeout, why));
      case CURLE_WRITE_ERROR:
        if (t.body_overflow) return finish(failure(FailureKind::decode_error, "frame too large"));
        return finish(failure(FailureKind::connect_error, why));
      default:
        return finish(failure(FailureKind::connect_error, why));
    }
  }
  if (t.status >= 400) {
    return finish(failure(FailureKind::connect_error, "http " + std::to_string(t.status)));
  }

  std::span<const std::uint8_t> encoded;
  if (t.multipart) {
    if (multipart_done) {
      encoded = t.multipart->frame();
    } else if (!t.multipart->partial().empty()) {
      return finish(failure(FailureKind::decode_error, "stream ended inside a frame"));
    } else {
      return finish(failure(FailureKind::empty_stream, "no frame in multipart stream"));
    }
  } else {
    encoded = t.body;
  }
  if (encoded.empty()) return finish(failure(FailureKind::empty_stream, "empty response body"));

  try {
    const Image img = decode_jpeg(encoded);
    CapturedFrame frame{encode_jpeg(img, jpeg_quality), img.width, img.height};
    return finish(std::move(frame));
  } catch (const DecodeError& e) {
    return finish(failure(FailureKind::decode_error, e.what()));
  }
}

namespace {

std::optional<std::filesystem::path> spool(const CaptureConfig& config, std::uint64_t round_id,
                                           const CaptureResult& r) {
  const auto* frame = r.frame();
  if (!config.spool_dir || !frame) return std::nullopt;
  const auto dir = *config.spool_dir / std::to_string(round_id);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / (r.tvid + ".jpg");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return std::nullopt;
  out.write(reinterpret_cast<const char*>(frame->jpeg.data()),
            static_cast<std::streamsize>(frame->jpeg.size()));
  return out ? std::optional(path) : std::nullopt;
}

}  // namespace

RoundResult run_round(const CameraRegistry& registry, const CaptureConfig& config,
                      std::uint64_t round_id, CaptureProbe* probe) {
  config.validate();
  ensure_curl_global();
  RoundResult round;
  round.round_id = round_id;
  round.started_at = now_ms();
  const auto t0 = std::chrono::steady_clock::now();

  const auto records = registry.records();
  round.results.resize(records.size());
  std::vector<std::chrono::milliseconds> done_at(records.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      if (probe) {
        const std::size_t now_in = ++probe->in_flight;
        ++probe->started;
        std::size_t prev = probe->max_in_flight.load();
        while (now_in > prev && !probe->max_in_flight.compare_exchange_weak(prev, now_in)) {
        }
      }
      CaptureResult r = capture_one(records[i], config.per_stream_deadline, config.jpeg_quality);
      r.frame_path = spool(config, round_id, r);
      round.results[i] = std::move(r);
      done_at[i] = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - t0);
      if (probe) --probe->in_flight;
    }
  };

  const std::size_t workers = std::min(config.pool_size, std::max<std::size_t>(records.size(), 1));
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  round.finished_at = now_ms();

  std::map<std::string, std::chrono::milliseconds> network_span;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& span = network_span[records[i].network];
    span = std::max(span, done_at[i]);
  }
  for (const auto& [network, span] : network_span) {
    if (span > config.network_budget) {
      spdlog::warn("round {}: network {} took {} ms (budget {} s)", round_id, network,
                   span.count(), config.network_budget.count());
    }
  }
  if (round.wall_time() > config.round_budget) {
    spdlog::warn("round {}: capture took {} ms (round budget {} s)", round_id,
                 round.wall_time().count(), config.round_budget.count());
  }
  return round;
}

std::vector<PoolTiming> measure_pool_sweep(const CameraRegistry& registry,
                                           std::span<const std::size_t> pool_sizes,
                                           const CaptureConfig& base) {
  std::vector<PoolTiming> rows;
  std::uint64_t round_id = 1;
  for (std::size_t pool : pool_sizes) {
    CaptureConfig cfg = base;
    cfg.pool_size = pool;
    cfg.spool_dir.reset();
    const auto t0 = std::chrono::steady_clock::now();
    const RoundResult r = run_round(registry, cfg, round_id++);
    rows.push_back(PoolTiming{pool,
                              std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - t0),
                              r.successes()});
  }
  return rows;
}

}  // namespace floodwatch
