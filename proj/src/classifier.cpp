#include "floodwatch/classifier.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "floodwatch/framed_socket.hpp"
#include "floodwatch/scene_tag.hpp"
#include "floodwatch/simd/kernels.hpp"

namespace floodwatch {

double ClassProbabilities::of(SceneClass c) const {
  switch (c) {
    case SceneClass::normal:
      return normal;
    case SceneClass::flood:
      return flood;
    case SceneClass::unknown:
      return unknown;
  }
  return 0.0;
}

bool ClassProbabilities::is_valid(double tolerance) const {
  for (double p : {normal, flood, unknown}) {
    if (!(p >= 0.0 && p <= 1.0)) return false;
  }
  return std::abs(normal + flood + unknown - 1.0) <= tolerance;
}

SceneClass argmax_label(const ClassProbabilities& p) {
  SceneClass best = SceneClass::unknown;
  double best_p = p.unknown;
  if (p.flood > best_p) {
    best = SceneClass::flood;
    best_p = p.flood;
  }
  if (p.normal > best_p) best = SceneClass::normal;
  return best;
}

namespace {

int percent(double p) { return static_cast<int>(std::lround(p * 100.0)); }

ClassProbabilities peaked(SceneClass c) {
  const double rest = (1.0 - StubBackend::kStubConfidence) / 2.0;
  ClassProbabilities p{rest, rest, rest};
  switch (c) {
    case SceneClass::normal:
      p.normal = StubBackend::kStubConfidence;
      break;
    case SceneClass::flood:
      p.flood = StubBackend::kStubConfidence;
      break;
    case SceneClass::unknown:
      p.unknown = StubBackend::kStubConfidence;
      break;
  }
  return p;
}

SceneLabel unknown_with(std::string annotation) {
  SceneLabel out;
  out.label = SceneClass::unknown;
  out.probabilities = {0.0, 0.0, 1.0};
  out.annotation = std::move(annotation);
  return out;
}

SceneLabel classify_impl(ClassifierBackend& backend, std::span<const std::uint8_t> frame,
                         std::mutex* serialize) {
  Image decoded;
  try {
    decoded = decode_jpeg(frame);
  } catch (const DecodeError& e) {
    return unknown_with(std::string("decode failure: ") + e.what());
  }
  const Image tensor = simd::resize_bilinear(decoded, kModelInputSize, kModelInputSize);
  const ModelInput input{frame, tensor};
  ClassProbabilities p;
  try {
    if (serialize) {
      std::lock_guard lock(*serialize);
      p = backend.infer(input);
    } else {
      p = backend.infer(input);
    }
  } catch (const std::exception& e) {
    return unknown_with(std::string("backend failure: ") + e.what());
  }
  if (!p.is_valid()) return unknown_with("backend returned invalid probabilities");
  return SceneLabel{argmax_label(p), p, std::nullopt};
}

}  // namespace

std::string format_confidence(const SceneLabel& label) {
  return std::string(to_string(label.label)) + " " +
         std::to_string(percent(label.probabilities.of(label.label))) + "%";
}

std::string format_probabilities(const ClassProbabilities& p) {
  return "normal " + std::to_string(percent(p.normal)) + "% | flood " +
         std::to_string(percent(p.flood)) + "% | unknown " + std::to_string(percent(p.unknown)) +
         "%";
}

ClassProbabilities StubBackend::infer(const ModelInput& input) {
  if (auto comment = read_jpeg_comment(input.encoded)) {
    if (auto tag = parse_scene_tag(*comment)) return peaked(tag->scene);
  }
  if (auto scene = read_band(input.tensor)) return peaked(*scene);
  return peaked(SceneClass::unknown);
}

std::shared_ptr<ClassifierBackend> stub_backend() { return std::make_shared<StubBackend>(); }

ClassProbabilities parse_probability_payload(std::string_view text) {
  std::istringstream in{std::string(text)};
  ClassProbabilities p;
  if (!(in >> p.normal >> p.flood >> p.unknown)) {
    throw TransportError("malformed probability payload");
  }
  return p;
}

std::string format_probability_payload(const ClassProbabilities& p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p.normal, p.flood, p.unknown);
  return buf;
}

SocketBackend::SocketBackend(std::filesystem::path socket_path) : path_(std::move(socket_path)) {}

SocketBackend::~SocketBackend() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketBackend::connect_locked() {
  if (fd_ < 0) fd_ = connect_unix(path_);
}

ClassProbabilities SocketBackend::infer(const ModelInput& input) {
  std::lock_guard lock(mu_);
  // One reconnect: the sidecar may have restarted between rounds.
  for (int attempt = 0;; ++attempt) {
    try {
      connect_locked();
      write_frame(fd_, input.encoded);
      auto reply = read_frame(fd_);
      if (!reply) throw TransportError("sidecar closed the connection");
      return parse_probability_payload(
          std::string_view(reinterpret_cast<const char*>(reply->data()), reply->size()));
    } catch (const TransportError&) {
      if (fd_ >= 0) ::close(fd_);
      fd_ = -1;
      if (attempt >= 1) throw;
    }
  }
}

// Concurrent callers of a single-threaded backend serialize themselves.
SceneLabel classify(ClassifierBackend& backend, std::span<const std::uint8_t> frame) {
  return classify_impl(backend, frame, nullptr);
}

std::vector<SceneLabel> classify_batch(ClassifierBackend& backend,
                                       std::span<const std::span<const std::uint8_t>> frames,
                                       unsigned workers) {
  std::vector<SceneLabel> out(frames.size());
  if (frames.empty()) return out;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, frames.size()));
  std::mutex serialize;
  std::mutex* gate = backend.concurrent_safe() ? nullptr : &serialize;

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < frames.size(); i = next++) {
      out[i] = classify_impl(backend, frames[i], gate);
    }
  };
  if (workers == 1) {
    work();
    return out;
  }
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return out;
}

}  // namespace floodwatch
