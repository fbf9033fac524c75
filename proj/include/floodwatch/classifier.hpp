#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "floodwatch/common.hpp"
#include "floodwatch/image.hpp"

namespace floodwatch {

inline constexpr int kModelInputSize = 224;

/// Softmax output of a scene model.
struct ClassProbabilities {
  double normal = 0.0;
  double flood = 0.0;
  double unknown = 1.0;

  double of(SceneClass c) const;
  bool is_valid(double tolerance = 1e-6) const;
  friend bool operator==(const ClassProbabilities&, const ClassProbabilities&) = default;
};

/// argmax with ties resolved unknown > flood > normal.
SceneClass argmax_label(const ClassProbabilities& p);

struct SceneLabel {
  SceneClass label = SceneClass::unknown;
  ClassProbabilities probabilities;
  std::optional<std::string> annotation;

  friend bool operator==(const SceneLabel&, const SceneLabel&) = default;
};

/// "flood 82%" — label and its rounded confidence.
std::string format_confidence(const SceneLabel& label);
/// "normal 18% | flood 82% | unknown 0%"
std::string format_probabilities(const ClassProbabilities& p);

/// What a backend sees for one frame: the original encoded bytes and the
/// decoded frame resized to 224x224x3.
struct ModelInput {
  std::span<const std::uint8_t> encoded;
  const Image& tensor;
};

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual ClassProbabilities infer(const ModelInput& input) = 0;
  /// False means callers must serialize infer() calls.
  virtual bool concurrent_safe() const { return false; }
  virtual std::string name() const = 0;
};

/// Reads the simulator's SceneTag (COM segment first, then the color band).
/// Puts kStubConfidence on the tagged class and splits the rest evenly;
/// untagged frames go to unknown the same way.
class StubBackend final : public ClassifierBackend {
 public:
  static constexpr double kStubConfidence = 0.92;
  ClassProbabilities infer(const ModelInput& input) override;
  bool concurrent_safe() const override { return true; }
  std::string name() const override { return "stub"; }
};

std::shared_ptr<ClassifierBackend> stub_backend();

/// Forwards frames to an inference sidecar over a UNIX stream socket.
/// Request: u32 big-endian length + encoded frame bytes. Response: u32
/// big-endian length + ASCII "p_normal p_flood p_unknown".
class SocketBackend final : public ClassifierBackend {
 public:
  explicit SocketBackend(std::filesystem::path socket_path);
  ~SocketBackend() override;
  ClassProbabilities infer(const ModelInput& input) override;
  std::string name() const override { return "external:" + path_.string(); }

 private:
  void connect_locked();
  std::filesystem::path path_;
  std::mutex mu_;
  int fd_ = -1;
};

ClassProbabilities parse_probability_payload(std::string_view text);
std::string format_probability_payload(const ClassProbabilities& p);

/// Decodes, resizes to 224x224 and runs the backend. Undecodable frames come
/// back as unknown (0,0,1) with a decode-failure annotation.
SceneLabel classify(ClassifierBackend& backend, std::span<const std::uint8_t> frame);

/// Order-preserving; element i equals classify(backend, frames[i]).
std::vector<SceneLabel> classify_batch(ClassifierBackend& backend,
                                       std::span<const std::span<const std::uint8_t>> frames,
                                       unsigned workers = 0);

}  // namespace floodwatch
