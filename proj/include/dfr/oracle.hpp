#pragma once

// The score-oracle seam between attacks and detectors.

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfr/core.hpp"

namespace dfr {

/// Declared input geometry; nullopt width/height means "any size".
struct OracleInfo {
  std::string name;
  std::optional<int> width;
  std::optional<int> height;
  int channels = 3;
};

/// Black-box access: images in, probability-of-fake out, one score per image
/// in request order. Implementations must be safe to call concurrently.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;

  virtual std::vector<Score> score_batch(std::span<const Image> images) = 0;
  virtual OracleInfo info() const = 0;

  Score score(const Image& image) {
    auto scores = score_batch(std::span<const Image>(&image, 1));
    if (scores.size() != 1) throw ProtocolError("oracle returned " + std::to_string(scores.size()) + " scores for 1 image");
    return scores.front();
  }
};

/// White-box access in normalized pixel space.
class GradientOracle {
 public:
  virtual ~GradientOracle() = default;

  virtual Score score_norm(const NormImage& image) const = 0;
  /// d p_fake / d pixel, same shape as the image.
  virtual Field gradient(const NormImage& image) const = 0;
};

/// Counts one query per image scored. Failed calls are not counted.
class QueryCounter final : public ScoreOracle {
 public:
  explicit QueryCounter(ScoreOracle& inner) : inner_(inner) {}

  std::vector<Score> score_batch(std::span<const Image> images) override {
    auto scores = inner_.score_batch(images);
    if (scores.size() != images.size())
      throw ProtocolError("oracle returned " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(images.size()) + " images");
    total_.fetch_add(images.size(), std::memory_order_relaxed);
    return scores;
  }

  OracleInfo info() const override { return inner_.info(); }

  std::uint64_t total_queries() const { return total_.load(std::memory_order_relaxed); }

 private:
  ScoreOracle& inner_;
  std::atomic<std::uint64_t> total_{0};
};

}  // namespace dfr
