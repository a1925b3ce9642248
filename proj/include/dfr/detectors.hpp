#pragma once

// Analytically tractable reference detectors. Both expose black-box scoring
// and exact gradients, so attacks can be checked against closed forms.

#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dfr/core.hpp"
#include "dfr/oracle.hpp"
#include "dfr/random.hpp"

namespace dfr {

/// Shared plumbing: 8-bit batches are normalized and scored one by one.
class ReferenceDetector : public ScoreOracle, public GradientOracle {
 public:
  std::vector<Score> score_batch(std::span<const Image> images) final {
    std::vector<Score> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(score_norm(to_norm(img)));
    return out;
  }
};

/// Scores disjoint patch_side x patch_side tiles (anchored top-left, right and
/// bottom remainders discarded) with a shared linear map and average-pools the
/// tile scores before the sigmoid.
class PatchPoolDetector final : public ReferenceDetector {
 public:
  PatchPoolDetector(int patch_side, int channels, std::vector<double> weights, double bias)
      : side_(patch_side), channels_(channels), weights_(std::move(weights)), bias_(bias) {
    if (side_ <= 0) throw ConfigError("patch_side must be positive");
    if (channels_ != 1 && channels_ != 3) throw ConfigError("channels must be 1 or 3");
    if (weights_.size() != static_cast<std::size_t>(side_ * side_ * channels_))
      throw ConfigError("patch weights length " + std::to_string(weights_.size()) + " != patch_side^2 * channels = " +
                        std::to_string(side_ * side_ * channels_));
  }

  int patch_side() const { return side_; }
  int channels() const { return channels_; }
  std::span<const double> weights() const { return weights_; }
  double bias() const { return bias_; }

  int patches_x(const Shape& s) const { return s.width / side_; }
  int patches_y(const Shape& s) const { return s.height / side_; }

  /// Index into weights() for pixel offset (dx, dy) and channel c inside a patch.
  std::size_t weight_index(int dx, int dy, int c) const {
    return static_cast<std::size_t>((dy * side_ + dx) * channels_ + c);
  }

  bool covered(const Shape& s, int x, int y) const {
    return x < patches_x(s) * side_ && y < patches_y(s) * side_;
  }

  /// Per-patch linear scores, row-major over the patch grid.
  std::vector<double> patch_scores(const NormImage& img) const {
    check(img.shape());
    const int px = patches_x(img.shape());
    const int py = patches_y(img.shape());
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(px * py));
    for (int gy = 0; gy < py; ++gy)
      for (int gx = 0; gx < px; ++gx) {
        double s = bias_;
        for (int dy = 0; dy < side_; ++dy)
          for (int dx = 0; dx < side_; ++dx)
            for (int c = 0; c < channels_; ++c)
              s += weights_[weight_index(dx, dy, c)] * img.at(gx * side_ + dx, gy * side_ + dy, c);
        out.push_back(s);
      }
    return out;
  }

  double logit(const NormImage& img) const {
    const auto s = patch_scores(img);
    return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  }

  Score score_norm(const NormImage& img) const override { return Score(sigmoid(logit(img))); }

  Field gradient(const NormImage& img) const override {
    const double scale = sigmoid_derivative(logit(img)) /
                         static_cast<double>(patches_x(img.shape()) * patches_y(img.shape()));
    Field g(img.shape());
    const int cw = patches_x(img.shape()) * side_;
    const int ch = patches_y(img.shape()) * side_;
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        for (int c = 0; c < channels_; ++c)
          g[img.shape().index(x, y, c)] = scale * weights_[weight_index(x % side_, y % side_, c)];
    return g;
  }

  OracleInfo info() const override { return {"builtin:patch", std::nullopt, std::nullopt, channels_}; }

 private:
  void check(const Shape& s) const {
    if (s.channels != channels_)
      throw ShapeError("patch detector expects " + std::to_string(channels_) + " channels, got " + to_string(s));
    if (s.width < side_ || s.height < side_)
      throw ShapeError("image " + to_string(s) + " is smaller than one " + std::to_string(side_) + "px patch");
  }

  int side_;
  int channels_;
  std::vector<double> weights_;
  double bias_;
};

/// sigmoid(w . x + b) over the whole flattened image.
class GlobalLinearDetector final : public ReferenceDetector {
 public:
  GlobalLinearDetector(Shape input, std::vector<double> weights, double bias)
      : input_(input), weights_(std::move(weights)), bias_(bias) {
    validate_shape(input_);
    if (weights_.size() != input_.size())
      throw ConfigError("linear weights length " + std::to_string(weights_.size()) + " != " + to_string(input_));
  }

  const Shape& input_shape() const { return input_; }
  std::span<const double> weights() const { return weights_; }
  double bias() const { return bias_; }

  double logit(const NormImage& img) const {
    require_same_shape(img.shape(), input_);
    double z = bias_;
    for (std::size_t i = 0; i < weights_.size(); ++i) z += weights_[i] * img[i];
    return z;
  }

  double weights_l1() const {
    double s = 0.0;
    for (double w : weights_) s += std::abs(w);
    return s;
  }

  Score score_norm(const NormImage& img) const override { return Score(sigmoid(logit(img))); }

  Field gradient(const NormImage& img) const override {
    const double d = sigmoid_derivative(logit(img));
    Field g(input_);
    for (std::size_t i = 0; i < weights_.size(); ++i) g[i] = d * weights_[i];
    return g;
  }

  OracleInfo info() const override { return {"builtin:linear", input_.width, input_.height, input_.channels}; }

 private:
  Shape input_;
  std::vector<double> weights_;
  double bias_;
};

/// Mean over the (2r+1)^2 window, truncated at the borders; per channel.
inline NormImage box_blur(const NormImage& img, int side) {
  const int r = side / 2;
  const Shape& s = img.shape();
  std::vector<double> out(img.size());
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int yy = std::max(0, y - r); yy <= std::min(s.height - 1, y + r); ++yy)
          for (int xx = std::max(0, x - r); xx <= std::min(s.width - 1, x + r); ++xx) {
            sum += img.at(xx, yy, c);
            ++n;
          }
        out[s.index(x, y, c)] = sum / n;
      }
  return NormImage::clamped(s, std::move(out));
}

/// Transpose of box_blur applied to a field (chain rule through the blur).
inline Field box_blur_adjoint(const Field& g, int side) {
  const int r = side / 2;
  const Shape& s = g.shape();
  Field out(s);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const int y0 = std::max(0, y - r), y1 = std::min(s.height - 1, y + r);
      const int x0 = std::max(0, x - r), x1 = std::min(s.width - 1, x + r);
      const double n = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
      for (int c = 0; c < s.channels; ++c) {
        const double share = g[s.index(x, y, c)] / n;
        if (share == 0.0) continue;
        for (int yy = y0; yy <= y1; ++yy)
          for (int xx = x0; xx <= x1; ++xx) out[s.index(xx, yy, c)] += share;
      }
    }
  return out;
}

/// Scores a box-blurred copy of the input with an inner detector. The blur
/// makes the score depend on regional averages instead of individual pixels.
class BlurredInputDetector final : public ReferenceDetector {
 public:
  BlurredInputDetector(std::shared_ptr<const ReferenceDetector> inner, int blur_side = 9)
      : inner_(std::move(inner)), side_(blur_side) {
    if (!inner_) throw ConfigError("blurred detector needs an inner detector");
    if (side_ <= 0 || side_ % 2 == 0) throw ConfigError("blur side must be a positive odd number");
  }

  Score score_norm(const NormImage& img) const override { return inner_->score_norm(box_blur(img, side_)); }

  Field gradient(const NormImage& img) const override {
    return box_blur_adjoint(inner_->gradient(box_blur(img, side_)), side_);
  }

  OracleInfo info() const override {
    auto i = inner_->info();
    i.name = "builtin:blur(" + i.name + ")";
    return i;
  }

 private:
  std::shared_ptr<const ReferenceDetector> inner_;
  int side_;
};

/// Gaussian weights with the given standard deviation.
inline std::vector<double> random_weights(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> w(n);
  for (auto& v : w) v = dist(rng);
  return w;
}

inline PatchPoolDetector make_patch_detector(std::uint64_t seed, int channels = 3, int patch_side = 9,
                                             double weight_stddev = 1.0, double bias = 0.0) {
  Rng rng(seed);
  return PatchPoolDetector(patch_side, channels,
                           random_weights(static_cast<std::size_t>(patch_side * patch_side * channels), weight_stddev, rng),
                           bias);
}

inline GlobalLinearDetector make_linear_detector(std::uint64_t seed, Shape shape, double weight_stddev = 0.05,
                                                 double bias = 0.0) {
  Rng rng(seed);
  return GlobalLinearDetector(shape, random_weights(shape.size(), weight_stddev, rng), bias);
}

}  // namespace dfr
