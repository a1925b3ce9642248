#pragma once

// Shared value types: 8-bit images, normalized images, real-valued fields,
// labels and scores, plus the normalization/quantization rules every other
// module relies on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dfr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

// The remote side answered, but not according to the wire contract.
class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

struct Shape {
  int width = 0;
  int height = 0;
  int channels = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(channels);
  }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height) + "x" + std::to_string(s.channels);
}

inline void validate_shape(const Shape& s) {
  if (s.width <= 0 || s.height <= 0) throw ShapeError("image dimensions must be positive, got " + to_string(s));
  if (s.channels != 1 && s.channels != 3) throw ShapeError("channels must be 1 or 3, got " + to_string(s));
}

inline void require_same_shape(const Shape& a, const Shape& b) {
  if (!(a == b)) throw ShapeError("shape mismatch: " + to_string(a) + " vs " + to_string(b));
}

/// 8-bit raster, row-major, channel-interleaved.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, std::uint8_t fill = 0) : shape_(shape), data_(checked(shape).size(), fill) {}
  Image(Shape shape, std::vector<std::uint8_t> data) : shape_(shape), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_.size())
      throw ShapeError("image data length " + std::to_string(data_.size()) + " does not match " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  int width() const { return shape_.width; }
  int height() const { return shape_.height; }
  int channels() const { return shape_.channels; }
  bool empty() const { return data_.empty(); }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  std::uint8_t at(int x, int y, int c = 0) const { return data_[shape_.index(x, y, c)]; }
  std::uint8_t& at(int x, int y, int c = 0) { return data_[shape_.index(x, y, c)]; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static const Shape& checked(const Shape& s) {
    validate_shape(s);
    return s;
  }

  Shape shape_;
  std::vector<std::uint8_t> data_;
};

/// Real-valued field with an image shape: perturbations and gradients.
class Field {
 public:
  Field() = default;
  explicit Field(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Field(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw ShapeError("field data length " + std::to_string(data_.size()) + " does not match " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double linf_norm() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Image with intensities in [0, 1]; the space attacks operate in.
class NormImage {
 public:
  NormImage() = default;
  NormImage(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_.size())
      throw ShapeError("normalized data length " + std::to_string(data_.size()) + " does not match " +
                       to_string(shape_));
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0)) throw Error("normalized intensity out of [0,1]: " + std::to_string(v));
  }

  /// Builds from arbitrary reals by clamping into [0, 1].
  static NormImage clamped(Shape shape, std::vector<double> data) {
    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
    return NormImage(shape, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  int width() const { return shape_.width; }
  int height() const { return shape_.height; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double at(int x, int y, int c = 0) const { return data_[shape_.index(x, y, c)]; }

  friend bool operator==(const NormImage&, const NormImage&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class Label : std::uint8_t { real = 0, fake = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

inline Label label_from_int(long v) {
  if (v != 0 && v != 1) throw Error("label must be 0 (real) or 1 (fake), got " + std::to_string(v));
  return v == 1 ? Label::fake : Label::real;
}

inline const char* to_string(Label l) { return l == Label::fake ? "fake" : "real"; }

inline Label parse_label(const std::string& s) {
  if (s == "fake" || s == "1") return Label::fake;
  if (s == "real" || s == "0") return Label::real;
  throw Error("unknown label '" + s + "'");
}

/// Probability that an image is fake.
class Score {
 public:
  constexpr Score() = default;
  explicit Score(double p_fake) : p_(p_fake) {
    if (!(p_fake >= 0.0 && p_fake <= 1.0)) throw Error("score out of [0,1]: " + std::to_string(p_fake));
  }
  constexpr double p_fake() const { return p_; }
  friend constexpr auto operator<=>(const Score&, const Score&) = default;

 private:
  double p_ = 0.0;
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double sigmoid_derivative(double z) {
  const double s = sigmoid(z);
  return s * (1.0 - s);
}

inline double to_norm(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

/// Round-half-up quantization into [0, 255].
inline std::uint8_t quantize(double v) {
  const double scaled = std::floor(v * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

inline NormImage to_norm(const Image& img) {
  std::vector<double> out(img.data().size());
  std::transform(img.data().begin(), img.data().end(), out.begin(), [](std::uint8_t v) { return to_norm(v); });
  return NormImage(img.shape(), std::move(out));
}

inline Image from_norm(const NormImage& nimg) {
  std::vector<std::uint8_t> out(nimg.size());
  std::transform(nimg.data().begin(), nimg.data().end(), out.begin(), [](double v) { return quantize(v); });
  return Image(nimg.shape(), std::move(out));
}

inline double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("linf_distance: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double linf_distance(const NormImage& a, const NormImage& b) {
  require_same_shape(a.shape(), b.shape());
  return linf_distance(a.data(), b.data());
}

inline double linf_distance(const Image& a, const Image& b) { return linf_distance(to_norm(a), to_norm(b)); }

/// clip_[0,1](base + delta)
inline NormImage apply_perturbation(const NormImage& base, const Field& delta) {
  require_same_shape(base.shape(), delta.shape());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = base[i] + delta[i];
  return NormImage::clamped(base.shape(), std::move(out));
}

inline Field difference(const NormImage& a, const NormImage& b) {
  require_same_shape(a.shape(), b.shape());
  Field d(a.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

/// Parses "0.0392", "10/255", or "<x>eps" (the latter relative to `eps`).
inline double parse_fraction(const std::string& text, double eps = 0.0) {
  auto parse_num = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + text + "'");
    }
    if (used != s.size()) throw ConfigError("not a number: '" + text + "'");
    return v;
  };
  if (text.size() > 3 && text.ends_with("eps")) return parse_num(text.substr(0, text.size() - 3)) * eps;
  if (text == "eps") return eps;
  if (auto slash = text.find('/'); slash != std::string::npos) {
    const double den = parse_num(text.substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + text + "'");
    return parse_num(text.substr(0, slash)) / den;
  }
  return parse_num(text);
}

}  // namespace dfr
