#pragma once

// Typographic overlay: a faint caption that looks like the image's source path
// inside a "control" (authentic) split of a detection dataset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dfr/core.hpp"
#include "dfr/detail/font8x8.hpp"
#include "dfr/random.hpp"

namespace dfr {

// ---------------------------------------------------------------------------
// Text rendering

inline constexpr int kGlyphCells = 8;

/// Binary coverage raster for one line of text.
struct TextMask {
  int width = 0;
  int height = 0;
  std::vector<double> coverage;  // row-major, width * height
  std::size_t replaced_glyphs = 0;  // characters rendered as '?'

  double at(int x, int y) const { return coverage[static_cast<std::size_t>(y * width + x)]; }
};

/// Glyph cell side in pixels for a point size at a given dpi.
inline int glyph_pixels(double point_size, double dpi) {
  if (!(point_size > 0.0) || !(dpi > 0.0)) throw ConfigError("point size and dpi must be positive");
  const int px = static_cast<int>(std::lround(point_size * dpi / 72.0));
  if (px < 1) throw ConfigError("text renders below one pixel");
  return px;
}

inline TextMask render_text_mask(std::string_view text, double point_size, double dpi = 72.0) {
  const int cell = glyph_pixels(point_size, dpi);
  TextMask mask;
  mask.height = text.empty() ? 0 : cell;
  mask.width = static_cast<int>(text.size()) * cell;
  mask.coverage.assign(static_cast<std::size_t>(mask.width) * static_cast<std::size_t>(mask.height), 0.0);
  for (std::size_t i = 0; i < text.size(); ++i) {
    char ch = text[i];
    if (ch < detail::kFirstGlyph || ch > detail::kLastGlyph) {
      ch = '?';
      ++mask.replaced_glyphs;
    }
    const auto& glyph = detail::kFont8x8[static_cast<std::size_t>(ch - detail::kFirstGlyph)];
    for (int y = 0; y < cell; ++y) {
      const int gy = y * kGlyphCells / cell;
      for (int x = 0; x < cell; ++x) {
        const int gx = x * kGlyphCells / cell;
        if ((glyph[static_cast<std::size_t>(gy)] >> gx) & 1)
          mask.coverage[static_cast<std::size_t>(y * mask.width + static_cast<int>(i) * cell + x)] = 1.0;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Decoy paths

enum class TokenKind { literal, root, marker, slug, frame };

struct PathToken {
  TokenKind kind = TokenKind::literal;
  std::string text;  // literal text only
};

struct DecoyPathTemplate {
  std::vector<PathToken> segments;
  std::vector<std::string> roots{"Celeb-DF-v2", "FaceForensics++", "DeepfakeBench"};
  std::vector<std::string> markers{"control", "real", "authentic"};

  static constexpr std::string_view kDefault = "{root}/{marker}/{slug}/frame_{frame}.png";

  /// Placeholders: {root} {marker} {slug} {frame}; everything else is literal.
  static DecoyPathTemplate parse(std::string_view pattern) {
    DecoyPathTemplate tpl;
    std::string literal;
    auto flush = [&] {
      if (!literal.empty()) tpl.segments.push_back({TokenKind::literal, std::move(literal)});
      literal.clear();
    };
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      if (pattern[i] != '{') {
        literal.push_back(pattern[i]);
        continue;
      }
      const auto close = pattern.find('}', i);
      if (close == std::string_view::npos) throw ConfigError("unterminated placeholder in template");
      const auto name = pattern.substr(i + 1, close - i - 1);
      TokenKind kind;
      if (name == "root") kind = TokenKind::root;
      else if (name == "marker") kind = TokenKind::marker;
      else if (name == "slug") kind = TokenKind::slug;
      else if (name == "frame") kind = TokenKind::frame;
      else throw ConfigError("unknown placeholder {" + std::string(name) + "}");
      flush();
      tpl.segments.push_back({kind, {}});
      i = close;
    }
    flush();
    return tpl;
  }

  static DecoyPathTemplate default_template() { return parse(kDefault); }
};

/// Fit constraint: the rendered path plus margin must fit the image width.
struct TextFit {
  int image_width = 0;
  double point_size = 29.0;
  double dpi = 72.0;
  int margin = 8;
};

namespace detail {

inline bool has_image_extension(std::string_view path) {
  for (std::string_view ext : {".png", ".jpg", ".jpeg"})
    if (path.size() > ext.size() && path.ends_with(ext)) return true;
  return false;
}

inline std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto slash = path.find('/', start);
    parts.push_back(path.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return parts;
}

}  // namespace detail

/// Relative path, non-empty components, no "." or "..", image extension,
/// and at least one component equal to a control-set marker.
inline void validate_decoy_path(std::string_view path, const std::vector<std::string>& markers) {
  if (path.empty() || path.front() == '/') throw ConfigError("decoy path must be relative: '" + std::string(path) + "'");
  if (!detail::has_image_extension(path)) throw ConfigError("decoy path needs an image extension: '" + std::string(path) + "'");
  bool marked = false;
  for (auto part : detail::split_path(path)) {
    if (part.empty() || part == "." || part == "..")
      throw ConfigError("decoy path has an invalid component: '" + std::string(path) + "'");
    for (const auto& m : markers) marked = marked || part == m;
  }
  if (!marked) throw ConfigError("decoy path contains no control-set marker: '" + std::string(path) + "'");
}

inline std::string generate_decoy_path(const DecoyPathTemplate& tpl, Rng& rng,
                                       const std::optional<TextFit>& fit = std::nullopt) {
  if (tpl.roots.empty() || tpl.markers.empty()) throw ConfigError("decoy template needs roots and markers");
  auto pick = [&](const std::vector<std::string>& from) {
    return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
  };
  auto digits = [&](int n, int hi) {
    std::string s = std::to_string(std::uniform_int_distribution<int>(0, hi)(rng));
    return std::string(static_cast<std::size_t>(std::max(0, n - static_cast<int>(s.size()))), '0') + s;
  };
  std::string out;
  for (const auto& tok : tpl.segments) {
    switch (tok.kind) {
      case TokenKind::literal: out += tok.text; break;
      case TokenKind::root: out += pick(tpl.roots); break;
      case TokenKind::marker: out += pick(tpl.markers); break;
      case TokenKind::slug: out += "id" + digits(2, 61) + "_" + digits(4, 9999); break;
      case TokenKind::frame: out += digits(5, 99999); break;
    }
  }
  validate_decoy_path(out, tpl.markers);
  if (fit) {
    const int text_px = static_cast<int>(out.size()) * glyph_pixels(fit->point_size, fit->dpi);
    if (text_px + fit->margin > fit->image_width)
      throw ConfigError("decoy path '" + out + "' is " + std::to_string(text_px) + "px wide and does not fit a " +
                        std::to_string(fit->image_width) + "px image with margin " + std::to_string(fit->margin));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compositing

enum class Corner { bottom_right, bottom_left, top_right, top_left };

struct OverlaySpec {
  std::string text;
  double opacity = 0.07;
  std::array<std::uint8_t, 3> color{255, 255, 255};
  double point_size = 29.0;
  Corner anchor = Corner::bottom_right;
  int margin = 8;
  double dpi = 72.0;

  void validate() const {
    if (!(opacity >= 0.0 && opacity <= 1.0)) throw ConfigError("opacity must be in [0, 1]");
    if (!(point_size > 0.0)) throw ConfigError("point size must be positive");
    if (margin < 0) throw ConfigError("margin must be non-negative");
  }
};

struct Box {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool contains(int px, int py) const { return px >= x && px < x + width && py >= y && py < y + height; }
};

/// Where the rendered text lands; throws if it does not fit.
inline Box overlay_box(const Shape& image, const OverlaySpec& spec, const TextMask& mask) {
  if (mask.width + spec.margin > image.width || mask.height + spec.margin > image.height)
    throw ConfigError("text box " + std::to_string(mask.width) + "x" + std::to_string(mask.height) + " plus margin " +
                      std::to_string(spec.margin) + " exceeds image " + to_string(image));
  const bool right = spec.anchor == Corner::bottom_right || spec.anchor == Corner::top_right;
  const bool bottom = spec.anchor == Corner::bottom_right || spec.anchor == Corner::bottom_left;
  return {right ? image.width - spec.margin - mask.width : spec.margin,
          bottom ? image.height - spec.margin - mask.height : spec.margin, mask.width, mask.height};
}

/// out = round((1 - o*c) * bg + o*c * color) per covered pixel and channel.
/// Grayscale images use the first color component.
inline Image composite_overlay(const Image& img, const OverlaySpec& spec) {
  spec.validate();
  const TextMask mask = render_text_mask(spec.text, spec.point_size, spec.dpi);
  const Box box = overlay_box(img.shape(), spec, mask);
  Image out = img;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const double a = spec.opacity * mask.at(x, y);
      if (a == 0.0) continue;
      for (int c = 0; c < img.channels(); ++c) {
        const double bg = img.at(box.x + x, box.y + y, c);
        const double v = (1.0 - a) * bg + a * spec.color[static_cast<std::size_t>(c)];
        out.at(box.x + x, box.y + y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  return out;
}

}  // namespace dfr
