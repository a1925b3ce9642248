#pragma once

// Lossless 8-bit PNG I/O (grayscale or RGB) on top of libpng's simplified API.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "dfr/core.hpp"

namespace dfr {

class ImageIoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

struct PngImageGuard {
  png_image image{};
  PngImageGuard() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImageGuard() { png_image_free(&image); }
  PngImageGuard(const PngImageGuard&) = delete;
  PngImageGuard& operator=(const PngImageGuard&) = delete;
};

inline Image finish_png_read(PngImageGuard& g, const std::string& what) {
  const bool color = (g.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  g.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const Shape shape{static_cast<int>(g.image.width), static_cast<int>(g.image.height), color ? 3 : 1};
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(g.image));
  if (!png_image_finish_read(&g.image, nullptr, pixels.data(), 0, nullptr))
    throw ImageIoError("cannot decode PNG " + what + ": " + g.image.message);
  return Image(shape, std::move(pixels));
}

inline void prepare_png_write(PngImageGuard& g, const Image& img) {
  g.image.width = static_cast<png_uint_32>(img.width());
  g.image.height = static_cast<png_uint_32>(img.height());
  g.image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
}

}  // namespace detail

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  detail::PngImageGuard g;
  if (!png_image_begin_read_from_memory(&g.image, bytes.data(), bytes.size()))
    throw ImageIoError(std::string("cannot decode PNG: ") + g.image.message);
  return detail::finish_png_read(g, "buffer");
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  detail::PngImageGuard g;
  detail::prepare_png_write(g, img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&g.image, nullptr, &size, 0, img.data().data(), 0, nullptr))
    throw ImageIoError(std::string("cannot size PNG: ") + g.image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&g.image, out.data(), &size, 0, img.data().data(), 0, nullptr))
    throw ImageIoError(std::string("cannot encode PNG: ") + g.image.message);
  out.resize(size);
  return out;
}

inline Image read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const ImageIoError& e) {
    throw ImageIoError(path.string() + ": " + e.what());
  }
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dfr
