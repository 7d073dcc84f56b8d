#pragma once

#include "clipmatrix/common.hpp"
#include "clipmatrix/io/binary.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace clipmatrix::io {

/// 8-bit quantization used for every written image: round(clamp(x, 0, 1) * 255).
inline std::uint8_t quantize(double x) {
  if (!(x > 0)) return 0;
  if (x >= 1) return 255;
  return static_cast<std::uint8_t>(std::lround(x * 255.0));
}

inline std::string encode_png(const Image& img) {
  if (img.height <= 0 || img.width <= 0 || img.values.size() != img.pixel_count() * 3) {
    throw IoError("png: image has no pixels or inconsistent size");
  }
  std::vector<std::uint8_t> pixels(img.values.size());
  std::transform(img.values.begin(), img.values.end(), pixels.begin(), quantize);

  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::string_view bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw LoadError(std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw LoadError(std::string("png: ") + image.message);
  }
  Image img(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < pixels.size(); ++i) img.values[i] = pixels[i] / 255.0;
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_png(img)); }

inline Image read_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_png(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace clipmatrix::io
