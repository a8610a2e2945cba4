#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semcd/error.hpp"

namespace semcd {

/// H×W×3 interleaved RGB image with channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// H×W map of small integers (class indices or 0/1 change flags).
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const LabelMap& other) const { return height == other.height && width == other.width; }

  bool operator==(const LabelMap&) const = default;
};

namespace png {

namespace detail {

struct ReadHandle {
  png_image image{};
  explicit ReadHandle(const std::filesystem::path& path) {
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
      std::string msg = image.message;
      png_image_free(&image);
      fail(ErrorKind::DecodeError, path.string() + ": " + msg);
    }
  }
  ~ReadHandle() { png_image_free(&image); }
  ReadHandle(const ReadHandle&) = delete;
  ReadHandle& operator=(const ReadHandle&) = delete;
};

inline std::vector<std::uint8_t> finish(ReadHandle& h, std::uint32_t format, const std::filesystem::path& path) {
  h.image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(h.image));
  if (!png_image_finish_read(&h.image, nullptr, buf.data(), 0, nullptr)) {
    fail(ErrorKind::DecodeError, path.string() + ": " + h.image.message);
  }
  return buf;
}

inline void write(const std::filesystem::path& path, int height, int width, std::uint32_t format,
                  const std::uint8_t* pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::IoError, path.string() + ": " + msg);
  }
}

}  // namespace detail

/// Reads an 8-bit RGB(A/gray) file as RGB scaled to [0, 1].
inline Image read_rgb(const std::filesystem::path& path) {
  detail::ReadHandle h(path);
  auto buf = detail::finish(h, PNG_FORMAT_RGB, path);
  Image img(static_cast<int>(h.image.height), static_cast<int>(h.image.width));
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

/// Reads a single-channel 8-bit label file; color or 16-bit files are rejected
/// because converting them would not preserve class indices.
inline LabelMap read_gray(const std::filesystem::path& path) {
  detail::ReadHandle h(path);
  const auto native = h.image.format;
  require((native & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP |
                     PNG_FORMAT_FLAG_ALPHA)) == 0,
          ErrorKind::DecodeError, path.string() + ": label maps must be 1-channel 8-bit");
  auto buf = detail::finish(h, PNG_FORMAT_GRAY, path);
  LabelMap map(static_cast<int>(h.image.height), static_cast<int>(h.image.width));
  map.data = std::move(buf);
  return map;
}

inline void write_rgb(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  require(rgb.size() == static_cast<std::size_t>(height) * width * 3, ErrorKind::ShapeMismatch,
          "rgb buffer size does not match dimensions");
  detail::write(path, height, width, PNG_FORMAT_RGB, rgb.data());
}

/// Quantizes [0, 1] floats to 8 bits with round-to-nearest.
inline void write_rgb(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> rgb(img.data.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    float v = std::clamp(img.data[i], 0.0f, 1.0f);
    rgb[i] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
  }
  write_rgb(path, img.height, img.width, rgb);
}

inline void write_gray(const std::filesystem::path& path, const LabelMap& map) {
  detail::write(path, map.height, map.width, PNG_FORMAT_GRAY, map.data.data());
}

}  // namespace png
}  // namespace semcd
