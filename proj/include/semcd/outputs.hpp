#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "semcd/data.hpp"
#include "semcd/error.hpp"
#include "semcd/image.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

/// 0/1 mask → 0/255 single-channel PNG.
inline void write_binary_mask_png(const std::filesystem::path& path, const LabelMap& mask) {
  LabelMap scaled(mask.height, mask.width);
  for (std::size_t i = 0; i < mask.size(); ++i) scaled.data[i] = mask.data[i] ? 255 : 0;
  png::write_gray(path, scaled);
}

/// Raw float32 array in NumPy .npy (v1.0) layout.
inline void write_npy(const std::filesystem::path& path, const torch::Tensor& values) {
  auto c = values.detach().to(torch::kFloat32).contiguous().cpu();
  std::string shape = "(";
  for (auto s : c.sizes()) shape += std::to_string(s) + ", ";
  if (c.dim() > 1) shape.erase(shape.size() - 2);
  shape += ")";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
  while ((10 + header.size() + 1) % 64 != 0) header.push_back(' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out << header;
  out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.nbytes()));
}

/// Side-by-side figure: row 1 = pre image | gt pre | prediction pre,
/// row 2 = post image | gt post | prediction post, with a 2-pixel white gutter.
inline void write_overlay_png(const std::filesystem::path& path, const BiTemporalSample& sample, const LabelMap& pred_pre,
                              const LabelMap& pred_post, const ClassVocabulary& vocabulary) {
  const int h = sample.height(), w = sample.width(), gap = 2;
  const int out_w = 3 * w + 2 * gap, out_h = 2 * h + gap;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(out_h) * out_w * 3, 255);
  auto put = [&](int y, int x, const std::uint8_t* c) {
    auto* p = &rgb[(static_cast<std::size_t>(y) * out_w + x) * 3];
    std::memcpy(p, c, 3);
  };
  auto blit_image = [&](const Image& img, int oy, int ox) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint8_t c[3];
        for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::clamp(img.at(y, x, k), 0.0f, 1.0f) * 255.0f + 0.5f);
        put(oy + y, ox + x, c);
      }
  };
  auto blit_labels = [&](const LabelMap& map, int oy, int ox) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int cls = std::min<int>(map.at(y, x), vocabulary.size() - 1);
        put(oy + y, ox + x, vocabulary.color(cls).data());
      }
  };
  blit_image(sample.image_pre, 0, 0);
  blit_labels(sample.label_pre, 0, w + gap);
  blit_labels(pred_pre, 0, 2 * (w + gap));
  blit_image(sample.image_post, h + gap, 0);
  blit_labels(sample.label_post, h + gap, w + gap);
  blit_labels(pred_post, h + gap, 2 * (w + gap));
  png::write_rgb(path, out_h, out_w, rgb);
}

}  // namespace semcd
