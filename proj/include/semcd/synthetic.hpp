#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "semcd/data.hpp"
#include "semcd/error.hpp"
#include "semcd/image.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

struct SyntheticSpec {
  int n_samples = 8;
  int height = 64;
  int width = 64;
  ClassVocabulary vocabulary = ClassVocabulary::second();
  std::uint64_t seed = 7;
  /// Rectangles and land-cover tiles snap to this grid.
  int patch_size = 8;
};

namespace detail {

// The standard distributions are implementation-defined, so the generator
// draws directly from the engine to keep output identical across toolchains.
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  int uniform_int(int lo, int hi) {
    auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(engine_() % span);
  }

  double uniform(double lo, double hi) {
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 engine_;
};

struct SyntheticScene {
  LabelMap pre_content;
  LabelMap post_content;
};

inline void fill_rect(LabelMap& map, int y0, int x0, int h, int w, std::uint8_t value) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) map.at(y, x) = value;
}

inline bool any_change(const SyntheticScene& s) { return s.pre_content.data != s.post_content.data; }

inline SyntheticScene make_scene(PortableRng& rng, const SyntheticSpec& spec) {
  const int num_fg = spec.vocabulary.size() - 1;
  const int tile = 2 * spec.patch_size;
  LabelMap base(spec.height, spec.width);
  for (int ty = 0; ty < spec.height; ty += tile) {
    for (int tx = 0; tx < spec.width; tx += tile) {
      auto cls = static_cast<std::uint8_t>(rng.uniform_int(1, num_fg));
      fill_rect(base, ty, tx, std::min(tile, spec.height - ty), std::min(tile, spec.width - tx), cls);
    }
  }
  SyntheticScene scene{base, base};

  const int gh = spec.height / spec.patch_size, gw = spec.width / spec.patch_size;
  auto place = [&](int& y0, int& x0, int& h, int& w) {
    int hp = rng.uniform_int(1, std::max(1, gh / 2));
    int wp = rng.uniform_int(1, std::max(1, gw / 2));
    y0 = rng.uniform_int(0, gh - hp) * spec.patch_size;
    x0 = rng.uniform_int(0, gw - wp) * spec.patch_size;
    h = hp * spec.patch_size;
    w = wp * spec.patch_size;
  };
  auto distinct_pair = [&](std::uint8_t& a, std::uint8_t& b) {
    a = static_cast<std::uint8_t>(rng.uniform_int(1, num_fg));
    b = static_cast<std::uint8_t>(rng.uniform_int(1, num_fg - 1));
    if (b >= a) ++b;
  };

  const int n_rects = rng.uniform_int(1, 3);
  for (int r = 0; r < n_rects; ++r) {
    int y0, x0, h, w;
    place(y0, x0, h, w);
    const int kind = rng.uniform_int(0, 2);  // 0 appear, 1 disappear, 2 class change
    std::uint8_t a, b;
    distinct_pair(a, b);
    if (kind == 0) {
      fill_rect(scene.post_content, y0, x0, h, w, b);
    } else if (kind == 1) {
      fill_rect(scene.pre_content, y0, x0, h, w, a);
    } else {
      fill_rect(scene.pre_content, y0, x0, h, w, a);
      fill_rect(scene.post_content, y0, x0, h, w, b);
    }
  }
  if (!any_change(scene)) {
    int y0, x0, h, w;
    place(y0, x0, h, w);
    std::uint8_t a, b;
    distinct_pair(a, b);
    fill_rect(scene.pre_content, y0, x0, h, w, a);
    fill_rect(scene.post_content, y0, x0, h, w, b);
  }
  return scene;
}

inline std::vector<std::uint8_t> render(PortableRng& rng, const LabelMap& content, const ClassVocabulary& vocab) {
  const double brightness = rng.uniform(-0.04, 0.04);
  std::vector<std::uint8_t> rgb(content.size() * 3);
  for (std::size_t i = 0; i < content.size(); ++i) {
    const auto& color = vocab.color(content.data[i]);
    for (int c = 0; c < 3; ++c) {
      double v = color[c] / 255.0 + brightness + rng.uniform(-0.03, 0.03);
      v = std::clamp(v, 0.0, 1.0);
      rgb[i * 3 + c] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
  }
  return rgb;
}

}  // namespace detail

/// Writes a deterministic SECOND-layout toy dataset under `out`. Every sample
/// has at least one changed rectangle; a pixel is changed exactly when the
/// land cover painted at the two epochs differs, and both label maps then
/// carry the painted class (SECOND convention).
inline DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out) {
  require(spec.n_samples > 0, ErrorKind::InvalidArgument, "n_samples must be positive");
  require(spec.patch_size > 0 && spec.height > 0 && spec.width > 0 && spec.height % spec.patch_size == 0 &&
              spec.width % spec.patch_size == 0,
          ErrorKind::InvalidArgument, "H and W must be positive multiples of the patch size");
  require(spec.vocabulary.size() >= 3, ErrorKind::InvalidArgument, "synthetic data needs C >= 3");

  std::error_code ec;
  for (auto sub : kSecondSubdirs) {
    fs::create_directories(out / sub, ec);
    require(!ec, ErrorKind::IoError, "cannot create " + (out / sub).string() + ": " + ec.message());
  }

  detail::PortableRng rng(spec.seed);
  for (int n = 0; n < spec.n_samples; ++n) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof(id_buf), "toy_%04d", n);
    const std::string id = id_buf;

    auto scene = detail::make_scene(rng, spec);
    LabelMap label_pre(spec.height, spec.width), label_post(spec.height, spec.width);
    for (std::size_t i = 0; i < label_pre.size(); ++i) {
      if (scene.pre_content.data[i] != scene.post_content.data[i]) {
        label_pre.data[i] = scene.pre_content.data[i];
        label_post.data[i] = scene.post_content.data[i];
      }
    }
    png::write_rgb(out / "im1" / (id + ".png"), spec.height, spec.width,
                   detail::render(rng, scene.pre_content, spec.vocabulary));
    png::write_rgb(out / "im2" / (id + ".png"), spec.height, spec.width,
                   detail::render(rng, scene.post_content, spec.vocabulary));
    png::write_gray(out / "label1" / (id + ".png"), label_pre);
    png::write_gray(out / "label2" / (id + ".png"), label_post);
  }
  spec.vocabulary.save(out / "vocabulary.json");
  return load_second_directory(out, spec.vocabulary);
}

}  // namespace semcd
