#pragma once

#include <torch/torch.h>

#include <array>
#include <bit>
#include <string>
#include <vector>

#include "semcd/error.hpp"
#include "semcd/layers.hpp"

namespace semcd {

namespace F = torch::nn::functional;

/// Strides of the four pyramid levels relative to the input image.
inline constexpr std::array<int, 4> kPyramidStrides{4, 8, 16, 32};

struct PyramidFeatures {
  std::vector<torch::Tensor> levels;  // (B, width, H/stride, W/stride), finest first

  std::size_t size() const { return levels.size(); }
  int64_t width() const { return levels.empty() ? 0 : levels.front().size(1); }
};

inline torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

inline bool is_power_of_two(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

/// One pyramid level: 2× deconvolutions or 2× max-pools to reach the target
/// stride, then a 1×1 lateral and a 3×3 output convolution to the width.
class FPNLevelImpl : public nn::Module {
 public:
  FPNLevelImpl(int in_channels, int width, int upsamples, int downsamples) : downsamples_(downsamples) {
    up = register_module("up", nn::ModuleList());
    for (int i = 0; i < upsamples; ++i) {
      up->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in_channels, in_channels, 2).stride(2)));
    }
    lateral = register_module("lateral", nn::Conv2d(nn::Conv2dOptions(in_channels, width, 1)));
    output = register_module("output", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)));
  }

  torch::Tensor forward(torch::Tensor x) {
    for (std::size_t i = 0; i < up->size(); ++i) {
      if (i > 0) x = torch::gelu(x);
      x = up[i]->as<nn::ConvTranspose2d>()->forward(x);
    }
    for (int i = 0; i < downsamples_; ++i) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
    return output->forward(lateral->forward(x));
  }

  nn::ModuleList up{nullptr};
  nn::Conv2d lateral{nullptr}, output{nullptr};

 private:
  int downsamples_;
};
TORCH_MODULE(FPNLevel);

/// SimpleFPN over a single-scale token grid. A power-of-two patch size is the
/// base stride directly; any other patch size (e.g. 14) is first resampled
/// bilinearly to a stride-16 grid.
class SimpleFPNImpl : public nn::Module {
 public:
  SimpleFPNImpl(int in_channels, int width, int patch_size)
      : base_stride_(is_power_of_two(patch_size) ? patch_size : 16), resample_(!is_power_of_two(patch_size)) {
    levels = register_module("levels", nn::ModuleList());
    for (int stride : kPyramidStrides) {
      int up = 0, down = 0;
      for (int s = base_stride_; s > stride; s /= 2) ++up;
      for (int s = base_stride_; s < stride; s *= 2) ++down;
      levels->push_back(FPNLevel(in_channels, width, up, down));
    }
  }

  /// grid: (B, in_channels, h', w'); image_h/w: input resolution.
  PyramidFeatures forward(torch::Tensor grid, int64_t image_h, int64_t image_w) {
    if (resample_) grid = resize_bilinear(grid, image_h / base_stride_, image_w / base_stride_);
    PyramidFeatures out;
    for (std::size_t i = 0; i < levels->size(); ++i) out.levels.push_back(levels[i]->as<FPNLevel>()->forward(grid));
    return out;
  }

  int base_stride() const { return base_stride_; }

  nn::ModuleList levels{nullptr};

 private:
  int base_stride_;
  bool resample_;
};
TORCH_MODULE(SimpleFPN);

/// Per-level 3×3 conv + ReLU, bilinear resize to the finest level,
/// concatenation, 1×1 projection, bilinear upsample to the image size.
class MultiLevelHeadImpl : public nn::Module {
 public:
  MultiLevelHeadImpl(int width, int out_channels, int num_levels = static_cast<int>(kPyramidStrides.size())) {
    level_convs = register_module("level_convs", nn::ModuleList());
    for (int i = 0; i < num_levels; ++i) {
      level_convs->push_back(nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)));
    }
    proj = register_module("proj", nn::Conv2d(nn::Conv2dOptions(width * num_levels, out_channels, 1)));
  }

  torch::Tensor forward(const PyramidFeatures& pyramid, int64_t image_h, int64_t image_w) {
    require(pyramid.size() == level_convs->size(), ErrorKind::LevelMismatch,
            "pyramid has " + std::to_string(pyramid.size()) + " levels, head expects " +
                std::to_string(level_convs->size()));
    const auto h0 = pyramid.levels.front().size(2), w0 = pyramid.levels.front().size(3);
    std::vector<torch::Tensor> resized;
    for (std::size_t i = 0; i < pyramid.size(); ++i) {
      auto x = torch::relu(level_convs[i]->as<nn::Conv2d>()->forward(pyramid.levels[i]));
      resized.push_back(resize_bilinear(x, h0, w0));
    }
    return resize_bilinear(proj->forward(torch::cat(resized, 1)), image_h, image_w);
  }

  nn::ModuleList level_convs{nullptr};
  nn::Conv2d proj{nullptr};
};
TORCH_MODULE(MultiLevelHead);

}  // namespace semcd
