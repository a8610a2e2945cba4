#pragma once

#include <torch/torch.h>

#include <utility>

#include "semcd/encoder.hpp"
#include "semcd/error.hpp"
#include "semcd/fpn.hpp"
#include "semcd/image.hpp"
#include "semcd/prompter.hpp"

namespace semcd {

struct DecoderConfig {
  /// Channel width of every pyramid level.
  int pyramid_width = 64;

  static DecoderConfig toy() { return {64}; }
  static DecoderConfig full() { return {512}; }

  nlohmann::json to_json() const { return {{"pyramid_width", pyramid_width}}; }
  static DecoderConfig from_json(const nlohmann::json& j, DecoderConfig c = toy()) {
    c.pyramid_width = j.value("pyramid_width", c.pyramid_width);
    require(c.pyramid_width > 0, ErrorKind::ConfigError, "pyramid_width must be positive");
    return c;
  }
};

struct BinaryChangeMask {
  torch::Tensor logits;  // (B, 1, H, W)
  double threshold = 0.5;

  torch::Tensor probabilities() const { return torch::sigmoid(logits); }
  torch::Tensor binary() const { return probabilities() >= threshold; }
};

struct SemanticMask {
  torch::Tensor logits;  // (B, C, H, W), channel order = vocabulary order
  int temporal_index = 1;
};

inline void require_same_grid(const FeatureMap& a, const FeatureMap& b) {
  require(a.grid_h == b.grid_h && a.grid_w == b.grid_w && a.tokens.sizes() == b.tokens.sizes(),
          ErrorKind::GridMismatch, "bi-temporal feature maps have different grids");
}

/// Binary change decoder over the channel-concatenated bi-temporal tokens.
class BCDDecoderImpl : public nn::Module {
 public:
  BCDDecoderImpl(int visual_width, int patch_size, const DecoderConfig& cfg) {
    fpn = register_module("fpn", SimpleFPN(2 * visual_width, cfg.pyramid_width, patch_size));
    head = register_module("head", MultiLevelHead(cfg.pyramid_width, 1));
    init_conv_kaiming(*this);
  }

  PyramidFeatures build_pyramid(const FeatureMap& f1, const FeatureMap& f2, int64_t image_h, int64_t image_w) {
    require_same_grid(f1, f2);
    FeatureMap cat{torch::cat({f1.tokens, f2.tokens}, 2), f1.grid_h, f1.grid_w, f1.patch_size};
    return fpn->forward(cat.as_grid(), image_h, image_w);
  }

  BinaryChangeMask decode(const PyramidFeatures& pyramid, int64_t image_h, int64_t image_w) {
    return {head->forward(pyramid, image_h, image_w)};
  }

  BinaryChangeMask forward(const FeatureMap& f1, const FeatureMap& f2, int64_t image_h, int64_t image_w) {
    return decode(build_pyramid(f1, f2, image_h, image_w), image_h, image_w);
  }

  SimpleFPN fpn{nullptr};
  MultiLevelHead head{nullptr};
};
TORCH_MODULE(BCDDecoder);

/// Semantic decoder: a feature SimpleFPN shared by both epochs, a separate
/// cost-volume SimpleFPN lifting C channels to the pyramid width, per-level
/// additive fusion and a multi-level head emitting C logits.
class SCDDecoderImpl : public nn::Module {
 public:
  SCDDecoderImpl(int visual_width, int patch_size, int num_classes, const DecoderConfig& cfg) {
    feature_fpn = register_module("feature_fpn", SimpleFPN(visual_width, cfg.pyramid_width, patch_size));
    cost_fpn = register_module("cost_fpn", SimpleFPN(num_classes, cfg.pyramid_width, patch_size));
    head = register_module("head", MultiLevelHead(cfg.pyramid_width, num_classes));
    init_conv_kaiming(*this);
  }

  PyramidFeatures build_feature_pyramid(const FeatureMap& f, int64_t image_h, int64_t image_w) {
    return feature_fpn->forward(f.as_grid(), image_h, image_w);
  }

  PyramidFeatures build_cost_pyramid(const CostVolume& cv, int64_t image_h, int64_t image_w) {
    return cost_fpn->forward(cv.values.permute({0, 3, 1, 2}), image_h, image_w);
  }

  SemanticMask fuse_and_decode(const PyramidFeatures& features, const PyramidFeatures& costs, int64_t image_h,
                               int64_t image_w, int temporal_index = 1) {
    require(features.size() == costs.size(), ErrorKind::LevelMismatch, "pyramids have different level counts");
    PyramidFeatures fused;
    for (std::size_t i = 0; i < features.size(); ++i) {
      require(features.levels[i].sizes() == costs.levels[i].sizes(), ErrorKind::LevelMismatch,
              "pyramid level " + std::to_string(i) + " shapes differ");
      fused.levels.push_back(features.levels[i] + costs.levels[i]);
    }
    return {head->forward(fused, image_h, image_w), temporal_index};
  }

  SemanticMask forward(const FeatureMap& f, const CostVolume& cv, int64_t image_h, int64_t image_w) {
    return fuse_and_decode(build_feature_pyramid(f, image_h, image_w), build_cost_pyramid(cv, image_h, image_w),
                           image_h, image_w, cv.temporal_index);
  }

  SimpleFPN feature_fpn{nullptr}, cost_fpn{nullptr};
  MultiLevelHead head{nullptr};
};
TORCH_MODULE(SCDDecoder);

/// Lowest-index argmax over channels [first, C) at one pixel.
template <typename Accessor>
inline int argmax_channels(const Accessor& logits, int first, int channels, int y, int x) {
  int best = first;
  for (int c = first + 1; c < channels; ++c) {
    if (logits[c][y][x] > logits[best][y][x]) best = c;
  }
  return best;
}

/// Inference rule for one sample: unchanged pixels get class 0 at both
/// epochs; changed pixels take the argmax over the foreground channels of the
/// respective semantic logits (ties toward the lower index).
inline std::pair<LabelMap, LabelMap> combine_predictions(const torch::Tensor& bcd_logits, const torch::Tensor& logits_pre,
                                                         const torch::Tensor& logits_post, double threshold = 0.5) {
  auto bcd = bcd_logits.detach().to(torch::kFloat64).reshape({logits_pre.size(-2), logits_pre.size(-1)}).contiguous();
  auto m1 = logits_pre.detach().to(torch::kFloat64).contiguous();
  auto m2 = logits_post.detach().to(torch::kFloat64).contiguous();
  require(m1.dim() == 3 && m1.sizes() == m2.sizes(), ErrorKind::ShapeMismatch, "semantic logits must both be (C, H, W)");
  const int c = static_cast<int>(m1.size(0)), h = static_cast<int>(m1.size(1)), w = static_cast<int>(m1.size(2));
  auto prob = torch::sigmoid(bcd);
  auto p = prob.accessor<double, 2>();
  auto a1 = m1.accessor<double, 3>();
  auto a2 = m2.accessor<double, 3>();
  LabelMap pre(h, w), post(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (p[y][x] < threshold) continue;
      pre.at(y, x) = static_cast<std::uint8_t>(argmax_channels(a1, 1, c, y, x));
      post.at(y, x) = static_cast<std::uint8_t>(argmax_channels(a2, 1, c, y, x));
    }
  }
  return {std::move(pre), std::move(post)};
}

}  // namespace semcd
