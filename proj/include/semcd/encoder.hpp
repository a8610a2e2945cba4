#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"
#include "semcd/layers.hpp"
#include "semcd/tensor_utils.hpp"

namespace semcd {

enum class Scale { toy, full };

inline std::string to_string(Scale s) { return s == Scale::toy ? "toy" : "full"; }
inline Scale parse_scale(std::string_view s) {
  if (s == "toy") return Scale::toy;
  if (s == "full") return Scale::full;
  fail(ErrorKind::ConfigError, "scale must be 'toy' or 'full', got '" + std::string(s) + "'");
}

struct EncoderConfig {
  Scale scale = Scale::toy;
  int patch_size = 8;
  int depth = 4;
  int width = 64;
  int heads = 4;
  int mlp_ratio = 4;
  /// Input side length the positional embeddings are laid out for.
  int image_size = 64;
  std::vector<int> adapter_sites{1, 3};
  std::optional<std::string> pretrained_checkpoint;

  static EncoderConfig toy() { return {}; }

  /// ViT-L/14-class backbone; BCSF on four evenly spaced global-attention blocks.
  static EncoderConfig full() {
    EncoderConfig c;
    c.scale = Scale::full;
    c.patch_size = 14;
    c.depth = 24;
    c.width = 1024;
    c.heads = 16;
    c.image_size = 448;
    c.adapter_sites = {5, 11, 17, 23};
    return c;
  }

  int grid_size() const { return image_size / patch_size; }

  void validate() const {
    require(patch_size > 0 && depth > 0 && width > 0 && heads > 0 && width % heads == 0, ErrorKind::ConfigError,
            "encoder dimensions must be positive and width divisible by heads");
    require(image_size % patch_size == 0, ErrorKind::ConfigError, "image_size must be a multiple of patch_size");
    std::set<int> unique(adapter_sites.begin(), adapter_sites.end());
    require(unique.size() == adapter_sites.size(), ErrorKind::ConfigError, "duplicate adapter site");
    for (int s : adapter_sites)
      require(s >= 0 && s < depth, ErrorKind::ConfigError, "adapter site " + std::to_string(s) + " outside [0, depth)");
    if (scale == Scale::full)
      require(adapter_sites.size() == 4, ErrorKind::ConfigError, "full scale uses exactly 4 adapter sites");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"scale", to_string(scale)}, {"patch_size", patch_size}, {"depth", depth},
                     {"width", width},            {"heads", heads},           {"mlp_ratio", mlp_ratio},
                     {"image_size", image_size},  {"adapter_sites", adapter_sites}};
    j["pretrained_checkpoint"] = pretrained_checkpoint ? nlohmann::json(*pretrained_checkpoint) : nlohmann::json();
    return j;
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c = j.contains("scale") && j["scale"] == "full" ? full() : toy();
    if (j.contains("scale")) c.scale = parse_scale(j["scale"].get<std::string>());
    c.patch_size = j.value("patch_size", c.patch_size);
    c.depth = j.value("depth", c.depth);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.image_size = j.value("image_size", c.image_size);
    c.adapter_sites = j.value("adapter_sites", c.adapter_sites);
    if (j.contains("pretrained_checkpoint") && j["pretrained_checkpoint"].is_string())
      c.pretrained_checkpoint = j["pretrained_checkpoint"].get<std::string>();
    c.validate();
    return c;
  }
};

/// Token grid from one temporal stream.
struct FeatureMap {
  torch::Tensor tokens;  // (B, N, D), N = grid_h * grid_w, row-major
  int grid_h = 0;
  int grid_w = 0;
  int patch_size = 0;

  int64_t batch() const { return tokens.size(0); }
  int64_t num_tokens() const { return tokens.size(1); }
  int64_t dim() const { return tokens.size(2); }

  /// (B, D, h', w') layout for convolutional consumers.
  torch::Tensor as_grid() const {
    return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), grid_h, grid_w});
  }
};

/// Bi-temporal change semantic filter. Both streams share one gate computed
/// from their absolute difference: a per-token spatial gate and a per-channel
/// gate from the pooled difference. The gated tokens pass a zero-initialized
/// projection and are added back, so a fresh adapter is an exact identity.
class BCSFAdapterImpl : public nn::Module {
 public:
  explicit BCSFAdapterImpl(int dim) {
    const int reduced = std::max(1, dim / 4);
    spatial = register_module("spatial", nn::Linear(dim, 1));
    channel_reduce = register_module("channel_reduce", nn::Linear(dim, reduced));
    channel_expand = register_module("channel_expand", nn::Linear(reduced, dim));
    proj = register_module("proj", nn::Linear(dim, dim));
    torch::NoGradGuard guard;
    proj->weight.zero_();
    proj->bias.zero_();
  }

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& t1, const torch::Tensor& t2) {
    require(t1.sizes() == t2.sizes(), ErrorKind::ShapeMismatch, "BCSF streams differ in shape");
    auto diff = (t1 - t2).abs();
    auto spatial_gate = torch::sigmoid(spatial->forward(diff));
    auto pooled = diff.mean(1, /*keepdim=*/true);
    auto channel_gate = torch::sigmoid(channel_expand->forward(torch::relu(channel_reduce->forward(pooled))));
    auto gate = spatial_gate * channel_gate;
    return {t1 + proj->forward(t1 * gate), t2 + proj->forward(t2 * gate)};
  }

  nn::Linear spatial{nullptr}, channel_reduce{nullptr}, channel_expand{nullptr}, proj{nullptr};
};
TORCH_MODULE(BCSFAdapter);

/// Plain ViT without a class token: every output token is spatial.
class VisionTransformerImpl : public nn::Module {
 public:
  explicit VisionTransformerImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    patch_embed = register_module(
        "patch_embed", nn::Conv2d(nn::Conv2dOptions(3, cfg.width, cfg.patch_size).stride(cfg.patch_size)));
    pos_embed = register_parameter("pos_embed", torch::randn({1, cfg.grid_size() * cfg.grid_size(), cfg.width}) * 0.02);
    blocks = register_module("blocks", nn::ModuleList());
    for (int i = 0; i < cfg.depth; ++i) {
      block_list.push_back(TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio));
      blocks->push_back(block_list.back());
    }
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({cfg.width})));
    init_linear_normal(*blocks, 0.02);
  }

  /// Positional embedding for an arbitrary grid; bicubic resampling when the
  /// grid differs from the reference layout.
  torch::Tensor positional(int grid_h, int grid_w) const {
    const int g = cfg_.grid_size();
    if (grid_h == g && grid_w == g) return pos_embed;
    auto grid = pos_embed.reshape({1, g, g, cfg_.width}).permute({0, 3, 1, 2});
    auto resized = torch::nn::functional::interpolate(
        grid, torch::nn::functional::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{grid_h, grid_w})
                  .mode(torch::kBicubic)
                  .align_corners(false));
    return resized.permute({0, 2, 3, 1}).reshape({1, grid_h * grid_w, cfg_.width});
  }

  /// Normalized pixels → patch tokens + positions, shape (B, N, D).
  torch::Tensor embed(const torch::Tensor& images) {
    static const double kMean[3] = {0.48145466, 0.4578275, 0.40821073};
    static const double kStd[3] = {0.26862954, 0.26130258, 0.27577711};
    auto opts = images.options();
    auto mean = torch::tensor({kMean[0], kMean[1], kMean[2]}, opts).reshape({1, 3, 1, 1});
    auto stdv = torch::tensor({kStd[0], kStd[1], kStd[2]}, opts).reshape({1, 3, 1, 1});
    auto x = patch_embed->forward((images - mean) / stdv);
    const int gh = static_cast<int>(x.size(2)), gw = static_cast<int>(x.size(3));
    return x.flatten(2).transpose(1, 2) + positional(gh, gw);
  }

  const EncoderConfig& config() const { return cfg_; }

  nn::Conv2d patch_embed{nullptr};
  torch::Tensor pos_embed;
  nn::ModuleList blocks{nullptr};
  std::vector<TransformerBlock> block_list;
  nn::LayerNorm norm{nullptr};

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(VisionTransformer);

struct ParameterPartition {
  std::set<std::string> frozen;
  std::set<std::string> trainable;
};

inline std::string adapter_key(int site) { return "site" + std::to_string(site); }

/// Shared-weight backbone applied to both epochs with BCSF adapters after the
/// configured blocks.
class BiTemporalEncoderImpl : public nn::Module {
 public:
  static constexpr std::string_view kAdapterPrefix = "adapters.";

  explicit BiTemporalEncoderImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    backbone = register_module("backbone", VisionTransformer(cfg_));
    adapters = register_module("adapters", nn::ModuleDict());
    for (int site : cfg_.adapter_sites) {
      auto adapter = BCSFAdapter(cfg_.width);
      adapters->update({{adapter_key(site), adapter.ptr()}});
      adapter_by_site.emplace(site, adapter);
    }
  }

  std::pair<FeatureMap, FeatureMap> forward(const torch::Tensor& image_pre, const torch::Tensor& image_post,
                                            bool use_adapters = true) {
    require(image_pre.dim() == 4 && image_pre.size(1) == 3, ErrorKind::ShapeError, "images must be (B, 3, H, W)");
    require(image_pre.sizes() == image_post.sizes(), ErrorKind::ShapeMismatch, "bi-temporal images differ in shape");
    const auto h = image_pre.size(2), w = image_pre.size(3);
    require(h % cfg_.patch_size == 0 && w % cfg_.patch_size == 0, ErrorKind::ShapeError,
            "image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch size " +
                std::to_string(cfg_.patch_size));

    // Streams run through separate calls so each stream's arithmetic is
    // independent of its batch position (keeps the swap symmetry exact).
    auto t1 = backbone->embed(image_pre);
    auto t2 = backbone->embed(image_post);
    for (int i = 0; i < cfg_.depth; ++i) {
      t1 = backbone->block_list[i]->forward(t1);
      t2 = backbone->block_list[i]->forward(t2);
      if (use_adapters) {
        if (auto it = adapter_by_site.find(i); it != adapter_by_site.end()) {
          std::tie(t1, t2) = it->second->forward(t1, t2);
        }
      }
    }
    const int gh = static_cast<int>(h / cfg_.patch_size), gw = static_cast<int>(w / cfg_.patch_size);
    return {FeatureMap{backbone->norm->forward(t1), gh, gw, cfg_.patch_size},
            FeatureMap{backbone->norm->forward(t2), gh, gw, cfg_.patch_size}};
  }

  const EncoderConfig& config() const { return cfg_; }

  /// Adapter parameters are trainable; every other backbone parameter is
  /// frozen. Names carry `prefix` (e.g. "encoder.").
  ParameterPartition partition(const std::string& prefix = "") const {
    ParameterPartition p;
    for (const auto& item : named_parameters(/*recurse=*/true)) {
      auto name = prefix + item.key();
      if (has_prefix(item.key(), kAdapterPrefix)) {
        p.trainable.insert(std::move(name));
      } else {
        p.frozen.insert(std::move(name));
      }
    }
    return p;
  }

  VisionTransformer backbone{nullptr};
  nn::ModuleDict adapters{nullptr};
  std::map<int, BCSFAdapter> adapter_by_site;

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(BiTemporalEncoder);

inline ParameterPartition backbone_parameter_partition(const BiTemporalEncoder& encoder, const std::string& prefix = "") {
  return encoder->partition(prefix);
}

}  // namespace semcd
