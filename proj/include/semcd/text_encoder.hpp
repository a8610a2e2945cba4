#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"
#include "semcd/layers.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

struct TextEncoderConfig {
  int width = 64;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int max_length = 512;
  int vocab_size = 128;

  static TextEncoderConfig toy() { return {}; }

  /// CLIP ViT-L/14 text tower dimensions.
  static TextEncoderConfig full() { return {768, 12, 12, 4, 77, 49408}; }

  void validate() const {
    require(width > 0 && depth > 0 && heads > 0 && width % heads == 0 && max_length > 2,
            ErrorKind::ConfigError, "invalid text encoder dimensions");
    require(vocab_size >= 16, ErrorKind::ConfigError, "text vocab_size too small");
  }

  nlohmann::json to_json() const {
    return {{"width", width},           {"depth", depth},
            {"heads", heads},           {"mlp_ratio", mlp_ratio},
            {"max_length", max_length}, {"vocab_size", vocab_size}};
  }

  static TextEncoderConfig from_json(const nlohmann::json& j, TextEncoderConfig c = toy()) {
    c.width = j.value("width", c.width);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.max_length = j.value("max_length", c.max_length);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.validate();
    return c;
  }
};

/// Whole-word tokenizer over a fixed land-cover word list. Words outside the
/// list hash into a reserved bucket range, so any class name is encodable.
class WordTokenizer {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kStart = 1;
  static constexpr std::int64_t kEnd = 2;
  static constexpr std::int64_t kFirstWord = 4;

  explicit WordTokenizer(int vocab_size = 128) : vocab_size_(vocab_size) {
    static constexpr std::array<std::string_view, 100> kWords{
        "no",          "change",     "water",     "ground",      "low",       "vegetation", "tree",
        "building",    "playground", "non",       "vegetated",   "surface",   "road",       "river",
        "lake",        "sea",        "forest",    "grass",       "grassland", "farmland",   "cropland",
        "field",       "bare",       "soil",      "sand",        "desert",    "urban",      "residential",
        "industrial",  "commercial", "parking",   "lot",         "bridge",    "railway",    "airport",
        "harbor",      "port",       "ship",      "car",         "vehicle",   "roof",       "house",
        "wall",        "fence",      "park",      "garden",      "wetland",   "marsh",      "swamp",
        "snow",        "ice",        "glacier",   "cloud",       "shadow",    "rock",       "mountain",
        "hill",        "valley",     "beach",     "coast",       "island",    "pond",       "reservoir",
        "canal",       "dam",        "pool",      "stadium",     "court",     "track",      "sports",
        "school",      "church",     "tower",     "tank",        "storage",   "greenhouse", "orchard",
        "vineyard",    "paddy",      "meadow",    "shrub",       "bush",      "scrub",      "cultivated",
        "barren",      "impervious", "pavement",  "concrete",    "asphalt",   "construction", "site",
        "mine",        "quarry",     "landfill",  "container",   "solar",     "panel",      "farm",
        "land",        "cover"};
    require(vocab_size_ >= kFirstWord + static_cast<int>(kWords.size()) + 8, ErrorKind::ConfigError,
            "tokenizer vocab_size too small for the word list");
    for (std::size_t i = 0; i < kWords.size(); ++i) ids_.emplace(std::string(kWords[i]), kFirstWord + i);
    first_hash_bucket_ = kFirstWord + static_cast<std::int64_t>(kWords.size());
  }

  std::int64_t word_id(std::string_view word) const {
    if (auto it = ids_.find(std::string(word)); it != ids_.end()) return it->second;
    std::uint32_t h = 2166136261u;
    for (unsigned char ch : word) h = (h ^ ch) * 16777619u;
    return first_hash_bucket_ + static_cast<std::int64_t>(h % static_cast<std::uint32_t>(vocab_size_ - first_hash_bucket_));
  }

  /// Bare class name → word ids (no start/end markers).
  std::vector<std::int64_t> encode(std::string_view class_name) const {
    std::vector<std::int64_t> out;
    std::string word;
    for (char ch : normalize_class_name(class_name) + " ") {
      if (ch == ' ' || ch == '-' || ch == '_') {
        if (!word.empty()) out.push_back(word_id(word));
        word.clear();
      } else {
        word.push_back(ch);
      }
    }
    return out;
  }

  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
  std::int64_t first_hash_bucket_ = 0;
  std::unordered_map<std::string, std::int64_t> ids_;
};

/// Frozen causal text transformer. Takes already-embedded sequences so soft
/// context tokens can be spliced in; reads the feature at the end marker.
class TextEncoderImpl : public nn::Module {
 public:
  explicit TextEncoderImpl(const TextEncoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    token_embedding = register_module("token_embedding", nn::Embedding(cfg.vocab_size, cfg.width));
    positional_embedding = register_parameter("positional_embedding", torch::randn({cfg.max_length, cfg.width}) * 0.01);
    blocks = register_module("blocks", nn::ModuleList());
    for (int i = 0; i < cfg.depth; ++i) {
      block_list.push_back(TransformerBlock(cfg.width, cfg.heads, cfg.mlp_ratio));
      blocks->push_back(block_list.back());
    }
    ln_final = register_module("ln_final", nn::LayerNorm(nn::LayerNormOptions({cfg.width})));
    text_projection = register_parameter("text_projection",
                                         torch::randn({cfg.width, cfg.width}) / std::sqrt(static_cast<double>(cfg.width)));
    {
      torch::NoGradGuard guard;
      token_embedding->weight.normal_(0.0, 0.02);
    }
    init_linear_normal(*blocks, 0.02);
    for (auto& p : parameters()) p.set_requires_grad(false);
  }

  /// Embeds token ids with the frozen table, shape (..., width).
  torch::Tensor embed_tokens(const torch::Tensor& ids) { return token_embedding->forward(ids); }

  /// sequences (B, S, width), end_positions (B) → unit-norm features (B, width).
  torch::Tensor forward(const torch::Tensor& sequences, const torch::Tensor& end_positions) {
    const auto s = sequences.size(1);
    require(s <= cfg_.max_length, ErrorKind::SequenceTooLong, "sequence of " + std::to_string(s) +
                                                                   " exceeds max length " +
                                                                   std::to_string(cfg_.max_length));
    auto x = sequences + positional_embedding.slice(0, 0, s).to(sequences.dtype());
    auto mask = torch::full({s, s}, -std::numeric_limits<double>::infinity(), sequences.options()).triu(1);
    for (auto& block : block_list) x = block->forward(x, mask);
    x = ln_final->forward(x);
    auto idx = end_positions.to(torch::kInt64).view({-1, 1, 1}).expand({x.size(0), 1, x.size(2)});
    auto eos = x.gather(1, idx).squeeze(1);
    auto feat = torch::matmul(eos, text_projection.to(eos.dtype()));
    return feat / feat.norm(2, -1, /*keepdim=*/true).clamp_min(1e-12);
  }

  const TextEncoderConfig& config() const { return cfg_; }

  nn::Embedding token_embedding{nullptr};
  torch::Tensor positional_embedding;
  nn::ModuleList blocks{nullptr};
  std::vector<TransformerBlock> block_list;
  nn::LayerNorm ln_final{nullptr};
  torch::Tensor text_projection;

 private:
  TextEncoderConfig cfg_;
};
TORCH_MODULE(TextEncoder);

}  // namespace semcd
