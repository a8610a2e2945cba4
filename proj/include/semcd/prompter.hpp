#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/encoder.hpp"
#include "semcd/error.hpp"
#include "semcd/tensor_utils.hpp"
#include "semcd/text_encoder.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

struct PrompterConfig {
  /// Number of soft context tokens.
  int context_length = 256;

  static PrompterConfig toy() { return {256}; }
  /// Fits the 77-token limit of a pretrained CLIP text tower.
  static PrompterConfig full() { return {16}; }

  nlohmann::json to_json() const { return {{"context_length", context_length}}; }
  static PrompterConfig from_json(const nlohmann::json& j, PrompterConfig c = toy()) {
    c.context_length = j.value("context_length", c.context_length);
    require(c.context_length > 0, ErrorKind::ConfigError, "context_length must be positive");
    return c;
  }
};

/// Per-temporal cosine similarity between visual tokens and class embeddings.
struct CostVolume {
  torch::Tensor values;  // (B, h', w', C), entries in [-1, 1]
  int temporal_index = 1;
};

/// Meta-net: pooled visual tokens → 2-layer MLP → L×D_text meta tokens.
class MetaNetImpl : public nn::Module {
 public:
  MetaNetImpl(int visual_width, int text_width, int context_length)
      : text_width_(text_width), context_length_(context_length) {
    fc1 = register_module("fc1", nn::Linear(visual_width, text_width));
    fc2 = register_module("fc2", nn::Linear(text_width, context_length * text_width));
    init_linear_normal(*this, 0.02);
  }

  torch::Tensor forward(const torch::Tensor& tokens) {
    auto pooled = tokens.mean(1);
    auto hidden = torch::relu(fc1->forward(pooled));
    return fc2->forward(hidden).view({tokens.size(0), context_length_, text_width_});
  }

  nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  int text_width_;
  int context_length_;
};
TORCH_MODULE(MetaNet);

/// p^m_i = Φ_meta(F_i), shape (B, L, D_text).
inline torch::Tensor compute_meta_tokens(const FeatureMap& features, MetaNet& meta_net) {
  require(all_finite(features.tokens), ErrorKind::NonFiniteInput, "feature map contains non-finite values");
  return meta_net->forward(features.tokens);
}

/// p^c_i = p^m_i + p^t; the shared context broadcasts over the batch.
inline torch::Tensor build_context(const torch::Tensor& meta_tokens, const torch::Tensor& context_tokens) {
  require(meta_tokens.dim() == 3 && context_tokens.dim() == 2 && meta_tokens.size(1) == context_tokens.size(0) &&
              meta_tokens.size(2) == context_tokens.size(1),
          ErrorKind::ShapeMismatch, "meta tokens and context tokens differ in shape");
  return meta_tokens + context_tokens.unsqueeze(0);
}

/// Builds [start, context..., class words..., end] for every (batch, class)
/// pair and encodes them with the frozen text encoder. Returns (B, K, D_text)
/// unit-norm embeddings in the order of `class_tokens`.
inline torch::Tensor assemble_and_encode(const torch::Tensor& context, const std::vector<std::vector<std::int64_t>>& class_tokens,
                                         TextEncoder& text_encoder) {
  const auto batch = context.size(0), ctx_len = context.size(1), width = context.size(2);
  const int max_len = text_encoder->config().max_length;
  std::size_t longest = 0;
  for (const auto& t : class_tokens) longest = std::max(longest, t.size());
  const auto needed = static_cast<int64_t>(ctx_len + static_cast<int64_t>(longest) + 2);
  require(needed <= max_len, ErrorKind::SequenceTooLong,
          "prompt needs " + std::to_string(needed) + " positions but the text encoder allows " +
              std::to_string(max_len) + "; reduce the context length by at least " + std::to_string(needed - max_len));

  auto opts_long = torch::TensorOptions().dtype(torch::kInt64);
  auto embed = [&](std::vector<std::int64_t> ids) {
    auto e = text_encoder->embed_tokens(torch::tensor(ids, opts_long)).to(context.dtype());
    return e.unsqueeze(0).expand({batch, static_cast<int64_t>(ids.size()), width});
  };
  auto start = embed({WordTokenizer::kStart});
  auto end = embed({WordTokenizer::kEnd});

  std::vector<torch::Tensor> sequences;
  std::vector<std::int64_t> end_positions;
  for (const auto& tokens : class_tokens) {
    std::vector<torch::Tensor> parts{start, context};
    if (!tokens.empty()) parts.push_back(embed(tokens));
    parts.push_back(end);
    const auto used = ctx_len + static_cast<int64_t>(tokens.size()) + 2;
    if (used < needed) parts.push_back(embed(std::vector<std::int64_t>(needed - used, WordTokenizer::kPad)));
    sequences.push_back(torch::cat(parts, 1));
    end_positions.push_back(used - 1);
  }
  const auto k = static_cast<int64_t>(class_tokens.size());
  auto stacked = torch::stack(sequences, 1).reshape({batch * k, needed, width});
  auto ends = torch::tensor(end_positions, opts_long).repeat({batch});
  return text_encoder->forward(stacked, ends).view({batch, k, -1});
}

/// values[b, p, j] = <f_p, t_j> / (|f_p| |t_j|); zero-norm tokens give 0.
/// `projection` maps visual tokens to the text width when the two differ.
inline CostVolume compute_cost_volume(const FeatureMap& features, const torch::Tensor& text_embeddings,
                                      nn::Linear projection = nullptr, int temporal_index = 1) {
  auto visual = features.tokens;
  if (projection) visual = projection->forward(visual);
  require(visual.size(-1) == text_embeddings.size(-1), ErrorKind::WidthMismatch,
          "visual width " + std::to_string(visual.size(-1)) + " differs from text width " +
              std::to_string(text_embeddings.size(-1)) + " and no projection is configured");
  require(text_embeddings.dim() == 3 && text_embeddings.size(0) == visual.size(0), ErrorKind::ShapeMismatch,
          "text embeddings must be (B, C, D)");
  auto v = visual / visual.norm(2, -1, true).clamp_min(1e-12);
  auto t = text_embeddings / text_embeddings.norm(2, -1, true).clamp_min(1e-12);
  auto sim = torch::matmul(v, t.transpose(1, 2)).clamp(-1.0, 1.0);
  return {sim.view({visual.size(0), features.grid_h, features.grid_w, text_embeddings.size(1)}), temporal_index};
}

/// Open semantic prompter: learnable shared context p^t, meta network and,
/// when visual and text widths differ, a visual-side projection.
class OpenSemanticPrompterImpl : public nn::Module {
 public:
  OpenSemanticPrompterImpl(const PrompterConfig& cfg, int visual_width, const ClassVocabulary& vocabulary,
                           const WordTokenizer& tokenizer, int text_width)
      : cfg_(cfg) {
    context_tokens = register_parameter("context_tokens", torch::randn({cfg.context_length, text_width}) * 0.02);
    meta_net = register_module("meta_net", MetaNet(visual_width, text_width, cfg.context_length));
    if (visual_width != text_width) {
      visual_proj = register_module("visual_proj", nn::Linear(visual_width, text_width));
    }
    for (const auto& name : vocabulary.names()) class_tokens.push_back(tokenizer.encode(name));
  }

  /// Cost volume over every vocabulary class (no-change included).
  CostVolume forward(const FeatureMap& features, TextEncoder& text_encoder, int temporal_index) {
    auto meta = compute_meta_tokens(features, meta_net);
    auto ctx = build_context(meta, context_tokens);
    auto text = assemble_and_encode(ctx, class_tokens, text_encoder);
    return compute_cost_volume(features, text, visual_proj, temporal_index);
  }

  const PrompterConfig& config() const { return cfg_; }

  torch::Tensor context_tokens;
  MetaNet meta_net{nullptr};
  nn::Linear visual_proj{nullptr};
  std::vector<std::vector<std::int64_t>> class_tokens;

 private:
  PrompterConfig cfg_;
};
TORCH_MODULE(OpenSemanticPrompter);

}  // namespace semcd
