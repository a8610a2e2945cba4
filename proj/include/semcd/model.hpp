#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semcd/data.hpp"
#include "semcd/decoders.hpp"
#include "semcd/encoder.hpp"
#include "semcd/prompter.hpp"
#include "semcd/sha256.hpp"
#include "semcd/tensor_utils.hpp"
#include "semcd/text_encoder.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

struct ModelConfig {
  Scale scale = Scale::toy;
  std::uint64_t seed = 7;
  ClassVocabulary vocabulary = ClassVocabulary::second();
  EncoderConfig encoder = EncoderConfig::toy();
  TextEncoderConfig text = TextEncoderConfig::toy();
  PrompterConfig prompter = PrompterConfig::toy();
  DecoderConfig decoder = DecoderConfig::toy();
  /// Ablation: feed an all-zero cost volume instead of the prompter output.
  bool baseline_zero_cost = false;

  static ModelConfig toy() { return {}; }
  static ModelConfig full() {
    ModelConfig c;
    c.scale = Scale::full;
    c.encoder = EncoderConfig::full();
    c.text = TextEncoderConfig::full();
    c.prompter = PrompterConfig::full();
    c.decoder = DecoderConfig::full();
    return c;
  }

  int num_classes() const { return vocabulary.size(); }

  nlohmann::json to_json() const {
    return {{"scale", to_string(scale)},
            {"seed", seed},
            {"vocabulary", vocabulary.to_json()},
            {"encoder", encoder.to_json()},
            {"text", text.to_json()},
            {"prompter", prompter.to_json()},
            {"decoder", decoder.to_json()},
            {"baseline_zero_cost", baseline_zero_cost}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    const bool full_scale = j.value("scale", std::string("toy")) == "full";
    ModelConfig c = full_scale ? full() : toy();
    c.seed = j.value("seed", c.seed);
    if (j.contains("vocabulary")) c.vocabulary = ClassVocabulary::from_json(j["vocabulary"]);
    if (j.contains("encoder")) {
      auto e = j["encoder"];
      if (!e.contains("scale")) e["scale"] = to_string(c.scale);
      c.encoder = EncoderConfig::from_json(e);
    }
    if (j.contains("text")) c.text = TextEncoderConfig::from_json(j["text"], c.text);
    if (j.contains("prompter")) c.prompter = PrompterConfig::from_json(j["prompter"], c.prompter);
    if (j.contains("decoder")) c.decoder = DecoderConfig::from_json(j["decoder"], c.decoder);
    c.baseline_zero_cost = j.value("baseline_zero_cost", c.baseline_zero_cost);
    c.encoder.validate();
    return c;
  }

  /// Architecture fingerprint: everything that determines parameter shapes
  /// and meaning, excluding run switches (checkpoint path, ablation flag).
  std::string fingerprint() const {
    auto j = to_json();
    j.erase("baseline_zero_cost");
    j["encoder"].erase("pretrained_checkpoint");
    for (auto& v : j["vocabulary"]) v.erase("color");
    return sha256_hex(j.dump());
  }
};

namespace groups {
inline const std::string kBackbone = "encoder.backbone.";
inline const std::string kAdapters = "encoder.adapters.";
inline const std::string kTextEncoder = "text_encoder.";
inline const std::string kPrompter = "prompter.";
inline const std::string kBcdDecoder = "bcd_decoder.";
inline const std::string kScdDecoder = "scd_decoder.";
}  // namespace groups

struct ScdOutput {
  CostVolume cost_pre, cost_post;
  SemanticMask mask_pre, mask_post;
};

class SemanticCDImpl : public nn::Module {
 public:
  explicit SemanticCDImpl(const ModelConfig& cfg) : cfg_(cfg), tokenizer_(cfg.text.vocab_size) {
    torch::manual_seed(cfg_.seed);
    encoder = register_module("encoder", BiTemporalEncoder(cfg_.encoder));
    text_encoder = register_module("text_encoder", TextEncoder(cfg_.text));
    prompter = register_module("prompter", OpenSemanticPrompter(cfg_.prompter, cfg_.encoder.width, cfg_.vocabulary,
                                                                 tokenizer_, cfg_.text.width));
    bcd_decoder = register_module("bcd_decoder", BCDDecoder(cfg_.encoder.width, cfg_.encoder.patch_size, cfg_.decoder));
    scd_decoder = register_module("scd_decoder", SCDDecoder(cfg_.encoder.width, cfg_.encoder.patch_size,
                                                            cfg_.num_classes(), cfg_.decoder));
  }

  std::pair<FeatureMap, FeatureMap> encode(const torch::Tensor& image_pre, const torch::Tensor& image_post) {
    return encoder->forward(image_pre, image_post);
  }

  BinaryChangeMask predict_bcd(const FeatureMap& f1, const FeatureMap& f2, int64_t h, int64_t w) {
    return bcd_decoder->forward(f1, f2, h, w);
  }

  CostVolume cost_volume(const FeatureMap& f, int temporal_index) {
    if (cfg_.baseline_zero_cost) {
      return {torch::zeros({f.batch(), f.grid_h, f.grid_w, cfg_.num_classes()}, f.tokens.options()), temporal_index};
    }
    return prompter->forward(f, text_encoder, temporal_index);
  }

  ScdOutput predict_scd(const FeatureMap& f1, const FeatureMap& f2, int64_t h, int64_t w) {
    ScdOutput out;
    out.cost_pre = cost_volume(f1, 1);
    out.cost_post = cost_volume(f2, 2);
    out.mask_pre = scd_decoder->forward(f1, out.cost_pre, h, w);
    out.mask_post = scd_decoder->forward(f2, out.cost_post, h, w);
    return out;
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  BiTemporalEncoder encoder{nullptr};
  TextEncoder text_encoder{nullptr};
  OpenSemanticPrompter prompter{nullptr};
  BCDDecoder bcd_decoder{nullptr};
  SCDDecoder scd_decoder{nullptr};

 private:
  ModelConfig cfg_;
  WordTokenizer tokenizer_;
};
TORCH_MODULE(SemanticCD);

/// (1, 3, H, W) pair for one sample.
inline std::pair<torch::Tensor, torch::Tensor> sample_images(const BiTemporalSample& s) {
  return {image_to_tensor(s.image_pre).unsqueeze(0), image_to_tensor(s.image_post).unsqueeze(0)};
}

/// Full inference for one sample: BCD gating + per-epoch semantic argmax.
inline std::pair<LabelMap, LabelMap> predict_labels(SemanticCD& model, const BiTemporalSample& sample,
                                                    double threshold = 0.5) {
  torch::NoGradGuard guard;
  auto [i1, i2] = sample_images(sample);
  const auto h = i1.size(2), w = i1.size(3);
  auto [f1, f2] = model->encode(i1, i2);
  auto bcd = model->predict_bcd(f1, f2, h, w);
  auto scd = model->predict_scd(f1, f2, h, w);
  return combine_predictions(bcd.logits[0], scd.mask_pre.logits[0], scd.mask_post.logits[0], threshold);
}

}  // namespace semcd
