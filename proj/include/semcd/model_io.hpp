#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "semcd/checkpoint.hpp"
#include "semcd/error.hpp"
#include "semcd/model.hpp"

namespace semcd {

/// Loads foundation weights (backbone and/or text tower) into a fresh model.
/// The file may only contain `encoder.backbone.*` and `text_encoder.*` names
/// and must cover the whole backbone.
inline void load_pretrained_weights(SemanticCD& model, const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  for (const auto& [name, t] : ck.tensors) {
    require(has_prefix(name, groups::kBackbone) || has_prefix(name, groups::kTextEncoder), ErrorKind::CheckpointMismatch,
            "pretrained file carries non-foundation tensor '" + name + "'");
  }
  apply_checkpoint(*model, ck, /*strict=*/false);
  for (const auto& item : model->named_parameters(true)) {
    if (has_prefix(item.key(), groups::kBackbone)) {
      require(ck.tensors.contains(item.key()), ErrorKind::CheckpointMismatch,
              path.string() + " lacks backbone parameter '" + item.key() + "'");
    }
  }
}

inline SemanticCD build_model(const ModelConfig& cfg) {
  SemanticCD model(cfg);
  if (cfg.encoder.pretrained_checkpoint) {
    std::filesystem::path p = *cfg.encoder.pretrained_checkpoint;
    require(std::filesystem::exists(p), ErrorKind::IoError, "pretrained checkpoint " + p.string() + " not found");
    load_pretrained_weights(model, p);
  }
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  return model;
}

/// Saves only the BCSF adapter parameters.
inline void save_adapter_checkpoint(const std::filesystem::path& path, SemanticCD& model) {
  save_checkpoint(path, capture_checkpoint(*model, model->config().to_json(), model->config().fingerprint(),
                                           {groups::kAdapters}));
}

struct LoadedModel {
  SemanticCD model{nullptr};
  Checkpoint checkpoint;
};

/// Rebuilds the model described by a full checkpoint and restores its weights
/// and RNG state.
inline LoadedModel load_model(const std::filesystem::path& path,
                              const std::optional<std::string>& expected_fingerprint = std::nullopt) {
  auto ck = load_checkpoint(path, expected_fingerprint);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(ck.config);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::CheckpointMismatch, path.string() + ": config unreadable: " + e.what());
  }
  require(cfg.fingerprint() == ck.fingerprint, ErrorKind::VersionMismatch,
          path.string() + ": stored fingerprint does not match stored config");
  cfg.encoder.pretrained_checkpoint.reset();
  SemanticCD model(cfg);
  apply_checkpoint(*model, ck, /*strict=*/true);
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  restore_rng_state(ck.rng_state);
  return {model, std::move(ck)};
}

}  // namespace semcd
