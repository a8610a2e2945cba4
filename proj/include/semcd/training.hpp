#pragma once

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/checkpoint.hpp"
#include "semcd/data.hpp"
#include "semcd/error.hpp"
#include "semcd/losses.hpp"
#include "semcd/model.hpp"
#include "semcd/tensor_utils.hpp"

namespace semcd {

enum class Stage { bcd, scd };

inline std::string to_string(Stage s) { return s == Stage::bcd ? "bcd" : "scd"; }
inline Stage parse_stage(std::string_view s) {
  if (s == "bcd") return Stage::bcd;
  if (s == "scd") return Stage::scd;
  fail(ErrorKind::ConfigError, "stage must be 'bcd' or 'scd', got '" + std::string(s) + "'");
}

/// Parameter-name prefixes updated by a stage; everything else is frozen.
inline std::vector<std::string> trainable_prefixes(Stage stage) {
  if (stage == Stage::bcd) return {groups::kAdapters, groups::kBcdDecoder};
  return {groups::kPrompter, groups::kScdDecoder};
}

struct StageSpec {
  Stage stage = Stage::bcd;
  int epochs = 1;
  /// Optional cap on optimizer steps (0 = run all epochs).
  int max_steps = 0;
  int batch_size = 1;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;

  static StageSpec toy(Stage stage) {
    return stage == Stage::bcd ? StageSpec{Stage::bcd, 25, 200, 1, 1e-3, 7} : StageSpec{Stage::scd, 38, 300, 1, 1e-3, 7};
  }
  static StageSpec full(Stage stage) {
    return stage == Stage::bcd ? StageSpec{Stage::bcd, 300, 0, 1, 1e-4, 7} : StageSpec{Stage::scd, 5, 0, 1, 1e-4, 7};
  }

  std::vector<std::string> trainable_groups() const { return trainable_prefixes(stage); }

  nlohmann::json to_json() const {
    return {{"stage", to_string(stage)},           {"epochs", epochs}, {"max_steps", max_steps},
            {"batch_size", batch_size},            {"learning_rate", learning_rate},
            {"seed", seed}};
  }

  static StageSpec from_json(const nlohmann::json& j, StageSpec s) {
    if (j.contains("stage")) s.stage = parse_stage(j["stage"].get<std::string>());
    s.epochs = j.value("epochs", s.epochs);
    s.max_steps = j.value("max_steps", s.max_steps);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.seed = j.value("seed", s.seed);
    require(s.epochs > 0 && s.batch_size > 0 && s.max_steps >= 0 && s.learning_rate > 0, ErrorKind::ConfigError,
            "stage " + to_string(s.stage) + ": epochs, batch_size and learning_rate must be positive");
    return s;
  }
};

struct StepRecord {
  Stage stage = Stage::bcd;
  int epoch = 0;
  int step = 0;
  double loss = 0;
  double lr = 0;
  std::string timestamp;

  nlohmann::json to_json() const {
    return {{"stage", to_string(stage)}, {"epoch", epoch}, {"step", step},
            {"loss", loss},              {"lr", lr},       {"timestamp", timestamp}};
  }
};

struct StageResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_losses;
  /// Mean loss over the final epoch (or the final partial epoch when capped).
  double final_loss = 0;
  Checkpoint checkpoint;
};

using StepSink = std::function<void(const StepRecord&)>;

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Batch {
  torch::Tensor image_pre, image_post;    // (B, 3, H, W)
  torch::Tensor label_pre, label_post;    // (B, H, W) int64
  torch::Tensor change_mask;              // (B, 1, H, W) float
};

inline Batch make_batch(const std::vector<BiTemporalSample>& samples) {
  std::vector<torch::Tensor> i1, i2, l1, l2, m;
  for (const auto& s : samples) {
    i1.push_back(image_to_tensor(s.image_pre));
    i2.push_back(image_to_tensor(s.image_post));
    l1.push_back(labels_to_tensor(s.label_pre));
    l2.push_back(labels_to_tensor(s.label_post));
    m.push_back(labels_to_tensor(s.change_mask));
  }
  return {torch::stack(i1), torch::stack(i2), torch::stack(l1), torch::stack(l2),
          torch::stack(m).unsqueeze(1).to(torch::kFloat32)};
}

/// Names of parameters a stage must leave untouched.
inline std::vector<std::string> frozen_names(const torch::nn::Module& model, Stage stage) {
  std::vector<std::string> out;
  const auto trainable = trainable_prefixes(stage);
  for (const auto& item : model.named_parameters(true))
    if (!has_any_prefix(item.key(), trainable)) out.push_back(item.key());
  return out;
}

/// Marks exactly the stage's groups trainable and returns them.
inline std::vector<torch::Tensor> configure_trainable(torch::nn::Module& model, Stage stage) {
  std::vector<torch::Tensor> trainable;
  const auto prefixes = trainable_prefixes(stage);
  for (auto& item : model.named_parameters(true)) {
    const bool on = has_any_prefix(item.key(), prefixes);
    item.value().set_requires_grad(on);
    if (on) trainable.push_back(item.value());
  }
  return trainable;
}

/// Loss of one batch for the given stage. The encoder runs without autograd
/// in the SCD stage since it is frozen there.
inline torch::Tensor stage_loss(SemanticCD& model, Stage stage, const Batch& batch) {
  const auto h = batch.image_pre.size(2), w = batch.image_pre.size(3);
  if (stage == Stage::bcd) {
    auto [f1, f2] = model->encode(batch.image_pre, batch.image_post);
    auto bcd = model->predict_bcd(f1, f2, h, w);
    return bcd_loss(bcd.logits, batch.change_mask);
  }
  FeatureMap f1, f2;
  {
    torch::NoGradGuard guard;
    std::tie(f1, f2) = model->encode(batch.image_pre, batch.image_post);
  }
  auto scd = model->predict_scd(f1, f2, h, w);
  return scd_loss(scd.mask_pre.logits, scd.mask_post.logits, batch.label_pre, batch.label_post).loss;
}

/// One training stage with the decoupled freezing contract: only the stage's
/// groups are optimized, and every other parameter is hash-audited afterwards.
inline StageResult run_stage(const StageSpec& spec, SemanticCD& model, const DatasetManifest& data,
                             const StepSink& sink = {}, nlohmann::json history = nlohmann::json::array()) {
  require(!data.sample_ids.empty(), ErrorKind::EmptyDataset, "training set is empty");
  torch::manual_seed(spec.seed);
  auto params = configure_trainable(*model, spec.stage);

  std::map<std::string, std::string> frozen_before;
  const auto all_params = model->named_parameters(true);
  for (const auto& name : frozen_names(*model, spec.stage)) frozen_before[name] = tensor_sha256(*all_params.find(name));

  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(spec.learning_rate));
  StageResult result;
  int step = 0;
  const auto n = static_cast<int>(data.sample_ids.size());
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    double epoch_sum = 0;
    int epoch_steps = 0;
    for (int start = 0; start < n; start += spec.batch_size) {
      if (spec.max_steps > 0 && step >= spec.max_steps) break;
      std::vector<BiTemporalSample> samples;
      for (int k = start; k < std::min(n, start + spec.batch_size); ++k)
        samples.push_back(load_sample(data, data.sample_ids[static_cast<std::size_t>(k)]));
      auto batch = make_batch(samples);

      optimizer.zero_grad();
      auto loss = stage_loss(model, spec.stage, batch);
      const double value = loss.item<double>();
      require(std::isfinite(value), ErrorKind::DivergedLoss,
              to_string(spec.stage) + " loss became non-finite at step " + std::to_string(step));
      loss.backward();
      optimizer.step();

      StepRecord rec{spec.stage, epoch, step, value, spec.learning_rate, utc_timestamp()};
      if (sink) sink(rec);
      result.steps.push_back(rec);
      epoch_sum += value;
      ++epoch_steps;
      ++step;
    }
    if (epoch_steps == 0) break;
    result.epoch_losses.push_back(epoch_sum / epoch_steps);
  }
  for (auto& p : model->parameters()) p.set_requires_grad(false);

  std::vector<std::string> drifted;
  for (const auto& [name, hash] : frozen_before)
    if (tensor_sha256(*all_params.find(name)) != hash) drifted.push_back(name);
  if (!drifted.empty()) {
    std::string list;
    for (const auto& d : drifted) list += (list.empty() ? "" : ", ") + d;
    fail(ErrorKind::FrozenParameterDrift, "frozen parameters changed during " + to_string(spec.stage) + ": " + list);
  }

  result.final_loss = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  history.push_back({{"stage", to_string(spec.stage)},
                     {"steps", step},
                     {"epochs", result.epoch_losses.size()},
                     {"final_loss", result.final_loss},
                     {"spec", spec.to_json()}});
  result.checkpoint = capture_checkpoint(*model, model->config().to_json(), model->config().fingerprint());
  result.checkpoint.stage_history = std::move(history);
  return result;
}

/// Fraction (%) of ground-truth changed pixels, over both epochs, whose
/// foreground argmax of the semantic logits matches the label.
inline double changed_pixel_accuracy(SemanticCD& model, const DatasetManifest& data) {
  torch::NoGradGuard guard;
  std::int64_t hit = 0, total = 0;
  for (const auto& id : data.sample_ids) {
    auto batch = make_batch({load_sample(data, id)});
    const auto h = batch.image_pre.size(2), w = batch.image_pre.size(3);
    auto [f1, f2] = model->encode(batch.image_pre, batch.image_post);
    auto scd = model->predict_scd(f1, f2, h, w);
    for (auto [logits, labels] : {std::pair{scd.mask_pre.logits, batch.label_pre},
                                  std::pair{scd.mask_post.logits, batch.label_post}}) {
      auto pred = logits.slice(1, 1).argmax(1) + 1;
      auto changed = labels != 0;
      hit += (pred.eq(labels) & changed).sum().item<std::int64_t>();
      total += changed.sum().item<std::int64_t>();
    }
  }
  return total == 0 ? 100.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace semcd
