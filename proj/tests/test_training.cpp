#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "semcd/semcd.hpp"

using namespace semcd;
using testing_util::TempDir;
using testing_util::to_vector;

namespace {

std::vector<std::vector<double>> pixels_by_class(const torch::Tensor& logits) {
  // (1, C, H, W) → [pixel][class]
  auto flat = logits[0].reshape({logits.size(1), -1}).transpose(0, 1).contiguous();
  std::vector<std::vector<double>> out;
  for (int64_t p = 0; p < flat.size(0); ++p) out.push_back(to_vector(flat[p]));
  return out;
}

std::vector<int> int_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kInt64).contiguous().reshape(-1);
  return {c.data_ptr<int64_t>(), c.data_ptr<int64_t>() + c.numel()};
}

StageSpec one_step(Stage stage) {
  auto s = StageSpec::toy(stage);
  s.max_steps = 1;
  s.epochs = 1;
  return s;
}

std::map<std::string, std::string> changed_names(const std::map<std::string, std::string>& before,
                                                 const std::map<std::string, std::string>& after) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : before)
    if (after.at(k) != v) out[k] = v;
  return out;
}

}  // namespace

TEST(BcdLoss, MatchesScalarLoop) {
  for (int trial = 0; trial < 10; ++trial) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(trial);
    auto logits = torch::randn({1, 1, 4, 4}, gen, torch::kFloat64) * 4;
    auto target = (torch::rand({1, 1, 4, 4}, gen, torch::kFloat64) > 0.5).to(torch::kFloat64);
    const double got = bcd_loss(logits, target).item<double>();
    EXPECT_NEAR(got, oracle::bce(to_vector(logits), int_vector(target)), 1e-10);
    EXPECT_GE(got, 0.0);
  }
}

TEST(BcdLoss, ZeroLogitsGiveLn2AndSaturationGivesZero) {
  auto target = torch::tensor({0.0, 1.0, 1.0, 0.0}, torch::kFloat64).view({1, 1, 2, 2});
  EXPECT_NEAR(bcd_loss(torch::zeros({1, 1, 2, 2}, torch::kFloat64), target).item<double>(), std::log(2.0), 1e-15);
  auto saturated = (target * 2 - 1) * 800;
  const double v = bcd_loss(saturated, target).item<double>();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, 1e-300);
}

TEST(BcdLoss, NonBinaryTarget) {
  try {
    bcd_loss(torch::zeros({1, 1, 2, 2}), torch::full({1, 1, 2, 2}, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonBinaryTarget);
  }
}

TEST(ScdLoss, MatchesLoopWithExclusionAndSumsEpochs) {
  for (int trial = 0; trial < 10; ++trial) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(50 + trial);
    auto l1 = torch::randn({1, 7, 4, 4}, gen, torch::kFloat64) * 3;
    auto l2 = torch::randn({1, 7, 4, 4}, gen, torch::kFloat64) * 3;
    auto g1 = torch::randint(0, 7, {1, 4, 4}, gen) * (torch::rand({1, 4, 4}, gen) > 0.4).to(torch::kInt64);
    auto g2 = torch::randint(0, 7, {1, 4, 4}, gen);
    auto r = scd_loss(l1, l2, g1, g2);
    const double ref = oracle::ce_ignore_zero(pixels_by_class(l1), int_vector(g1)) +
                       oracle::ce_ignore_zero(pixels_by_class(l2), int_vector(g2));
    EXPECT_NEAR(r.loss.item<double>(), ref, 1e-10);
    EXPECT_FALSE(r.all_ignored);
  }
}

TEST(ScdLoss, UniformLogitsGiveLnC) {
  auto logits = torch::zeros({1, 7, 3, 3}, torch::kFloat64);
  auto gt1 = torch::zeros({1, 3, 3}, torch::kInt64), gt2 = torch::zeros({1, 3, 3}, torch::kInt64);
  gt1[0][1][1] = 4;
  // Only the pre epoch has a changed pixel: its contribution is ln C.
  auto r = scd_loss(logits, logits, gt1, gt2);
  EXPECT_NEAR(r.loss.item<double>(), std::log(7.0), 1e-12);
  gt2[0][2][0] = 1;
  EXPECT_NEAR(scd_loss(logits, logits, gt1, gt2).loss.item<double>(), 2 * std::log(7.0), 1e-12);
}

TEST(ScdLoss, AllIgnoredIsZeroWithFlag) {
  auto logits = torch::randn({1, 7, 3, 3}, torch::kFloat64).requires_grad_();
  auto gt = torch::zeros({1, 3, 3}, torch::kInt64);
  auto r = scd_loss(logits, logits, gt, gt);
  EXPECT_TRUE(r.all_ignored);
  EXPECT_EQ(r.loss.item<double>(), 0.0);
  r.loss.backward();
  EXPECT_EQ(logits.grad().abs().max().item<double>(), 0.0);
  EXPECT_THROW(scd_loss(logits, logits, gt + 7, gt), Error);
}

TEST(Freezing, TrainablePrefixesPerStage) {
  EXPECT_EQ(trainable_prefixes(Stage::bcd), (std::vector<std::string>{groups::kAdapters, groups::kBcdDecoder}));
  EXPECT_EQ(trainable_prefixes(Stage::scd), (std::vector<std::string>{groups::kPrompter, groups::kScdDecoder}));
}

TEST(Freezing, BcdStepTouchesOnlyAdaptersAndBcdDecoder) {
  auto model = build_model(ModelConfig::toy());
  auto before = parameter_hashes(*model);
  run_stage(one_step(Stage::bcd), model, testing_util::toy_dataset());
  auto changed = changed_names(before, parameter_hashes(*model));
  ASSERT_FALSE(changed.empty());
  bool decoder_moved = false, adapter_moved = false;
  for (const auto& [name, _] : changed) {
    EXPECT_TRUE(has_any_prefix(name, trainable_prefixes(Stage::bcd))) << name;
    decoder_moved |= has_prefix(name, groups::kBcdDecoder);
    adapter_moved |= has_prefix(name, groups::kAdapters);
  }
  EXPECT_TRUE(decoder_moved);
  EXPECT_TRUE(adapter_moved);
}

TEST(Freezing, ScdStepTouchesOnlyPrompterAndScdDecoder) {
  auto model = build_model(ModelConfig::toy());
  auto before = parameter_hashes(*model);
  run_stage(one_step(Stage::scd), model, testing_util::toy_dataset());
  auto changed = changed_names(before, parameter_hashes(*model));
  ASSERT_FALSE(changed.empty());
  bool prompter_moved = false;
  for (const auto& [name, _] : changed) {
    EXPECT_TRUE(has_any_prefix(name, trainable_prefixes(Stage::scd))) << name;
    prompter_moved |= has_prefix(name, groups::kPrompter);
  }
  EXPECT_TRUE(prompter_moved);
}

TEST(Freezing, AuditCatchesDrift) {
  auto model = build_model(ModelConfig::toy());
  auto sink = [&](const StepRecord&) {
    torch::NoGradGuard guard;
    model->text_encoder->ln_final->bias.add_(1e-3);
  };
  try {
    run_stage(one_step(Stage::bcd), model, testing_util::toy_dataset(), sink);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FrozenParameterDrift);
    EXPECT_NE(std::string(e.what()).find("text_encoder.ln_final.bias"), std::string::npos);
  }
}

TEST(Training, NonFiniteLossIsDivergence) {
  auto model = build_model(ModelConfig::toy());
  {
    torch::NoGradGuard guard;
    model->encoder->backbone->norm->weight.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  try {
    run_stage(one_step(Stage::bcd), model, testing_util::toy_dataset());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivergedLoss);
  }
}

TEST(Training, SameSeedSameTrajectory) {
  auto spec = StageSpec::toy(Stage::bcd);
  spec.max_steps = 6;
  std::vector<double> a, b;
  auto m1 = build_model(ModelConfig::toy());
  run_stage(spec, m1, testing_util::toy_dataset(), [&](const StepRecord& r) { a.push_back(r.loss); });
  auto m2 = build_model(ModelConfig::toy());
  run_stage(spec, m2, testing_util::toy_dataset(), [&](const StepRecord& r) { b.push_back(r.loss); });
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(parameter_hashes(*m1), parameter_hashes(*m2));
}

TEST(Training, StepRecordsAndHistory) {
  auto spec = StageSpec::toy(Stage::bcd);
  spec.max_steps = 10;
  auto model = build_model(ModelConfig::toy());
  auto result = run_stage(spec, model, testing_util::toy_dataset());
  ASSERT_EQ(result.steps.size(), 10u);
  EXPECT_EQ(result.steps.back().epoch, 1);
  EXPECT_EQ(result.epoch_losses.size(), 2u);
  EXPECT_DOUBLE_EQ(result.final_loss, (result.steps[8].loss + result.steps[9].loss) / 2);
  auto j = result.steps[0].to_json();
  for (auto key : {"stage", "epoch", "step", "loss", "lr", "timestamp"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(result.checkpoint.has_stage("bcd"));
  EXPECT_FALSE(result.checkpoint.has_stage("scd"));
}

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
  TempDir dir;
  auto model = build_model(ModelConfig::toy());
  auto spec = StageSpec::toy(Stage::bcd);
  spec.max_steps = 3;
  auto result = run_stage(spec, model, testing_util::toy_dataset());
  save_checkpoint(dir / "a.ckpt", result.checkpoint);

  auto loaded = load_model(dir / "a.ckpt", model->config().fingerprint());
  EXPECT_EQ(parameter_hashes(*loaded.model), parameter_hashes(*model));
  EXPECT_EQ(loaded.checkpoint.rng_state, result.checkpoint.rng_state);
  EXPECT_EQ(loaded.checkpoint.stage_history, result.checkpoint.stage_history);

  auto sample = load_sample(testing_util::toy_dataset(), "toy_0002");
  torch::NoGradGuard guard;
  auto [i1, i2] = sample_images(sample);
  auto [a1, a2] = model->encode(i1, i2);
  auto [b1, b2] = loaded.model->encode(i1, i2);
  EXPECT_TRUE(torch::equal(model->predict_bcd(a1, a2, 64, 64).logits, loaded.model->predict_bcd(b1, b2, 64, 64).logits));
  EXPECT_TRUE(torch::equal(model->predict_scd(a1, a2, 64, 64).mask_post.logits,
                           loaded.model->predict_scd(b1, b2, 64, 64).mask_post.logits));
}

TEST(Checkpoint, RngStateRestored) {
  torch::manual_seed(99);
  auto state = capture_rng_state();
  auto a = torch::rand({4});
  restore_rng_state(state);
  EXPECT_TRUE(torch::equal(a, torch::rand({4})));
}

TEST(Checkpoint, WrongFingerprintIsVersionMismatch) {
  TempDir dir;
  auto model = build_model(ModelConfig::toy());
  save_checkpoint(dir / "a.ckpt", capture_checkpoint(*model, model->config().to_json(), model->config().fingerprint()));
  auto other = ModelConfig::toy();
  other.prompter.context_length = 8;
  try {
    load_checkpoint(dir / "a.ckpt", other.fingerprint());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::VersionMismatch);
  }
  // The ablation switch does not change the architecture fingerprint.
  auto baseline = ModelConfig::toy();
  baseline.baseline_zero_cost = true;
  EXPECT_EQ(baseline.fingerprint(), ModelConfig::toy().fingerprint());
}

TEST(Checkpoint, TruncatedOrFlippedFileIsCorrupt) {
  TempDir dir;
  auto model = build_model(ModelConfig::toy());
  save_checkpoint(dir / "a.ckpt", capture_checkpoint(*model, model->config().to_json(), model->config().fingerprint()));
  auto bytes = testing_util::read_file(dir / "a.ckpt");

  auto expect_corrupt = [&](const std::string& content) {
    std::ofstream(dir / "b.ckpt", std::ios::binary | std::ios::trunc) << content;
    try {
      load_checkpoint(dir / "b.ckpt");
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::CorruptFile) << e.what();
    }
  };
  expect_corrupt(bytes.substr(0, bytes.size() - 100));
  expect_corrupt(bytes.substr(0, 12));
  std::string flipped = bytes;
  flipped[flipped.size() - 5000] ^= 0x01;
  expect_corrupt(flipped);
  expect_corrupt("garbage");
}

TEST(Checkpoint, ApplyRejectsUnknownOrMissingNames) {
  auto model = build_model(ModelConfig::toy());
  auto ck = capture_checkpoint(*model, {}, "x", {groups::kAdapters});
  EXPECT_NO_THROW(apply_checkpoint(*model, ck, /*strict=*/false));
  EXPECT_THROW(apply_checkpoint(*model, ck, /*strict=*/true), Error);
  ck.tensors["nonexistent.weight"] = torch::zeros({1});
  EXPECT_THROW(apply_checkpoint(*model, ck, false), Error);
}

TEST(Checkpoint, PretrainedWeightsMustCoverBackbone) {
  TempDir dir;
  auto source = build_model(ModelConfig::toy());
  save_checkpoint(dir / "fm.ckpt", capture_checkpoint(*source, {}, "fm", {groups::kBackbone, groups::kTextEncoder}));
  auto cfg = ModelConfig::toy();
  cfg.seed = 123;
  cfg.encoder.pretrained_checkpoint = (dir / "fm.ckpt").string();
  auto model = build_model(cfg);
  auto a = parameter_hashes(*source), b = parameter_hashes(*model);
  for (const auto& [name, h] : a)
    if (has_prefix(name, groups::kBackbone)) EXPECT_EQ(b.at(name), h) << name;

  save_checkpoint(dir / "adapters.ckpt", capture_checkpoint(*source, {}, "fm", {groups::kAdapters}));
  cfg.encoder.pretrained_checkpoint = (dir / "adapters.ckpt").string();
  EXPECT_THROW(build_model(cfg), Error);
}

TEST(RunConfigTest, ShippedConfigsLoad) {
  auto toy = RunConfig::load(std::filesystem::path(SEMCD_SOURCE_DIR) / "configs/toy.json");
  EXPECT_EQ(toy.scale(), Scale::toy);
  EXPECT_EQ(toy.model.fingerprint(), ModelConfig::toy().fingerprint());
  EXPECT_EQ(toy.bcd.max_steps, 200);
  EXPECT_DOUBLE_EQ(toy.bcd.learning_rate, 1e-3);

  auto full = RunConfig::load(std::filesystem::path(SEMCD_SOURCE_DIR) / "configs/full-second.json");
  EXPECT_EQ(full.scale(), Scale::full);
  EXPECT_EQ(full.bcd.epochs, 300);
  EXPECT_EQ(full.scd.epochs, 5);
  EXPECT_EQ(full.bcd.batch_size, 1);
  EXPECT_EQ(full.scd.batch_size, 1);
  EXPECT_EQ(full.model.encoder.patch_size, 14);
  EXPECT_EQ(full.model.prompter.context_length, 16);
}

TEST(RunConfigTest, OverridesAndErrors) {
  auto cfg = RunConfig::load({}, {"stages.bcd.learning_rate=0.5", "seed=11", "model.baseline_zero_cost=true"});
  EXPECT_DOUBLE_EQ(cfg.bcd.learning_rate, 0.5);
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.model.seed, 11u);
  EXPECT_EQ(cfg.scd.seed, 11u);
  EXPECT_TRUE(cfg.model.baseline_zero_cost);
  EXPECT_THROW(RunConfig::load({}, {"novalue"}), Error);
  EXPECT_THROW(RunConfig::load({}, {"stages.bcd.epochs=0"}), Error);
  EXPECT_THROW(RunConfig::load({}, {"stages.bcd.epochs=\"many\""}), Error);
  EXPECT_THROW(RunConfig::load("/nonexistent/config.json"), Error);
}
