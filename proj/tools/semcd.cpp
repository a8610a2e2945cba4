// semcd: dataset synthesis, two-stage training, evaluation and prediction.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semcd/semcd.hpp"

namespace fs = std::filesystem;
using namespace semcd;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidVocabulary:
    case ErrorKind::ConfigError:
      return kUsageError;
    default:
      return kRuntimeError;
  }
}

void require_dir(const std::string& path, const std::string& flag) {
  if (!fs::is_directory(path)) throw UsageError(flag + " '" + path + "' is not a directory");
}

void require_file(const std::string& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw UsageError(flag + " '" + path + "' does not exist");
}

/// Dataset vocabulary: explicit file, else `<root>/vocabulary.json`, else the
/// fallback.
ClassVocabulary dataset_vocabulary(const fs::path& root, const std::string& vocab_flag, const ClassVocabulary& fallback) {
  if (!vocab_flag.empty()) return ClassVocabulary::load(vocab_flag);
  if (fs::exists(root / "vocabulary.json")) return ClassVocabulary::load(root / "vocabulary.json");
  return fallback;
}

// ---------------------------------------------------------------- make-toy-data

struct ToyDataArgs {
  std::string out;
  int n = 8;
  int size = 64;
  std::uint64_t seed = 7;
  int patch = 8;
  std::string vocab;
  std::string manifest;
};

int cmd_make_toy_data(const ToyDataArgs& a) {
  SyntheticSpec spec;
  spec.n_samples = a.n;
  spec.height = spec.width = a.size;
  spec.seed = a.seed;
  spec.patch_size = a.patch;
  if (!a.vocab.empty()) spec.vocabulary = ClassVocabulary::load(a.vocab);
  auto manifest = generate_synthetic_dataset(spec, a.out);
  if (!a.manifest.empty()) {
    std::ofstream out(a.manifest);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + a.manifest);
    out << manifest.to_json().dump(2) << '\n';
  }
  std::cout << "wrote " << manifest.size() << " samples (" << a.size << "x" << a.size << ", C="
            << manifest.vocabulary.size() << ", seed " << a.seed << ") to " << a.out << '\n';
  return kOk;
}

// ------------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string data;
  std::string out;
  std::string stage = "both";
  int steps = 0;
  std::string checkpoint;
  std::string log;
  bool baseline = false;
};

int cmd_train(const TrainArgs& a) {
  require_dir(a.data, "--data");
  auto overrides = a.overrides;
  if (a.baseline) overrides.push_back("model.baseline_zero_cost=true");
  auto cfg = RunConfig::load(resolve_config_path(a.config), overrides);

  auto vocab = dataset_vocabulary(a.data, "", cfg.model.vocabulary);
  if (!(vocab == cfg.model.vocabulary)) {
    throw UsageError("dataset vocabulary differs from the model vocabulary; set model.vocabulary accordingly");
  }
  auto manifest = load_second_directory(a.data, cfg.model.vocabulary);
  for (const auto& inc : manifest.incomplete) std::cerr << "warning: skipping incomplete sample " << inc.id << '\n';

  std::vector<Stage> stages;
  if (a.stage == "bcd" || a.stage == "both") stages.push_back(Stage::bcd);
  if (a.stage == "scd" || a.stage == "both") stages.push_back(Stage::scd);

  fs::create_directories(a.out);
  const fs::path log_path = a.log.empty() ? fs::path(a.out) / "train_log.jsonl" : fs::path(a.log);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw Error(ErrorKind::IoError, "cannot write " + log_path.string());

  SemanticCD model{nullptr};
  nlohmann::json history = nlohmann::json::array();
  if (a.stage == "scd") {
    if (a.checkpoint.empty()) {
      throw UsageError("--stage scd needs a completed BCD-stage checkpoint (--checkpoint <dir>/bcd.ckpt)");
    }
    require_file(a.checkpoint, "--checkpoint");
    auto loaded = load_model(a.checkpoint, cfg.model.fingerprint());
    if (!loaded.checkpoint.has_stage("bcd")) {
      throw UsageError(a.checkpoint + " has no completed BCD stage");
    }
    model = loaded.model;
    history = loaded.checkpoint.stage_history;
    model->mutable_config().baseline_zero_cost = cfg.model.baseline_zero_cost;
  } else {
    model = build_model(cfg.model);
  }

  for (auto stage : stages) {
    auto spec = cfg.stage(stage);
    if (a.steps > 0) spec.max_steps = a.steps;
    std::cout << "stage " << to_string(stage) << ": epochs " << spec.epochs << ", max steps " << spec.max_steps
              << ", batch " << spec.batch_size << ", lr " << spec.learning_rate << ", seed " << spec.seed << std::endl;
    auto result = run_stage(spec, model, manifest, [&](const StepRecord& r) { log << r.to_json().dump() << '\n'; },
                            history);
    history = result.checkpoint.stage_history;
    result.checkpoint.config["run_seed"] = cfg.seed;
    const auto ck_path = fs::path(a.out) / (to_string(stage) + ".ckpt");
    save_checkpoint(ck_path, result.checkpoint);
    std::cout << "stage " << to_string(stage) << ": " << result.steps.size() << " steps, final epoch loss "
              << std::setprecision(6) << result.final_loss << " -> " << ck_path.string() << std::endl;
  }
  return kOk;
}

// ------------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out = "metrics.json";
  std::string vocab;
  bool gt_stub = false;
};

int cmd_eval(const EvalArgs& a) {
  require_dir(a.data, "--data");
  if (a.checkpoint.empty() && !a.gt_stub) throw UsageError("eval needs --checkpoint (or --gt-stub)");

  MetricsReport report;
  ClassVocabulary vocab;
  if (a.gt_stub) {
    vocab = dataset_vocabulary(a.data, a.vocab, ClassVocabulary::second());
    report = evaluate(ground_truth_predictor, load_second_directory(a.data, vocab));
  } else {
    require_file(a.checkpoint, "--checkpoint");
    auto loaded = load_model(a.checkpoint);
    vocab = loaded.model->config().vocabulary;
    auto data_vocab = dataset_vocabulary(a.data, a.vocab, vocab);
    if (!(data_vocab == vocab)) throw Error(ErrorKind::CheckpointMismatch, "checkpoint vocabulary differs from dataset");
    auto manifest = load_second_directory(a.data, vocab);
    auto model = loaded.model;
    report = evaluate([&](const BiTemporalSample& s) { return predict_labels(model, s); }, manifest);
  }

  std::ofstream out(a.out, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + a.out);
  out << report.to_json(vocab).dump(2) << '\n';

  std::cout << std::fixed << std::setprecision(2) << "OA " << report.oa << "  F1 " << report.f1 << "  mIoU "
            << report.miou << "  SeK " << report.sek << "  (binary F1 " << report.binary_f1 << ", "
            << report.samples << " samples)\n";
  return kOk;
}

// ---------------------------------------------------------------------- predict

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::vector<std::string> ids;
  bool no_overlay = false;
  bool save_probs = false;
};

int cmd_predict(const PredictArgs& a) {
  require_dir(a.data, "--data");
  require_file(a.checkpoint, "--checkpoint");
  auto loaded = load_model(a.checkpoint);
  auto model = loaded.model;
  const auto& vocab = model->config().vocabulary;
  auto manifest = load_second_directory(a.data, vocab);
  auto ids = a.ids.empty() ? manifest.sample_ids : a.ids;
  for (const auto& id : ids)
    if (!manifest.contains(id)) throw UsageError("unknown sample id '" + id + "'");

  fs::create_directories(a.out);
  vocab.save(fs::path(a.out) / "vocabulary.json");
  for (const auto& id : ids) {
    auto sample = load_sample(manifest, id);
    torch::NoGradGuard guard;
    auto [i1, i2] = sample_images(sample);
    const auto h = i1.size(2), w = i1.size(3);
    auto [f1, f2] = model->encode(i1, i2);
    auto bcd = model->predict_bcd(f1, f2, h, w);
    auto scd = model->predict_scd(f1, f2, h, w);
    auto [pre, post] = combine_predictions(bcd.logits[0], scd.mask_pre.logits[0], scd.mask_post.logits[0]);
    auto binary = tensor_to_labels(bcd.binary()[0][0]);

    const fs::path base = fs::path(a.out) / id;
    write_binary_mask_png(base.string() + "_bcd.png", binary);
    png::write_gray(base.string() + "_sem1.png", pre);
    png::write_gray(base.string() + "_sem2.png", post);
    if (!a.no_overlay) write_overlay_png(base.string() + "_overlay.png", sample, pre, post, vocab);
    if (a.save_probs) write_npy(base.string() + "_bcd_prob.npy", bcd.probabilities()[0][0]);
  }
  std::cout << "wrote predictions for " << ids.size() << " sample(s) to " << a.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);

  CLI::App app{"Open-vocabulary semantic change detection"};
  app.require_subcommand(1);

  ToyDataArgs toy;
  auto* make = app.add_subcommand("make-toy-data", "Write a deterministic synthetic SECOND-layout dataset");
  make->add_option("--out", toy.out, "Output root")->required();
  make->add_option("--n", toy.n, "Number of samples")->check(CLI::PositiveNumber);
  make->add_option("--size", toy.size, "Image side length")->check(CLI::PositiveNumber);
  make->add_option("--seed", toy.seed, "Generator seed");
  make->add_option("--patch", toy.patch, "Grid the rectangles snap to")->check(CLI::PositiveNumber);
  make->add_option("--vocab", toy.vocab, "Vocabulary JSON")->check(CLI::ExistingFile);
  make->add_option("--manifest", toy.manifest, "Also export the manifest JSON here");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Run the BCD and/or SCD training stage");
  tr->add_option("--config", train.config, std::string("Run config JSON (default: $") + kConfigEnvVar + ")");
  tr->add_option("--set", train.overrides, "Config override key.path=value (repeatable)")->take_all();
  tr->add_option("--data", train.data, "SECOND-layout dataset root")->required();
  tr->add_option("--out", train.out, "Checkpoint directory")->required();
  tr->add_option("--stage", train.stage, "bcd, scd or both")->check(CLI::IsMember({"bcd", "scd", "both"}));
  tr->add_option("--steps", train.steps, "Cap optimizer steps per stage")->check(CLI::NonNegativeNumber);
  tr->add_option("--checkpoint", train.checkpoint, "BCD checkpoint to start the SCD stage from");
  tr->add_option("--log", train.log, "JSON-lines log path (default <out>/train_log.jsonl)");
  tr->add_flag("--baseline", train.baseline, "Zero cost volume (no-prompter ablation)");

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "Compute OA, F1, mIoU and SeK and write metrics.json");
  evc->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint");
  evc->add_option("--data", ev.data, "SECOND-layout dataset root")->required();
  evc->add_option("--out", ev.out, "metrics.json path");
  evc->add_option("--vocab", ev.vocab, "Vocabulary JSON (default <data>/vocabulary.json)")->check(CLI::ExistingFile);
  evc->add_flag("--gt-stub", ev.gt_stub, "Evaluate a stub that echoes the ground truth");

  PredictArgs pr;
  auto* prc = app.add_subcommand("predict", "Write change masks, semantic maps and overlays");
  prc->add_option("--checkpoint", pr.checkpoint, "Trained checkpoint")->required();
  prc->add_option("--data", pr.data, "SECOND-layout dataset root")->required();
  prc->add_option("--out", pr.out, "Output directory")->required();
  prc->add_option("--id", pr.ids, "Sample id (repeatable; default all)")->take_all();
  prc->add_flag("--no-overlay", pr.no_overlay, "Skip the side-by-side figure");
  prc->add_flag("--save-probs", pr.save_probs, "Also write BCD probabilities as .npy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (make->parsed()) return cmd_make_toy_data(toy);
    if (tr->parsed()) return cmd_train(train);
    if (evc->parsed()) return cmd_eval(ev);
    if (prc->parsed()) return cmd_predict(pr);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
