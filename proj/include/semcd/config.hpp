#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"
#include "semcd/model.hpp"
#include "semcd/training.hpp"

namespace semcd {

inline constexpr const char* kConfigEnvVar = "SEMCD_CONFIG";

/// Applies `key.path=value` overrides. Values parse as JSON when possible
/// (numbers, booleans, lists) and fall back to plain strings.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::ConfigError, "override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  std::string pointer;
  std::size_t pos = 0;
  while (pos <= key.size()) {
    auto dot = key.find('.', pos);
    auto part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    require(!part.empty(), ErrorKind::ConfigError, "override key '" + key + "' has an empty component");
    pointer += "/" + part;
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  j[nlohmann::json::json_pointer(pointer)] = value;
}

/// Everything a CLI run needs: model architecture, the two stage specs and a
/// global seed stamped into each artifact.
struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  StageSpec bcd = StageSpec::toy(Stage::bcd);
  StageSpec scd = StageSpec::toy(Stage::scd);
  std::uint64_t seed = 7;
  nlohmann::json source = nlohmann::json::object();

  Scale scale() const { return model.scale; }
  const StageSpec& stage(Stage s) const { return s == Stage::bcd ? bcd : scd; }

  /// A top-level "seed" seeds model init and both stages unless a section
  /// sets its own.
  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.source = j;
    auto model_json = j.value("model", nlohmann::json::object());
    if (j.contains("scale") && !model_json.contains("scale")) model_json["scale"] = j["scale"];
    const bool full_scale = model_json.value("scale", std::string("toy")) == "full";
    c.seed = j.value("seed", std::uint64_t{7});
    if (!model_json.contains("seed")) model_json["seed"] = c.seed;
    if (j.contains("vocabulary") && !model_json.contains("vocabulary")) model_json["vocabulary"] = j["vocabulary"];
    c.model = ModelConfig::from_json(model_json);

    auto stages = j.value("stages", nlohmann::json::object());
    for (auto stage : {Stage::bcd, Stage::scd}) {
      auto defaults = full_scale ? StageSpec::full(stage) : StageSpec::toy(stage);
      defaults.seed = c.seed;
      auto section = stages.value(to_string(stage), nlohmann::json::object());
      section["stage"] = to_string(stage);
      (stage == Stage::bcd ? c.bcd : c.scd) = StageSpec::from_json(section, defaults);
    }
    return c;
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"model", model.to_json()},
            {"stages", {{"bcd", bcd.to_json()}, {"scd", scd.to_json()}}}};
  }

  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    nlohmann::json j = nlohmann::json::object();
    if (!path.empty()) {
      std::ifstream in(path);
      require(in.good(), ErrorKind::ConfigError, "cannot open config " + path.string());
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ConfigError, path.string() + ": " + e.what());
      }
    }
    for (const auto& o : overrides) apply_override(j, o);
    try {
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ConfigError, std::string("invalid config value: ") + e.what());
    }
  }
};

/// Config path from the flag, else the SEMCD_CONFIG environment variable,
/// else none (built-in toy defaults).
inline std::filesystem::path resolve_config_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return env;
  return {};
}

}  // namespace semcd
