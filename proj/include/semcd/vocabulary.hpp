#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"

namespace semcd {

using Rgb8 = std::array<std::uint8_t, 3>;

inline constexpr std::string_view kNoChangeName = "no change";

/// Fixed fallback palette; index 0 is the no-change background.
inline Rgb8 default_class_color(std::size_t index) {
  static constexpr std::array<Rgb8, 12> kPalette{{
      {255, 255, 255},
      {0, 0, 255},
      {128, 128, 128},
      {0, 128, 0},
      {0, 255, 0},
      {128, 0, 0},
      {255, 0, 0},
      {255, 165, 0},
      {128, 0, 128},
      {0, 255, 255},
      {255, 255, 0},
      {255, 0, 255},
  }};
  if (index < kPalette.size()) return kPalette[index];
  // Deterministic spread for large vocabularies.
  auto h = static_cast<std::uint32_t>(index) * 2654435761u;
  return {static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
          static_cast<std::uint8_t>(h >> 8)};
}

inline std::string normalize_class_name(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

/// Ordered class set. Index order is the channel order of every cost volume
/// and semantic mask; index 0 is always the no-change sentinel.
class ClassVocabulary {
 public:
  static constexpr int no_change_index = 0;

  ClassVocabulary() = default;

  explicit ClassVocabulary(const std::vector<std::string>& names, std::vector<Rgb8> colors = {}) {
    std::set<std::string> seen;
    for (const auto& raw : names) {
      auto name = normalize_class_name(raw);
      require(!name.empty(), ErrorKind::InvalidVocabulary, "empty class name");
      require(seen.insert(name).second, ErrorKind::InvalidVocabulary, "duplicate class name '" + name + "'");
      names_.push_back(std::move(name));
    }
    require(names_.size() >= 2, ErrorKind::InvalidVocabulary, "vocabulary needs at least 2 classes");
    require(names_.front() == kNoChangeName, ErrorKind::InvalidVocabulary,
            "first class must be '" + std::string(kNoChangeName) + "'");
    require(colors.empty() || colors.size() == names_.size(), ErrorKind::InvalidVocabulary,
            "color list length differs from class list");
    if (colors.empty()) {
      for (std::size_t i = 0; i < names_.size(); ++i) colors.push_back(default_class_color(i));
    }
    colors_ = std::move(colors);
  }

  /// The SECOND land-cover classes plus the no-change background (C = 7).
  static ClassVocabulary second() {
    return ClassVocabulary(
        {"no change", "water", "ground", "low vegetation", "tree", "building", "playground"});
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const std::vector<Rgb8>& colors() const { return colors_; }
  const Rgb8& color(int index) const { return colors_.at(static_cast<std::size_t>(index)); }

  std::optional<int> index_of(std::string_view name) const {
    auto norm = normalize_class_name(name);
    auto it = std::find(names_.begin(), names_.end(), norm);
    if (it == names_.end()) return std::nullopt;
    return static_cast<int>(it - names_.begin());
  }

  bool operator==(const ClassVocabulary& other) const { return names_ == other.names_; }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < names_.size(); ++i) {
      arr.push_back({{"name", names_[i]}, {"color", {colors_[i][0], colors_[i][1], colors_[i][2]}}});
    }
    return arr;
  }

  /// Accepts a plain list of names or a list of {"name", "color"} objects.
  static ClassVocabulary from_json(const nlohmann::json& j) {
    require(j.is_array(), ErrorKind::InvalidVocabulary, "vocabulary must be a JSON list");
    std::vector<std::string> names;
    std::vector<Rgb8> colors;
    bool any_color = false;
    for (const auto& item : j) {
      if (item.is_string()) {
        names.push_back(item.get<std::string>());
        colors.push_back(default_class_color(names.size() - 1));
      } else if (item.is_object() && item.contains("name")) {
        names.push_back(item.at("name").get<std::string>());
        if (item.contains("color")) {
          const auto& c = item.at("color");
          require(c.is_array() && c.size() == 3, ErrorKind::InvalidVocabulary, "color must be [r, g, b]");
          colors.push_back({c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(), c[2].get<std::uint8_t>()});
          any_color = true;
        } else {
          colors.push_back(default_class_color(names.size() - 1));
        }
      } else {
        fail(ErrorKind::InvalidVocabulary, "vocabulary entries must be strings or {name, color} objects");
      }
    }
    return ClassVocabulary(names, any_color ? colors : std::vector<Rgb8>{});
  }

  static ClassVocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::IoError, "cannot open vocabulary file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::InvalidVocabulary, path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::IoError, "cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }

 private:
  std::vector<std::string> names_;
  std::vector<Rgb8> colors_;
};

}  // namespace semcd
