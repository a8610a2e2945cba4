#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcd/error.hpp"
#include "semcd/image.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

namespace fs = std::filesystem;

inline constexpr std::array<std::string_view, 4> kSecondSubdirs{"im1", "im2", "label1", "label2"};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(ErrorKind::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

struct BiTemporalSample {
  Image image_pre;
  Image image_post;
  LabelMap label_pre;
  LabelMap label_post;
  LabelMap change_mask;
  std::string sample_id;
  /// Pixels where exactly one of the two label maps marks a change.
  std::size_t mask_disagreements = 0;

  int height() const { return image_pre.height; }
  int width() const { return image_pre.width; }
};

/// Binary change target: a pixel is changed when either epoch carries a
/// non-zero class.
inline LabelMap derive_change_mask(const LabelMap& label_pre, const LabelMap& label_post) {
  require(label_pre.same_shape(label_post), ErrorKind::ShapeMismatch,
          "label maps differ in shape: " + std::to_string(label_pre.height) + "x" + std::to_string(label_pre.width) +
              " vs " + std::to_string(label_post.height) + "x" + std::to_string(label_post.width));
  LabelMap mask(label_pre.height, label_pre.width);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask.data[i] = (label_pre.data[i] != 0 || label_post.data[i] != 0) ? 1 : 0;
  }
  return mask;
}

inline std::size_t count_mask_disagreements(const LabelMap& label_pre, const LabelMap& label_post) {
  require(label_pre.same_shape(label_post), ErrorKind::ShapeMismatch, "label maps differ in shape");
  std::size_t n = 0;
  for (std::size_t i = 0; i < label_pre.size(); ++i) n += (label_pre.data[i] != 0) != (label_post.data[i] != 0);
  return n;
}

struct IncompleteSample {
  std::string id;
  std::vector<std::string> missing;  // subdirectories lacking the file
};

struct DatasetManifest {
  fs::path root;
  std::vector<std::string> sample_ids;  // sorted
  ClassVocabulary vocabulary;
  Split split = Split::train;
  std::vector<IncompleteSample> incomplete;

  std::size_t size() const { return sample_ids.size(); }
  bool contains(const std::string& id) const {
    return std::binary_search(sample_ids.begin(), sample_ids.end(), id);
  }

  fs::path file(std::string_view subdir, const std::string& id) const { return root / subdir / (id + ".png"); }

  nlohmann::json to_json() const {
    return {{"root", root.string()},
            {"split", to_string(split)},
            {"vocabulary", vocabulary.names()},
            {"sample_ids", sample_ids}};
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.split = parse_split(j.at("split").get<std::string>());
    m.vocabulary = ClassVocabulary::from_json(j.at("vocabulary"));
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    std::sort(m.sample_ids.begin(), m.sample_ids.end());
    return m;
  }
};

namespace detail {

inline void check_label_range(const LabelMap& map, int num_classes, const fs::path& file) {
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map.data[i] >= num_classes) {
      fail(ErrorKind::LabelOutOfRange, file.string() + ": pixel " + std::to_string(i) + " has value " +
                                           std::to_string(map.data[i]) + " >= C=" + std::to_string(num_classes));
    }
  }
}

inline std::set<std::string> png_stems(const fs::path& dir) {
  std::set<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") stems.insert(entry.path().stem().string());
  }
  return stems;
}

}  // namespace detail

/// Indexes a SECOND-layout root (`im1/ im2/ label1/ label2/`). Samples missing
/// any of the four files are listed in `incomplete` rather than failing.
inline DatasetManifest load_second_directory(const fs::path& root, const ClassVocabulary& vocabulary,
                                             Split split = Split::train) {
  std::array<std::set<std::string>, 4> stems;
  for (std::size_t k = 0; k < kSecondSubdirs.size(); ++k) {
    auto dir = root / kSecondSubdirs[k];
    require(fs::is_directory(dir), ErrorKind::MissingDirectory, dir.string() + " does not exist");
    stems[k] = detail::png_stems(dir);
  }

  std::set<std::string> all;
  for (const auto& s : stems) all.insert(s.begin(), s.end());

  DatasetManifest manifest;
  manifest.root = root;
  manifest.vocabulary = vocabulary;
  manifest.split = split;
  for (const auto& id : all) {
    std::vector<std::string> missing;
    for (std::size_t k = 0; k < stems.size(); ++k) {
      if (!stems[k].contains(id)) missing.emplace_back(kSecondSubdirs[k]);
    }
    if (missing.empty()) {
      manifest.sample_ids.push_back(id);
    } else {
      manifest.incomplete.push_back({id, std::move(missing)});
    }
  }
  require(!manifest.sample_ids.empty(), ErrorKind::EmptyDataset, "no complete samples under " + root.string());

  for (const auto& id : manifest.sample_ids) {
    for (auto sub : {"label1", "label2"}) {
      auto file = manifest.file(sub, id);
      detail::check_label_range(png::read_gray(file), vocabulary.size(), file);
    }
  }
  return manifest;
}

/// Reentrant: touches only the four files of `id`.
inline BiTemporalSample load_sample(const DatasetManifest& manifest, const std::string& id) {
  require(manifest.contains(id), ErrorKind::InvalidArgument, "sample '" + id + "' is not in the manifest");
  BiTemporalSample s;
  s.sample_id = id;
  s.image_pre = png::read_rgb(manifest.file("im1", id));
  s.image_post = png::read_rgb(manifest.file("im2", id));
  s.label_pre = png::read_gray(manifest.file("label1", id));
  s.label_post = png::read_gray(manifest.file("label2", id));

  const int h = s.image_pre.height, w = s.image_pre.width;
  auto same = [&](int hh, int ww) { return hh == h && ww == w; };
  require(same(s.image_post.height, s.image_post.width) && same(s.label_pre.height, s.label_pre.width) &&
              same(s.label_post.height, s.label_post.width),
          ErrorKind::ShapeMismatch, "sample '" + id + "': im1/im2/label1/label2 disagree spatially");

  detail::check_label_range(s.label_pre, manifest.vocabulary.size(), manifest.file("label1", id));
  detail::check_label_range(s.label_post, manifest.vocabulary.size(), manifest.file("label2", id));
  s.change_mask = derive_change_mask(s.label_pre, s.label_post);
  s.mask_disagreements = count_mask_disagreements(s.label_pre, s.label_post);
  return s;
}

}  // namespace semcd
