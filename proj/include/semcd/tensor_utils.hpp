#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "semcd/error.hpp"
#include "semcd/image.hpp"
#include "semcd/sha256.hpp"

namespace semcd {

/// (3, H, W) float tensor from an interleaved image.
inline torch::Tensor image_to_tensor(const Image& img) {
  auto t = torch::from_blob(const_cast<float*>(img.data.data()), {img.height, img.width, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).contiguous();
}

/// (H, W) int64 tensor of class indices.
inline torch::Tensor labels_to_tensor(const LabelMap& map) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(map.data.data()), {map.height, map.width}, torch::kUInt8);
  return t.to(torch::kInt64);
}

inline LabelMap tensor_to_labels(const torch::Tensor& t) {
  require(t.dim() == 2, ErrorKind::ShapeMismatch, "label tensor must be 2-D");
  auto c = t.to(torch::kInt64).contiguous();
  LabelMap map(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  auto acc = c.data_ptr<std::int64_t>();
  for (std::size_t i = 0; i < map.size(); ++i) map.data[i] = static_cast<std::uint8_t>(acc[i]);
  return map;
}

inline std::string tensor_sha256(const torch::Tensor& t) {
  auto c = t.detach().contiguous().cpu();
  Sha256 h;
  h.update(std::string(c.dtype().name()));
  for (auto s : c.sizes()) h.update(std::to_string(s) + ",");
  h.update({static_cast<const std::uint8_t*>(c.data_ptr()), static_cast<std::size_t>(c.nbytes())});
  return to_hex(h.finish());
}

/// Per-parameter SHA-256, keyed by the module-relative name.
inline std::map<std::string, std::string> parameter_hashes(const torch::nn::Module& module) {
  std::map<std::string, std::string> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) out[item.key()] = tensor_sha256(item.value());
  return out;
}

inline bool has_prefix(std::string_view name, std::string_view prefix) { return name.substr(0, prefix.size()) == prefix; }

inline bool has_any_prefix(std::string_view name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (has_prefix(name, p)) return true;
  return false;
}

inline bool all_finite(const torch::Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace semcd
