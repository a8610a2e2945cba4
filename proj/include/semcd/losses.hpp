#pragma once

#include <torch/torch.h>

#include "semcd/error.hpp"

namespace semcd {

/// Mean binary cross-entropy on logits, in the stable form
/// max(x, 0) - x·y + log(1 + exp(-|x|)).
inline torch::Tensor bcd_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  require(logits.numel() == target.numel(), ErrorKind::ShapeMismatch, "logits and target differ in size");
  auto y = target.reshape(logits.sizes()).to(logits.dtype());
  require(((y == 0) | (y == 1)).all().item<bool>(), ErrorKind::NonBinaryTarget, "BCD target must be 0/1");
  auto per_pixel = torch::clamp_min(logits, 0) - logits * y + torch::log1p(torch::exp(-logits.abs()));
  return per_pixel.mean();
}

struct ScdLossResult {
  torch::Tensor loss;
  /// No pixel of either epoch carried a change label; loss is 0.
  bool all_ignored = false;
};

/// Softmax cross-entropy for one epoch averaged over pixels with label != 0.
/// Returns a zero scalar when every pixel is ignored.
inline torch::Tensor ignore_background_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                                     bool* empty = nullptr) {
  require(logits.dim() == 4 && labels.dim() == 3 && logits.size(0) == labels.size(0) &&
              logits.size(2) == labels.size(1) && logits.size(3) == labels.size(2),
          ErrorKind::ShapeMismatch, "SCD logits (B, C, H, W) and labels (B, H, W) disagree");
  auto lbl = labels.to(torch::kInt64);
  require((lbl >= 0).all().item<bool>() && (lbl < logits.size(1)).all().item<bool>(), ErrorKind::LabelOutOfRange,
          "SCD label outside [0, C)");
  auto log_probs = torch::log_softmax(logits, 1);
  auto picked = log_probs.gather(1, lbl.unsqueeze(1)).squeeze(1);
  auto keep = (lbl != 0).to(logits.dtype());
  auto count = keep.sum();
  const bool none = count.item<double>() == 0.0;
  if (empty) *empty = none;
  if (none) return (logits * 0).sum();
  return -(picked * keep).sum() / count;
}

/// Sum over the two epochs of the ignore-background cross-entropy.
inline ScdLossResult scd_loss(const torch::Tensor& logits_pre, const torch::Tensor& logits_post,
                              const torch::Tensor& labels_pre, const torch::Tensor& labels_post) {
  bool empty_pre = false, empty_post = false;
  auto l1 = ignore_background_cross_entropy(logits_pre, labels_pre, &empty_pre);
  auto l2 = ignore_background_cross_entropy(logits_post, labels_post, &empty_post);
  return {l1 + l2, empty_pre && empty_post};
}

}  // namespace semcd
