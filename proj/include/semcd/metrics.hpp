#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semcd/data.hpp"
#include "semcd/error.hpp"
#include "semcd/image.hpp"
#include "semcd/vocabulary.hpp"

namespace semcd {

/// C×C pixel counts, rows = ground truth, columns = prediction, index 0 =
/// no-change. Both epochs of every pair land in the same matrix.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 2)
      : c_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    require(num_classes >= 2, ErrorKind::InvalidArgument, "confusion matrix needs C >= 2");
  }

  int num_classes() const { return c_; }
  std::int64_t operator()(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * c_ + pred]; }
  std::int64_t& operator()(int gt, int pred) { return counts_[static_cast<std::size_t>(gt) * c_ + pred]; }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int i = 0; i < c_; ++i) s += (*this)(i, i);
    return s;
  }
  std::int64_t row_sum(int i) const {
    std::int64_t s = 0;
    for (int j = 0; j < c_; ++j) s += (*this)(i, j);
    return s;
  }
  std::int64_t col_sum(int j) const {
    std::int64_t s = 0;
    for (int i = 0; i < c_; ++i) s += (*this)(i, j);
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    require(other.c_ == c_, ErrorKind::ShapeMismatch, "merging confusion matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  /// Tallies one pixel per epoch. Maps must share a shape; values in [0, C).
  void accumulate(const LabelMap& pred_pre, const LabelMap& pred_post, const LabelMap& gt_pre, const LabelMap& gt_post) {
    require(pred_pre.same_shape(gt_pre) && pred_post.same_shape(gt_post) && gt_pre.same_shape(gt_post),
            ErrorKind::ShapeMismatch, "prediction and ground-truth maps differ in shape");
    tally(pred_pre, gt_pre);
    tally(pred_post, gt_post);
  }

 private:
  void tally(const LabelMap& pred, const LabelMap& gt) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const int g = gt.data[i], p = pred.data[i];
      require(g < c_ && p < c_, ErrorKind::LabelOutOfRange,
              "label " + std::to_string(std::max(g, p)) + " outside [0, " + std::to_string(c_) + ")");
      ++(*this)(g, p);
    }
  }

  int c_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix accumulate(ConfusionMatrix conf, const LabelMap& pred_pre, const LabelMap& pred_post,
                                  const LabelMap& gt_pre, const LabelMap& gt_post) {
  conf.accumulate(pred_pre, pred_post, gt_pre, gt_post);
  return conf;
}

namespace detail {
inline void require_nonempty(const ConfusionMatrix& conf) {
  require(conf.total() > 0, ErrorKind::EmptyMatrix, "confusion matrix is empty");
}
}  // namespace detail

/// Overall accuracy, %.
inline double compute_oa(const ConfusionMatrix& conf) {
  detail::require_nonempty(conf);
  return 100.0 * static_cast<double>(conf.trace()) / static_cast<double>(conf.total());
}

struct BinaryIoU {
  double no_change = 0.0;
  double change = 0.0;
};

/// IoU of the no-change region and of the changed region (all classes > 0
/// merged). An empty union counts as IoU 1.
inline BinaryIoU binary_iou(const ConfusionMatrix& conf) {
  const int c = conf.num_classes();
  const double q00 = static_cast<double>(conf(0, 0));
  const double union_nc = static_cast<double>(conf.row_sum(0) + conf.col_sum(0)) - q00;
  double tp = 0, fp = 0, fn = 0;
  for (int i = 1; i < c; ++i) {
    fn += static_cast<double>(conf(i, 0));
    fp += static_cast<double>(conf(0, i));
    for (int j = 1; j < c; ++j) tp += static_cast<double>(conf(i, j));
  }
  const double union_c = tp + fp + fn;
  return {union_nc == 0 ? 1.0 : q00 / union_nc, union_c == 0 ? 1.0 : tp / union_c};
}

/// Mean of the no-change and change IoU, %.
inline double compute_miou(const ConfusionMatrix& conf) {
  detail::require_nonempty(conf);
  auto iou = binary_iou(conf);
  return 100.0 * (iou.no_change + iou.change) / 2.0;
}

/// Separated kappa, %: Cohen's kappa on the matrix with the no-change /
/// no-change cell removed, scaled by exp(IoU_change - 1).
inline double compute_sek(const ConfusionMatrix& conf) {
  detail::require_nonempty(conf);
  const int c = conf.num_classes();
  ConfusionMatrix q = conf;
  q(0, 0) = 0;
  const double total = static_cast<double>(q.total());
  if (total == 0) return 0.0;
  const double rho = static_cast<double>(q.trace()) / total;
  double eta = 0;
  for (int k = 0; k < c; ++k) eta += static_cast<double>(q.row_sum(k)) * static_cast<double>(q.col_sum(k));
  eta /= total * total;
  const double kappa = (1.0 - eta) == 0.0 ? 0.0 : (rho - eta) / (1.0 - eta);
  return 100.0 * std::exp(binary_iou(conf).change - 1.0) * kappa;
}

/// Semantic F-score over changed pixels, %: a hit needs the right class.
inline double compute_fscd(const ConfusionMatrix& conf) {
  detail::require_nonempty(conf);
  const int c = conf.num_classes();
  double hits = 0, pred_changed = 0, gt_changed = 0;
  for (int i = 1; i < c; ++i) {
    hits += static_cast<double>(conf(i, i));
    pred_changed += static_cast<double>(conf.col_sum(i));
    gt_changed += static_cast<double>(conf.row_sum(i));
  }
  const double precision = pred_changed == 0 ? 0.0 : hits / pred_changed;
  const double recall = gt_changed == 0 ? 0.0 : hits / gt_changed;
  return precision + recall == 0 ? 0.0 : 100.0 * 2.0 * precision * recall / (precision + recall);
}

/// Binary change F1, %, treating every class > 0 as "changed".
inline double compute_binary_f1(const ConfusionMatrix& conf) {
  detail::require_nonempty(conf);
  const int c = conf.num_classes();
  double tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      const auto v = static_cast<double>(conf(i, j));
      if (i > 0 && j > 0) tp += v;
      if (i == 0 && j > 0) fp += v;
      if (i > 0 && j == 0) fn += v;
    }
  }
  return tp == 0 ? 0.0 : 100.0 * 2.0 * tp / (2.0 * tp + fp + fn);
}

struct MetricsReport {
  double oa = 0, f1 = 0, miou = 0, sek = 0;
  /// Supplementary; not part of metrics.json.
  double binary_f1 = 0;
  std::int64_t pixels = 0;  // image pixels per epoch, summed over pairs
  std::int64_t samples = 0;
  ConfusionMatrix confusion{2};

  static MetricsReport from_confusion(const ConfusionMatrix& conf, std::int64_t samples) {
    MetricsReport r;
    r.confusion = conf;
    r.oa = compute_oa(conf);
    r.f1 = compute_fscd(conf);
    r.miou = compute_miou(conf);
    r.sek = compute_sek(conf);
    r.binary_f1 = compute_binary_f1(conf);
    r.pixels = conf.total() / 2;
    r.samples = samples;
    return r;
  }

  /// Values rounded to two decimals for serialization only.
  nlohmann::json to_json(const ClassVocabulary& vocabulary) const {
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
    return {{"oa", round2(oa)},   {"f1", round2(f1)},          {"miou", round2(miou)},
            {"sek", round2(sek)}, {"pixels", pixels},          {"samples", samples},
            {"vocabulary", vocabulary.names()}};
  }
};

/// Evaluates any `predictor(sample) -> pair<LabelMap, LabelMap>` over the
/// manifest in order, accumulating one global confusion matrix.
template <typename Predictor>
MetricsReport evaluate(Predictor&& predictor, const DatasetManifest& manifest) {
  ConfusionMatrix conf(manifest.vocabulary.size());
  std::int64_t samples = 0;
  for (const auto& id : manifest.sample_ids) {
    auto sample = load_sample(manifest, id);
    auto [pred_pre, pred_post] = predictor(sample);
    conf.accumulate(pred_pre, pred_post, sample.label_pre, sample.label_post);
    ++samples;
  }
  return MetricsReport::from_confusion(conf, samples);
}

/// Test stubs: echo the ground truth, or predict no change everywhere.
inline std::pair<LabelMap, LabelMap> ground_truth_predictor(const BiTemporalSample& s) {
  return {s.label_pre, s.label_post};
}

inline std::pair<LabelMap, LabelMap> no_change_predictor(const BiTemporalSample& s) {
  return {LabelMap(s.label_pre.height, s.label_pre.width), LabelMap(s.label_post.height, s.label_post.width)};
}

}  // namespace semcd
