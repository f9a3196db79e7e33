#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdl/localization.hpp"

namespace kdl {

using BoxList = std::vector<BBox>;
// image id -> ground-truth / predicted boxes
using AnnotationSet = std::map<std::string, BoxList>;
using PredictionSet = std::map<std::string, BoxList>;

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  long long total() const { return tp + tn + fp + fn; }
};

struct ScoredLabel {
  double score = 0.0;  // probability of the positive class
  bool positive = false;
};

struct ClassificationReport {
  double accuracy = 0.0;
  std::optional<double> auc;  // undefined for single-class inputs
  double sensitivity = 0.0;
  double specificity = 0.0;
  double avg_precision = 0.0;  // macro over both classes
  double avg_recall = 0.0;
};

double iou(const BBox& a, const BBox& b);

// Full GT x pred cross product, nested iteration order (GT outer).
std::vector<double> iou_list(const BoxList& gt, const BoxList& pred);

// Sort descending, keep top |gt| entries, zero-pad to |gt|, mean.
double miou_image(const BoxList& gt, const BoxList& pred);

// Unweighted mean of miou_image over annotated images in sorted-id order;
// images missing from pred contribute empty prediction lists.
double miou_dataset(const AnnotationSet& ann, const PredictionSet& pred);

// Variant pooling kept entries across images before averaging; exposed for
// comparison, not used by the pipeline default.
double miou_dataset_pooled(const AnnotationSet& ann, const PredictionSet& pred);

ConfusionCounts confusion(const std::vector<bool>& predicted,
                          const std::vector<bool>& truth);

// AUC = P(score_pos > score_neg) + 0.5 P(equal), via midrank sums.
double roc_auc(const std::vector<ScoredLabel>& scored);

ClassificationReport classification_report(
    const std::vector<ScoredLabel>& scored, double threshold = 0.5);

}  // namespace kdl
