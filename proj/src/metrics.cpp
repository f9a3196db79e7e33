#include "kdl/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace kdl {

double iou(const BBox& a, const BBox& b) {
  a.validate();
  b.validate();
  long long ix = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  long long iy = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  long long inter = ix * iy;
  long long uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> iou_list(const BoxList& gt, const BoxList& pred) {
  std::vector<double> out;
  out.reserve(gt.size() * pred.size());
  for (const auto& g : gt)
    for (const auto& p : pred) out.push_back(iou(g, p));
  return out;
}

double miou_image(const BoxList& gt, const BoxList& pred) {
  if (gt.empty())
    throw ValidationError("miou_image requires at least one GT box");
  std::vector<double> ious = iou_list(gt, pred);
  std::sort(ious.begin(), ious.end(), std::greater<double>());
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size() && i < ious.size(); ++i) sum += ious[i];
  // missing entries pad with zero
  return sum / static_cast<double>(gt.size());
}

double miou_dataset(const AnnotationSet& ann, const PredictionSet& pred) {
  if (ann.empty()) throw ValidationError("empty annotation set");
  double sum = 0.0;
  for (const auto& [id, gt] : ann) {  // std::map iterates in sorted-id order
    auto it = pred.find(id);
    sum += miou_image(gt, it == pred.end() ? BoxList{} : it->second);
  }
  return sum / static_cast<double>(ann.size());
}

double miou_dataset_pooled(const AnnotationSet& ann,
                           const PredictionSet& pred) {
  if (ann.empty()) throw ValidationError("empty annotation set");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [id, gt] : ann) {
    if (gt.empty())
      throw ValidationError("annotated image without GT boxes: " + id);
    auto it = pred.find(id);
    std::vector<double> ious =
        iou_list(gt, it == pred.end() ? BoxList{} : it->second);
    std::sort(ious.begin(), ious.end(), std::greater<double>());
    for (std::size_t i = 0; i < gt.size(); ++i)
      sum += i < ious.size() ? ious[i] : 0.0;
    count += gt.size();
  }
  return sum / static_cast<double>(count);
}

ConfusionCounts confusion(const std::vector<bool>& predicted,
                          const std::vector<bool>& truth) {
  if (predicted.size() != truth.size() || predicted.empty())
    throw ValidationError("confusion: label vectors must be equal, non-empty");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i])
      predicted[i] ? ++c.tp : ++c.fn;
    else
      predicted[i] ? ++c.fp : ++c.tn;
  }
  return c;
}

double roc_auc(const std::vector<ScoredLabel>& scored) {
  long long pos = 0, neg = 0;
  for (const auto& s : scored) (s.positive ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw ValidationError("AUC undefined for single-class input");

  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].score < scored[b].score;
  });

  // twice the midrank of each tie group is (first_rank + last_rank), an
  // integer, so the numerator stays in exact integer arithmetic
  long long twice_pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() &&
           scored[order[j]].score == scored[order[i]].score)
      ++j;
    long long twice_midrank = static_cast<long long>(i + 1) +
                              static_cast<long long>(j);  // 1-based ranks
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].positive) twice_pos_rank_sum += twice_midrank;
    i = j;
  }
  long long num = twice_pos_rank_sum - pos * (pos + 1);
  long long den = 2 * pos * neg;
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassificationReport classification_report(
    const std::vector<ScoredLabel>& scored, double threshold) {
  if (scored.empty()) throw ValidationError("empty score list");
  if (threshold < 0.0 || threshold > 1.0)
    throw ValidationError("threshold must lie in [0,1]");

  std::vector<bool> pred(scored.size()), truth(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    pred[i] = scored[i].score >= threshold;
    truth[i] = scored[i].positive;
  }
  ConfusionCounts c = confusion(pred, truth);

  auto ratio = [](long long a, long long b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };

  ClassificationReport r;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.sensitivity = ratio(c.tp, c.tp + c.fn);
  r.specificity = ratio(c.tn, c.tn + c.fp);
  double prec_pos = ratio(c.tp, c.tp + c.fp);
  double prec_neg = ratio(c.tn, c.tn + c.fn);
  r.avg_precision = 0.5 * (prec_pos + prec_neg);
  r.avg_recall = 0.5 * (r.sensitivity + r.specificity);
  try {
    r.auc = roc_auc(scored);
  } catch (const ValidationError&) {
    r.auc.reset();
  }
  return r;
}

}  // namespace kdl
