#include <algorithm>
#include <numeric>

#include "msgnet/detect.hpp"

namespace msgnet {

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh,
                           double conf_thresh) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= conf_thresh) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const auto& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && k.image_id == d.image_id && iou(k.box, d.box) > iou_thresh;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<GroundTruth>& gts, std::size_t class_id,
                         double iou_thresh) {
  struct Ranked {
    double confidence;
    std::size_t image;
    const Box* box;
  };
  std::vector<Ranked> ranked;
  for (std::size_t img = 0; img < dets.size(); ++img)
    for (const auto& d : dets[img])
      if (d.class_id == class_id) ranked.push_back({d.confidence, img, &d.box});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.confidence > b.confidence; });

  std::size_t num_gt = 0;
  std::vector<std::vector<bool>> matched(gts.size());
  for (std::size_t img = 0; img < gts.size(); ++img) {
    matched[img].assign(gts[img].boxes.size(), false);
    num_gt += std::count(gts[img].classes.begin(), gts[img].classes.end(), class_id);
  }
  if (num_gt == 0) return 0.0;

  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (const auto& r : ranked) {
    double best = -1.0;
    std::size_t best_j = 0;
    if (r.image < gts.size()) {
      const auto& gt = gts[r.image];
      for (std::size_t j = 0; j < gt.boxes.size(); ++j) {
        if (gt.classes[j] != class_id || matched[r.image][j]) continue;
        const double o = iou(*r.box, gt.boxes[j]);
        if (o > best) {
          best = o;
          best_j = j;
        }
      }
    }
    if (best >= iou_thresh) {
      matched[r.image][best_j] = true;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double total = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) total += precision[it - recall.begin()];
  }
  return total / 101.0;
}

APReport evaluate(const std::vector<std::vector<Detection>>& dets,
                  const std::vector<GroundTruth>& gts, std::size_t num_classes) {
  APReport report;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassAP entry;
    entry.class_id = c;
    for (const auto& g : gts) entry.num_gt += std::count(g.classes.begin(), g.classes.end(), c);
    if (entry.num_gt > 0) {
      entry.ap50 = average_precision(dets, gts, c, 0.5);
      for (int i = 0; i < 10; ++i) entry.ap += average_precision(dets, gts, c, 0.5 + 0.05 * i);
      entry.ap /= 10.0;
    }
    report.per_class.push_back(entry);
  }
  std::size_t counted = 0;
  for (const auto& e : report.per_class) {
    if (e.num_gt == 0) continue;
    report.ap50 += e.ap50;
    report.ap += e.ap;
    ++counted;
  }
  if (counted > 0) {
    report.ap50 /= counted;
    report.ap /= counted;
  }
  return report;
}

}  // namespace msgnet
