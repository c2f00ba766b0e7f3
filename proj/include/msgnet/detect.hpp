#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "msgnet/encoder.hpp"

namespace msgnet {

inline constexpr std::size_t kDflBins = 16;

// Axis-aligned box in image pixels, center format.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }
};

double iou(const Box& a, const Box& b);

struct CIoUTerms {
  double iou = 0.0;
  double rho2 = 0.0;
  double c2 = 0.0;
  double v = 0.0;
  double alpha = 0.0;
  double loss = 0.0;
};

CIoUTerms ciou_terms(const Box& pred, const Box& gt);
double ciou_loss(const Box& pred, const Box& gt);

// Two-bin interpolated cross-entropy of one side distribution (probabilities)
// against a target in bin units, 0 <= y <= 15.
double dfl_loss(std::span<const double> probs, double y);

// Numerically safe -[y log s(p) + (1-y) log(1-s(p))].
double bce_with_logits(double logit, double label);

// Differentiable losses.
// pred, gt: [P,4] corner boxes (x1,y1,x2,y2). Mean CIoU over rows.
template <typename T>
Tensor<T> ciou_loss(const Tensor<T>& pred, const Tensor<T>& gt);

// logits: [P,4*16] side-major bin logits; targets: [P,4] in bin units.
// Mean over the 4P side distributions.
template <typename T>
Tensor<T> dfl_loss(const Tensor<T>& logits, const Tensor<T>& targets);

// Elementwise BCE with logits summed and divided by `normalizer` (0 means
// the element count).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& labels, double normalizer = 0.0);

struct Detection {
  std::size_t image_id = 0;
  Box box;
  std::vector<double> class_probs;
  double confidence = 0.0;
  std::size_t class_id = 0;
};

struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<std::size_t> classes;
};

template <typename T>
struct LevelOutput {
  Tensor<T> box;  // [B, 4*16, H, W]
  Tensor<T> cls;  // [B, ncls, H, W]
};

template <typename T>
using HeadOutput = std::array<LevelOutput<T>, 3>;

// Decoupled head: per level a box branch and a class branch with separate
// weights, each conv3x3+relu twice then a 1x1 output conv.
template <typename T>
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(const std::array<std::size_t, 3>& channels, std::size_t num_classes,
                std::mt19937_64& rng, double class_prior = 0.01);

  HeadOutput<T> operator()(const FeaturePyramid<T>& features) const;

  std::size_t num_classes() const { return num_classes_; }
  ParamList<T> parameters() const;

 private:
  struct Branch {
    Conv2d<T> a, b, out;
    Tensor<T> operator()(const Tensor<T>& x) const { return out(relu(b(relu(a(x))))); }
  };
  std::size_t num_classes_ = 0;
  std::array<Branch, 3> box_;
  std::array<Branch, 3> cls_;
};

// Expected distance sum_i i * softmax(logits)_i of one side, in bins.
double expected_distance(std::span<const double> logits);

// Decodes every cell of every level into a detection (before NMS) and keeps
// those with confidence >= conf_thresh. Boxes are clamped to the image and
// have w, h >= 1.
template <typename T>
std::vector<std::vector<Detection>> decode_detections(const HeadOutput<T>& out,
                                                      std::size_t image_h, std::size_t image_w,
                                                      double conf_thresh = 0.25);

struct Assignment {
  std::size_t level = 0;
  std::size_t batch = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t gt_index = 0;
  Box box;
  std::size_t cls = 0;
};

// Level whose stride best matches sqrt(area): argmin |log2(sqrt(area) / (4 stride))|.
std::size_t assign_level(const Box& box);

// One target per cell: each GT goes to the cell containing its center at the
// level from assign_level; within a cell the larger area wins.
std::vector<Assignment> assign_targets(const std::vector<GroundTruth>& images,
                                       std::size_t image_h, std::size_t image_w);

struct LossWeights {
  double box = 1.0;
  double dfl = 1.0;
  double cls = 1.0;
};

template <typename T>
struct DetectionLoss {
  Tensor<T> total;
  double box = 0.0;
  double dfl = 0.0;
  double cls = 0.0;
  std::size_t positives = 0;
};

// CIoU and DFL averaged over positives, BCE averaged over every class logit of
// every level.
template <typename T>
DetectionLoss<T> detection_loss(const HeadOutput<T>& out, const std::vector<Assignment>& targets,
                                const LossWeights& weights = {});

// Greedy per-class suppression. Output is sorted by confidence, ties by input
// order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.65,
                           double conf_thresh = 0.25);

struct ClassAP {
  std::size_t class_id = 0;
  std::size_t num_gt = 0;
  double ap50 = 0.0;
  double ap = 0.0;
};

struct APReport {
  double ap50 = 0.0;
  double ap = 0.0;
  std::vector<ClassAP> per_class;
};

// 101-point interpolated AP of one class at one IoU threshold.
double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<GroundTruth>& gts, std::size_t class_id,
                         double iou_thresh);

// AP50 and AP@[.50:.05:.95], averaged over classes that have ground truth.
APReport evaluate(const std::vector<std::vector<Detection>>& dets,
                  const std::vector<GroundTruth>& gts, std::size_t num_classes);

}  // namespace msgnet
