#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "msgnet/detect.hpp"

namespace msgnet {

template <typename T>
DetectionHead<T>::DetectionHead(const std::array<std::size_t, 3>& channels,
                                std::size_t num_classes, std::mt19937_64& rng, double class_prior)
    : num_classes_(num_classes) {
  const T prior_bias = static_cast<T>(std::log(class_prior / (1.0 - class_prior)));
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t c = channels[l];
    box_[l] = {Conv2d<T>(c, c, 3, 1, rng), Conv2d<T>(c, c, 3, 1, rng),
               Conv2d<T>(c, 4 * kDflBins, 1, 1, rng)};
    cls_[l] = {Conv2d<T>(c, c, 3, 1, rng), Conv2d<T>(c, c, 3, 1, rng),
               Conv2d<T>(c, num_classes, 1, 1, rng)};
    for (auto& b : cls_[l].out.bias().mutable_data()) b = prior_bias;
  }
}

template <typename T>
HeadOutput<T> DetectionHead<T>::operator()(const FeaturePyramid<T>& features) const {
  HeadOutput<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    out[l].box = box_[l](features[l]);
    out[l].cls = cls_[l](features[l]);
  }
  return out;
}

template <typename T>
ParamList<T> DetectionHead<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto lv = std::to_string(l);
    for (const auto* br : {&box_[l], &cls_[l]}) {
      const std::string prefix = (br == &box_[l] ? "box" : "cls") + lv + ".";
      append_params(out, prefix + "a.", br->a.parameters());
      append_params(out, prefix + "b.", br->b.parameters());
      append_params(out, prefix + "out.", br->out.parameters());
    }
  }
  return out;
}

double expected_distance(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double norm = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double e = std::exp(logits[i] - mx);
    norm += e;
    acc += e * static_cast<double>(i);
  }
  return acc / norm;
}

namespace {

double sigmoid_scalar(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Clamps corners into the image and widens degenerate extents to one pixel.
Box clamp_box(double x1, double y1, double x2, double y2, double width, double height) {
  auto fit = [](double lo, double hi, double limit, double& c, double& e) {
    lo = std::clamp(lo, 0.0, limit);
    hi = std::clamp(hi, 0.0, limit);
    e = std::max(hi - lo, 1.0);
    c = std::clamp(0.5 * (lo + hi), 0.5 * e, limit - 0.5 * e);
  };
  Box b;
  fit(x1, x2, width, b.cx, b.w);
  fit(y1, y2, height, b.cy, b.h);
  return b;
}

}  // namespace

template <typename T>
std::vector<std::vector<Detection>> decode_detections(const HeadOutput<T>& out,
                                                      std::size_t image_h, std::size_t image_w,
                                                      double conf_thresh) {
  const std::size_t batch = out[0].cls.dim(0);
  const std::size_t ncls = out[0].cls.dim(1);
  std::vector<std::vector<Detection>> result(batch);
  std::vector<double> probs(ncls), side(kDflBins);
  for (std::size_t l = 0; l < 3; ++l) {
    const double stride = static_cast<double>(kPyramidStrides[l]);
    const auto& cls = out[l].cls;
    const auto& box = out[l].box;
    const std::size_t h = cls.dim(2), w = cls.dim(3), hw = h * w;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t cell = r * w + c;
          std::size_t best = 0;
          for (std::size_t k = 0; k < ncls; ++k) {
            probs[k] = sigmoid_scalar(cls[(b * ncls + k) * hw + cell]);
            if (probs[k] > probs[best]) best = k;
          }
          if (probs[best] < conf_thresh) continue;
          double dist[4];
          for (std::size_t s = 0; s < 4; ++s) {
            for (std::size_t i = 0; i < kDflBins; ++i) {
              side[i] = box[(b * 4 * kDflBins + s * kDflBins + i) * hw + cell];
            }
            dist[s] = expected_distance(side) * stride;
          }
          const double ax = (c + 0.5) * stride, ay = (r + 0.5) * stride;
          Detection d;
          d.image_id = b;
          d.box = clamp_box(ax - dist[0], ay - dist[1], ax + dist[2], ay + dist[3],
                            static_cast<double>(image_w), static_cast<double>(image_h));
          d.class_probs = probs;
          d.confidence = probs[best];
          d.class_id = best;
          result[b].push_back(std::move(d));
        }
      }
    }
  }
  return result;
}

std::size_t assign_level(const Box& box) {
  const double size = std::sqrt(box.area());
  std::size_t best = 0;
  double best_gap = 0.0;
  for (std::size_t l = 0; l < kPyramidStrides.size(); ++l) {
    const double gap = std::abs(std::log2(size / (4.0 * kPyramidStrides[l])));
    if (l == 0 || gap < best_gap) {
      best = l;
      best_gap = gap;
    }
  }
  return best;
}

std::vector<Assignment> assign_targets(const std::vector<GroundTruth>& images,
                                       std::size_t image_h, std::size_t image_w) {
  std::vector<Assignment> out;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, std::size_t> taken;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& gt = images[b];
    if (gt.boxes.size() != gt.classes.size()) {
      throw std::invalid_argument("assign_targets: boxes and classes differ in length");
    }
    for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
      const Box& box = gt.boxes[i];
      Assignment a;
      a.level = assign_level(box);
      const std::size_t stride = kPyramidStrides[a.level];
      const std::size_t gh = image_h / stride, gw = image_w / stride;
      auto cell = [](double v, std::size_t s, std::size_t n) {
        const double f = std::floor(v / static_cast<double>(s));
        return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(n - 1)));
      };
      a.batch = b;
      a.row = cell(box.cy, stride, gh);
      a.col = cell(box.cx, stride, gw);
      a.gt_index = i;
      a.box = box;
      a.cls = gt.classes[i];
      const auto key = std::make_tuple(b, a.level, a.row, a.col);
      auto it = taken.find(key);
      if (it == taken.end()) {
        taken.emplace(key, out.size());
        out.push_back(a);
      } else if (box.area() > out[it->second].box.area()) {
        out[it->second] = a;
      }
    }
  }
  return out;
}

template <typename T>
DetectionLoss<T> detection_loss(const HeadOutput<T>& out, const std::vector<Assignment>& targets,
                                const LossWeights& weights) {
  const std::size_t batch = out[0].cls.dim(0);
  const std::size_t ncls = out[0].cls.dim(1);
  double cells = 0.0;
  for (const auto& lv : out) cells += static_cast<double>(lv.cls.numel());

  std::vector<T> bins(kDflBins);
  for (std::size_t i = 0; i < kDflBins; ++i) bins[i] = static_cast<T>(i);
  const Tensor<T> bin_values({kDflBins, 1}, bins);

  DetectionLoss<T> loss;
  std::vector<Tensor<T>> pred_boxes, box_logits;
  std::vector<T> gt_corners, dfl_targets;
  Tensor<T> cls_total;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& cls = out[l].cls;
    const std::size_t h = cls.dim(2), w = cls.dim(3);
    const T stride = static_cast<T>(kPyramidStrides[l]);
    std::vector<T> labels(cls.numel(), T(0));
    std::vector<CellIndex> cells_l;
    std::vector<T> anchors, signs;
    for (const auto& a : targets) {
      if (a.level != l) continue;
      if (a.batch >= batch || a.cls >= ncls || a.row >= h || a.col >= w) {
        throw std::invalid_argument("detection_loss: assignment outside the head output");
      }
      labels[((a.batch * ncls + a.cls) * h + a.row) * w + a.col] = T(1);
      cells_l.push_back({a.batch, a.row, a.col});
      const T ax = (static_cast<T>(a.col) + T(0.5)) * stride;
      const T ay = (static_cast<T>(a.row) + T(0.5)) * stride;
      anchors.insert(anchors.end(), {ax, ay, ax, ay});
      signs.insert(signs.end(), {-stride, -stride, stride, stride});
      const double top = static_cast<double>(kDflBins - 1);
      const double s = static_cast<double>(stride);
      for (double d : {(ax - a.box.x1()) / s, (ay - a.box.y1()) / s, (a.box.x2() - ax) / s,
                       (a.box.y2() - ay) / s}) {
        dfl_targets.push_back(static_cast<T>(std::clamp(d, 0.0, top)));
      }
      gt_corners.insert(gt_corners.end(),
                        {static_cast<T>(a.box.x1()), static_cast<T>(a.box.y1()),
                         static_cast<T>(a.box.x2()), static_cast<T>(a.box.y2())});
    }
    auto bce = bce_loss(cls, Tensor<T>(cls.shape(), std::move(labels)), cells);
    cls_total = l == 0 ? bce : add(cls_total, bce);
    if (cells_l.empty()) continue;
    const std::size_t p = cells_l.size();
    auto logits = gather_cells(out[l].box, cells_l);
    auto probs = softmax(reshape(logits, {p * 4, kDflBins}), 1);
    auto dist = reshape(matmul(probs, bin_values), {p, 4});
    auto corners = add(Tensor<T>({p, 4}, std::move(anchors)),
                       mul(dist, Tensor<T>({p, 4}, std::move(signs))));
    pred_boxes.push_back(corners);
    box_logits.push_back(logits);
  }
  loss.cls = static_cast<double>(cls_total.item());
  loss.total = scale(cls_total, static_cast<T>(weights.cls));
  loss.positives = gt_corners.size() / 4;
  if (loss.positives > 0) {
    auto pred = pred_boxes.size() == 1 ? pred_boxes.front() : concat(pred_boxes, 0);
    auto logits = box_logits.size() == 1 ? box_logits.front() : concat(box_logits, 0);
    auto box = ciou_loss(pred, Tensor<T>({loss.positives, 4}, std::move(gt_corners)));
    auto dfl = dfl_loss(logits, Tensor<T>({loss.positives, 4}, std::move(dfl_targets)));
    loss.box = static_cast<double>(box.item());
    loss.dfl = static_cast<double>(dfl.item());
    loss.total = add(loss.total, add(scale(box, static_cast<T>(weights.box)),
                                     scale(dfl, static_cast<T>(weights.dfl))));
  }
  return loss;
}

template class DetectionHead<float>;
template class DetectionHead<double>;
template std::vector<std::vector<Detection>> decode_detections(const HeadOutput<float>&,
                                                               std::size_t, std::size_t, double);
template std::vector<std::vector<Detection>> decode_detections(const HeadOutput<double>&,
                                                               std::size_t, std::size_t, double);
template DetectionLoss<float> detection_loss(const HeadOutput<float>&,
                                             const std::vector<Assignment>&, const LossWeights&);
template DetectionLoss<double> detection_loss(const HeadOutput<double>&,
                                              const std::vector<Assignment>&, const LossWeights&);

}  // namespace msgnet
