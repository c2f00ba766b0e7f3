#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dual.hpp"
#include "msgnet/detect.hpp"

namespace msgnet {

namespace {

// Pred corners are the free variables; S is double or a dual number.
template <typename S>
S ciou_generic(const S& px1, const S& py1, const S& px2, const S& py2, const Box& gt,
               CIoUTerms* terms) {
  using std::atan;
  using std::max;
  using std::min;
  const S zero(0.0), one(1.0), half(0.5);
  const S gx1(gt.x1()), gy1(gt.y1()), gx2(gt.x2()), gy2(gt.y2());
  const S pw = px2 - px1, ph = py2 - py1;
  const S gw = gx2 - gx1, gh = gy2 - gy1;
  const S iw = max(zero, S(min(px2, gx2) - max(px1, gx1)));
  const S ih = max(zero, S(min(py2, gy2) - max(py1, gy1)));
  const S inter = iw * ih;
  const S uni = pw * ph + gw * gh - inter;
  const S overlap = inter / uni;
  const S cw = max(px2, gx2) - min(px1, gx1);
  const S ch = max(py2, gy2) - min(py1, gy1);
  const S c2 = cw * cw + ch * ch;
  const S dx = (px1 + px2 - gx1 - gx2) * half;
  const S dy = (py1 + py2 - gy1 - gy2) * half;
  const S rho2 = dx * dx + dy * dy;
  const S guard(1e-9);
  const S dv = atan(S(gw / max(gh, guard))) - atan(S(pw / max(ph, guard)));
  const S v = S(4.0 / (std::numbers::pi * std::numbers::pi)) * dv * dv;
  const S alpha = v / ((one - overlap) + v + S(1e-7));
  const S loss = one - overlap + rho2 / c2 + alpha * v;
  if (terms) {
    using detail::value;
    terms->iou = value(overlap);
    terms->rho2 = value(rho2);
    terms->c2 = value(c2);
    terms->v = value(v);
    terms->alpha = value(alpha);
    terms->loss = value(loss);
  }
  return loss;
}

struct SideTarget {
  std::size_t lo = 0;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

SideTarget split_target(double y) {
  const double top = static_cast<double>(kDflBins - 1);
  if (!(y >= 0.0 && y <= top)) {
    throw std::invalid_argument("dfl target " + std::to_string(y) + " outside [0, 15]");
  }
  SideTarget t;
  t.lo = static_cast<std::size_t>(std::floor(y));
  if (t.lo >= kDflBins - 1) {
    t.lo = kDflBins - 1;
    return t;  // point mass on the last bin
  }
  t.w_lo = static_cast<double>(t.lo + 1) - y;
  t.w_hi = y - static_cast<double>(t.lo);
  return t;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

CIoUTerms ciou_terms(const Box& pred, const Box& gt) {
  CIoUTerms t;
  ciou_generic(pred.x1(), pred.y1(), pred.x2(), pred.y2(), gt, &t);
  return t;
}

double ciou_loss(const Box& pred, const Box& gt) { return ciou_terms(pred, gt).loss; }

double dfl_loss(std::span<const double> probs, double y) {
  if (probs.size() != kDflBins) {
    throw std::invalid_argument("dfl_loss: expected 16 bin probabilities, got " +
                                std::to_string(probs.size()));
  }
  const auto t = split_target(y);
  double loss = -t.w_lo * std::log(probs[t.lo]);
  if (t.w_hi > 0.0) loss -= t.w_hi * std::log(probs[t.lo + 1]);
  return loss;
}

double bce_with_logits(double logit, double label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

template <typename T>
Tensor<T> ciou_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != gt.shape()) {
    throw ShapeError("ciou_loss: expected matching [P,4] boxes, got " + shape_str(pred.shape()) +
                     " and " + shape_str(gt.shape()));
  }
  using D = detail::Dual<4>;
  const std::size_t rows = pred.dim(0);
  std::vector<T> grad(rows * 4);
  double total = 0.0;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Box gt_box = Box::from_corners(g[4 * r], g[4 * r + 1], g[4 * r + 2], g[4 * r + 3]);
    const D loss = ciou_generic(D::variable(p[4 * r], 0), D::variable(p[4 * r + 1], 1),
                                D::variable(p[4 * r + 2], 2), D::variable(p[4 * r + 3], 3),
                                gt_box, nullptr);
    total += loss.v;
    for (std::size_t i = 0; i < 4; ++i) grad[4 * r + i] = static_cast<T>(loss.d[i] / rows);
  }
  auto out = detail::make_result<T>(Shape{1}, {static_cast<T>(total / rows)}, {&pred});
  if (out.requires_grad()) {
    Tape<T>::current().record(out.node(), [pn = pred.node(), on = out.node(),
                                           grad = std::move(grad)] {
      const T up = on->grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) pn->grad[i] += up * grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> dfl_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.rank() != 2 || logits.dim(1) != 4 * kDflBins || targets.rank() != 2 ||
      targets.dim(1) != 4 || targets.dim(0) != logits.dim(0)) {
    throw ShapeError("dfl_loss: expected [P,64] logits and [P,4] targets, got " +
                     shape_str(logits.shape()) + " and " + shape_str(targets.shape()));
  }
  const std::size_t sides = logits.dim(0) * 4;
  std::vector<T> grad(logits.numel());
  double total = 0.0;
  const auto z = logits.data();
  for (std::size_t s = 0; s < sides; ++s) {
    const T* row = z.data() + s * kDflBins;
    const auto t = split_target(static_cast<double>(targets.data()[s]));
    const T mx = *std::max_element(row, row + kDflBins);
    double norm = 0.0;
    for (std::size_t i = 0; i < kDflBins; ++i) norm += std::exp(static_cast<double>(row[i] - mx));
    const double log_norm = std::log(norm) + static_cast<double>(mx);
    total -= t.w_lo * (row[t.lo] - log_norm);
    if (t.w_hi > 0.0) total -= t.w_hi * (row[t.lo + 1] - log_norm);
    T* gr = grad.data() + s * kDflBins;
    for (std::size_t i = 0; i < kDflBins; ++i) {
      gr[i] = static_cast<T>(std::exp(static_cast<double>(row[i]) - log_norm) / sides);
    }
    gr[t.lo] -= static_cast<T>(t.w_lo / sides);
    if (t.w_hi > 0.0) gr[t.lo + 1] -= static_cast<T>(t.w_hi / sides);
  }
  auto out = detail::make_result<T>(Shape{1}, {static_cast<T>(total / sides)}, {&logits});
  if (out.requires_grad()) {
    Tape<T>::current().record(out.node(), [ln = logits.node(), on = out.node(),
                                           grad = std::move(grad)] {
      const T up = on->grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) ln->grad[i] += up * grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& labels, double normalizer) {
  if (logits.shape() != labels.shape()) {
    throw ShapeError("bce_loss: logits " + shape_str(logits.shape()) + " and labels " +
                     shape_str(labels.shape()) + " differ");
  }
  const double n = normalizer > 0.0 ? normalizer : static_cast<double>(logits.numel());
  double total = 0.0;
  const auto p = logits.data();
  const auto y = labels.data();
  for (std::size_t i = 0; i < p.size(); ++i) total += bce_with_logits(p[i], y[i]);
  auto out = detail::make_result<T>(Shape{1}, {static_cast<T>(total / n)}, {&logits});
  if (out.requires_grad()) {
    Tape<T>::current().record(out.node(), [ln = logits.node(), yn = labels.node(),
                                           on = out.node(), n] {
      const T up = on->grad[0];
      for (std::size_t i = 0; i < ln->data.size(); ++i) {
        const double z = ln->data[i];
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        ln->grad[i] += up * static_cast<T>((s - yn->data[i]) / n);
      }
    });
  }
  return out;
}

#define MSGNET_INSTANTIATE_LOSSES(T)                                      \
  template Tensor<T> ciou_loss(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> dfl_loss(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&, double);

MSGNET_INSTANTIATE_LOSSES(float)
MSGNET_INSTANTIATE_LOSSES(double)

}  // namespace msgnet
