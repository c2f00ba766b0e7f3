#include "msgnet/apl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msgnet {

double lambda_to_gamma(double lambda) {
  if (!(lambda >= 0.0)) {
    throw std::invalid_argument("lambda_to_gamma: lambda must be >= 0, got " +
                                std::to_string(lambda));
  }
  for (double bin : kGammaBins) {
    if (bin >= lambda) return bin;
  }
  return kGammaBins.back();
}

std::size_t gamma_bin_index(double gamma) {
  for (std::size_t i = 0; i < kGammaBins.size(); ++i) {
    if (kGammaBins[i] == gamma) return i;
  }
  throw std::invalid_argument("not a gamma bin: " + std::to_string(gamma));
}

CropRect make_crop_rect(double gamma, std::size_t height, std::size_t width) {
  auto extent = [gamma](std::size_t full) {
    const auto e = static_cast<std::size_t>(std::max<long>(1, std::lround(gamma * full)));
    return std::min(e, full);
  };
  CropRect r;
  r.h = extent(height);
  r.w = extent(width);
  r.top = (height - r.h) / 2;
  r.left = (width - r.w) / 2;
  return r;
}

PartitionDecision make_decision(double lambda, std::size_t height, std::size_t width) {
  PartitionDecision d;
  d.lambda = lambda;
  d.gamma = lambda_to_gamma(lambda);
  d.crop_rect = make_crop_rect(d.gamma, height, width);
  return d;
}

template <typename T>
AdaptivePartition<T>::AdaptivePartition(std::size_t channels, std::mt19937_64& rng)
    : conv1_(2 * channels, channels, 3, 1, rng),
      conv2_(channels, channels, 3, 2, rng),
      fc1_(channels, kHidden, rng),
      fc2_(kHidden, 1, rng) {}

template <typename T>
Tensor<T> AdaptivePartition<T>::predict_lambda(const Tensor<T>& rgb_feat,
                                               const Tensor<T>& th_feat) const {
  if (rgb_feat.shape() != th_feat.shape()) {
    throw ShapeError("predict_lambda: RGB map " + shape_str(rgb_feat.shape()) +
                     " and thermal map " + shape_str(th_feat.shape()) + " differ");
  }
  auto x = concat<T>({rgb_feat, th_feat}, 1);
  x = relu(conv1_(x));
  x = relu(conv2_(x));
  auto pooled = global_avg_pool(x);
  auto hidden = relu(fc1_(pooled));
  auto lam = softplus(fc2_(hidden));
  return reshape(lam, {rgb_feat.dim(0)});
}

template <typename T>
ParamList<T> AdaptivePartition<T>::parameters() const {
  ParamList<T> out;
  append_params(out, "conv1.", conv1_.parameters());
  append_params(out, "conv2.", conv2_.parameters());
  append_params(out, "fc1.", fc1_.parameters());
  append_params(out, "fc2.", fc2_.parameters());
  return out;
}

template <typename T>
Tensor<T> crop_fused(const Tensor<T>& rgb_feat, const PartitionDecision& decision,
                     const Tensor<T>& lambda) {
  const auto& r = decision.crop_rect;
  auto cropped = crop(rgb_feat, r.top, r.left, r.h, r.w);
  auto factor = div(lambda, detach(lambda));
  return mul(cropped, factor);
}

template class AdaptivePartition<float>;
template class AdaptivePartition<double>;
template Tensor<float> crop_fused(const Tensor<float>&, const PartitionDecision&,
                                  const Tensor<float>&);
template Tensor<double> crop_fused(const Tensor<double>&, const PartitionDecision&,
                                   const Tensor<double>&);

}  // namespace msgnet
