#pragma once

#include <array>
#include <random>

#include "msgnet/layers.hpp"

namespace msgnet {

// Crop factors available to the partitioning layer.
inline constexpr std::array<double, 5> kGammaBins{0.2, 0.4, 0.6, 0.8, 1.0};

struct CropRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  bool operator==(const CropRect&) const = default;
};

struct PartitionDecision {
  double lambda = 0.0;
  double gamma = 1.0;
  CropRect crop_rect;
};

// Smallest bin >= lambda (ceiling to the next multiple of 0.2); lambda >= 1
// maps to 1. Throws std::invalid_argument for negative or NaN lambda.
double lambda_to_gamma(double lambda);

// Index of gamma in kGammaBins; throws if gamma is not a bin value.
std::size_t gamma_bin_index(double gamma);

// Centered rectangle of extent max(1, round(gamma * H)) x max(1, round(gamma * W)).
CropRect make_crop_rect(double gamma, std::size_t height, std::size_t width);

PartitionDecision make_decision(double lambda, std::size_t height, std::size_t width);

// Predicts the per-pair scale factor lambda from an RGB and a thermal feature
// map of equal extent: channel concat -> conv3x3+relu -> conv3x3/2+relu ->
// global average pool -> linear(64)+relu -> linear(1) -> softplus.
template <typename T>
class AdaptivePartition {
 public:
  static constexpr std::size_t kHidden = 64;

  AdaptivePartition() = default;
  AdaptivePartition(std::size_t channels, std::mt19937_64& rng);

  // rgb_feat, th_feat: [B,C,H,W] -> lambda: [B]
  Tensor<T> predict_lambda(const Tensor<T>& rgb_feat, const Tensor<T>& th_feat) const;

  Linear<T>& output_layer() { return fc2_; }
  ParamList<T> parameters() const;

 private:
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  Linear<T> fc1_;
  Linear<T> fc2_;
};

// Crops one batch item ([1,C,H,W]) with the decision's rectangle and scales it
// by lambda / stop_gradient(lambda). The factor is exactly 1 in the forward
// pass but routes downstream gradients into lambda ([1]).
template <typename T>
Tensor<T> crop_fused(const Tensor<T>& rgb_feat, const PartitionDecision& decision,
                     const Tensor<T>& lambda);

}  // namespace msgnet
