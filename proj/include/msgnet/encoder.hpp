#pragma once

#include <array>
#include <random>

#include "msgnet/layers.hpp"

namespace msgnet {

inline constexpr std::array<std::size_t, 3> kPyramidStrides{8, 16, 32};

// Three feature maps at strides 8/16/32 with C, 2C and 4C channels.
template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 3> levels;

  Tensor<T>& operator[](std::size_t i) { return levels[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return levels[i]; }
};

inline constexpr double kInputMean = 0.5;
inline constexpr double kInputScale = 4.0;

// Shared-parameter image encoder. Three stride-2 stem convolutions reach
// stride 8, then two stride-2 stages produce the coarser levels. Single
// channel (thermal) inputs are replicated to three channels so RGB and thermal
// frames go through the same weights.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::size_t base_channels, std::mt19937_64& rng);

  FeaturePyramid<T> encode(const Tensor<T>& image) const;

  std::size_t base_channels() const { return base_channels_; }
  std::size_t channels(std::size_t level) const { return base_channels_ << level; }
  ParamList<T> parameters() const;

 private:
  std::size_t base_channels_ = 0;
  std::array<Conv2d<T>, 3> stem_;
  Conv2d<T> stage3_;
  Conv2d<T> stage4_;
};

}  // namespace msgnet
