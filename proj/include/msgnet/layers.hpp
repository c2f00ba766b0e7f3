#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "msgnet/ops.hpp"

namespace msgnet {

inline const double kHeGain = std::sqrt(6.0);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
void append_params(ParamList<T>& out, const std::string& prefix, const ParamList<T>& params) {
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor});
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::mt19937_64& rng, bool with_bias = true)
      : stride_(stride), pad_(kernel / 2) {
    const std::size_t fan_in = in_channels * kernel * kernel;
    weight_ = uniform_init<T>({out_channels, in_channels, kernel, kernel}, fan_in, rng, kHeGain);
    if (with_bias) bias_ = uniform_init<T>({out_channels}, fan_in, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }

  ParamList<T> parameters() const {
    ParamList<T> out{{"weight", weight_}};
    if (bias_.defined()) out.push_back({"bias", bias_});
    return out;
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  std::size_t stride_ = 1;
  std::size_t pad_ = 0;
};

// y = x W + b on [N, in] rows.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, std::mt19937_64& rng,
         bool with_bias = true) {
    weight_ = uniform_init<T>({in_features, out_features}, in_features, rng, kHeGain);
    if (with_bias) bias_ = uniform_init<T>({out_features}, in_features, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight_);
    return bias_.defined() ? add(y, bias_) : y;
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }

  ParamList<T> parameters() const {
    ParamList<T> out{{"weight", weight_}};
    if (bias_.defined()) out.push_back({"bias", bias_});
    return out;
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace msgnet
