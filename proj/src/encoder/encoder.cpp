#include "msgnet/encoder.hpp"

namespace msgnet {

template <typename T>
Encoder<T>::Encoder(std::size_t base_channels, std::mt19937_64& rng)
    : base_channels_(base_channels) {
  const std::size_t c = base_channels;
  stem_[0] = Conv2d<T>(3, c, 3, 2, rng);
  stem_[1] = Conv2d<T>(c, c, 3, 2, rng);
  stem_[2] = Conv2d<T>(c, c, 3, 2, rng);
  stage3_ = Conv2d<T>(c, 2 * c, 3, 2, rng);
  stage4_ = Conv2d<T>(2 * c, 4 * c, 3, 2, rng);
}

template <typename T>
FeaturePyramid<T> Encoder<T>::encode(const Tensor<T>& image) const {
  if (image.rank() != 4 || (image.dim(1) != 3 && image.dim(1) != 1)) {
    throw ShapeError("encode: expected [B,3,H,W] or [B,1,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
    throw ShapeError("encode: spatial extents must be divisible by 32, got " +
                     shape_str(image.shape()));
  }
  // Pixels in [0,1] are centered so plain SGD sees zero-mean inputs.
  Tensor<T> x = scale(sub(image, Tensor<T>::scalar(T(kInputMean))), T(kInputScale));
  if (x.dim(1) == 1) x = concat<T>({x, x, x}, 1);
  for (const auto& conv : stem_) x = relu(conv(x));
  FeaturePyramid<T> out;
  out[0] = x;
  out[1] = relu(stage3_(out[0]));
  out[2] = relu(stage4_(out[1]));
  return out;
}

template <typename T>
ParamList<T> Encoder<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < stem_.size(); ++i)
    append_params(out, "stem" + std::to_string(i) + ".", stem_[i].parameters());
  append_params(out, "stage3.", stage3_.parameters());
  append_params(out, "stage4.", stage4_.parameters());
  return out;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace msgnet
