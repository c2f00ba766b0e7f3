#include "msgnet/hstm.hpp"

namespace msgnet {

template <typename T>
TemporalGraph<T>::TemporalGraph(std::size_t channels, std::mt19937_64& rng)
    : attention_(channels, channels, rng) {}

template <typename T>
Tensor<T> TemporalGraph<T>::operator()(const Tensor<T>& prev, const Tensor<T>& curr,
                                       const GraphConfig& config, std::size_t* kept_edges) const {
  if (prev.shape() != curr.shape() || curr.rank() != 4) {
    throw ShapeError("temporal graph: frames " + shape_str(prev.shape()) + " and " +
                     shape_str(curr.shape()) + " differ");
  }
  const std::size_t batch = curr.dim(0), h = curr.dim(2), w = curr.dim(3);
  GraphConfig cfg = config;
  cfg.d_embed = curr.dim(1);
  std::vector<Tensor<T>> items;
  for (std::size_t b = 0; b < batch; ++b) {
    auto p = batch == 1 ? prev : slice(prev, 0, b, 1);
    auto c = batch == 1 ? curr : slice(curr, 0, b, 1);
    auto src = nodes_from_map(p, NodeOrigin::kFramePrev);
    auto dst = nodes_from_map(c, NodeOrigin::kFrameCurr);
    auto r = attention_(src, dst, src.feats, dst.feats, cfg);
    if (kept_edges) *kept_edges += r.graph.edges.size();
    items.push_back(map_from_rows(r.out, h, w));
  }
  return batch == 1 ? items.front() : concat(items, 0);
}

template <typename T>
TemporalBlock<T>::TemporalBlock(std::size_t channels, std::mt19937_64& rng)
    : mix_(2 * channels, channels, 3, 1, rng),
      expand_value_(channels, 4 * channels, 1, 1, rng),
      expand_gate_(channels, 4 * channels, 1, 1, rng),
      reduce_(4 * channels, channels, 1, 1, rng),
      out_(channels, channels, 3, 1, rng) {}

template <typename T>
Tensor<T> TemporalBlock<T>::operator()(const Tensor<T>& prev, const Tensor<T>& curr) const {
  auto x = mix_(concat<T>({prev, curr}, 1));
  auto gated = mul(relu(expand_value_(x)), expand_gate_(x));
  return add(out_(reduce_(gated)), curr);
}

template <typename T>
ParamList<T> TemporalBlock<T>::parameters() const {
  ParamList<T> out;
  append_params(out, "mix.", mix_.parameters());
  append_params(out, "expand_value.", expand_value_.parameters());
  append_params(out, "expand_gate.", expand_gate_.parameters());
  append_params(out, "reduce.", reduce_.parameters());
  append_params(out, "out.", out_.parameters());
  return out;
}

template <typename T>
HybridTemporal<T>::HybridTemporal(const std::array<std::size_t, 3>& channels,
                                  std::mt19937_64& rng, double tau, std::size_t k) {
  for (std::size_t l = 0; l < 3; ++l) {
    graph_[l] = TemporalGraph<T>(channels[l], rng);
    block_[l] = TemporalBlock<T>(channels[l], rng);
    combine_[l] = Conv2d<T>(channels[l], channels[l], 1, 1, rng);
  }
  config_.tau = tau;
  config_.k = k;
}

template <typename T>
FeaturePyramid<T> HybridTemporal<T>::operator()(const FeaturePyramid<T>& prev,
                                                const FeaturePyramid<T>& curr,
                                                std::array<std::size_t, 3>* kept_edges) const {
  FeaturePyramid<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    auto g = graph_[l](prev[l], curr[l], config_, kept_edges ? &(*kept_edges)[l] : nullptr);
    auto b = block_[l](prev[l], curr[l]);
    out[l] = combine_[l](add(g, b));
  }
  return out;
}

template <typename T>
ParamList<T> HybridTemporal<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto p = std::to_string(l);
    append_params(out, "tsglm" + p + ".", graph_[l].parameters());
    append_params(out, "tsb" + p + ".", block_[l].parameters());
    append_params(out, "combine" + p + ".", combine_[l].parameters());
  }
  return out;
}

template class TemporalGraph<float>;
template class TemporalGraph<double>;
template class TemporalBlock<float>;
template class TemporalBlock<double>;
template class HybridTemporal<float>;
template class HybridTemporal<double>;

}  // namespace msgnet
