#include "msgnet/ssglm.hpp"

namespace msgnet {

template <typename T>
SpatialSparseGraph<T>::SpatialSparseGraph(const std::array<std::size_t, 3>& channels,
                                          std::mt19937_64& rng, double tau, std::size_t k)
    : apl_(channels[kAplLevel], rng) {
  for (std::size_t l = 0; l < 3; ++l) {
    projection_[l] = Conv2d<T>(channels[l], channels[l], 1, 1, rng);
    attention_[l] = GraphAttention<T>(channels[l], channels[l], rng);
  }
  config_.tau = tau;
  config_.k = k;
}

template <typename T>
Tensor<T> SpatialSparseGraph<T>::predict_lambda(const FeaturePyramid<T>& rgb,
                                                const FeaturePyramid<T>& th) const {
  const auto& r = rgb[kAplLevel];
  const auto& t = th[kAplLevel];
  const bool same = t.dim(2) == r.dim(2) && t.dim(3) == r.dim(3);
  return apl_.predict_lambda(r, same ? t : bilinear_resize(t, r.dim(2), r.dim(3)));
}

template <typename T>
FusedFrame<T> SpatialSparseGraph<T>::fuse_modalities(const FeaturePyramid<T>& rgb,
                                                     const FeaturePyramid<T>& th) const {
  auto lambda = predict_lambda(rgb, th);
  std::vector<PartitionDecision> decisions;
  for (std::size_t b = 0; b < lambda.numel(); ++b) {
    decisions.push_back(make_decision(static_cast<double>(lambda[b]), rgb[kAplLevel].dim(2), rgb[kAplLevel].dim(3)));
  }
  return fuse_with(rgb, th, lambda, decisions);
}

template <typename T>
FusedFrame<T> SpatialSparseGraph<T>::fuse_with(const FeaturePyramid<T>& rgb,
                                               const FeaturePyramid<T>& th, const Tensor<T>& lambda,
                                               const std::vector<PartitionDecision>& decisions) const {
  const std::size_t batch = rgb[0].dim(0);
  if (th[0].dim(0) != batch || decisions.size() != batch || lambda.numel() != batch) {
    throw ShapeError("fuse_modalities: batch mismatch between RGB (" + std::to_string(batch) +
                     "), thermal (" + std::to_string(th[0].dim(0)) + ") and decisions (" +
                     std::to_string(decisions.size()) + ")");
  }
  FusedFrame<T> out;
  out.lambda = lambda;
  out.decisions = decisions;
  for (std::size_t level = 0; level < 3; ++level) {
    const std::size_t height = rgb[level].dim(2), width = rgb[level].dim(3);
    GraphConfig cfg = config_;
    cfg.d_embed = rgb[level].dim(1);
    std::vector<Tensor<T>> items;
    for (std::size_t b = 0; b < batch; ++b) {
      PartitionDecision level_decision = decisions[b];
      level_decision.crop_rect = make_crop_rect(decisions[b].gamma, height, width);
      const auto& rect = level_decision.crop_rect;

      auto rgb_b = batch == 1 ? rgb[level] : slice(rgb[level], 0, b, 1);
      auto th_b = batch == 1 ? th[level] : slice(th[level], 0, b, 1);
      auto lambda_b = batch == 1 ? lambda : slice(lambda, 0, b, 1);

      auto crop_map = crop_fused(rgb_b, level_decision, lambda_b);
      auto th_map = bilinear_resize(th_b, rect.h, rect.w);
      const auto& proj = projection_[level];
      auto dst = nodes_from_map(proj(crop_map), NodeOrigin::kRgb);
      auto src = nodes_from_map(proj(th_map), NodeOrigin::kThermal);
      auto residual = nodes_from_map(crop_map, NodeOrigin::kRgb).feats;

      auto res = attention_[level](src, dst, src.feats, residual, cfg);
      out.stats.edges[level] += res.graph.edges.size();
      out.stats.destinations[level] += res.graph.num_dst;
      auto fused_crop = map_from_rows(res.out, rect.h, rect.w);
      items.push_back(paste(rgb_b, fused_crop, rect.top, rect.left));
    }
    out.fused[level] = batch == 1 ? items.front() : concat(items, 0);
  }
  return out;
}

template <typename T>
ParamList<T> SpatialSparseGraph<T>::parameters() const {
  ParamList<T> out;
  append_params(out, "apl.", apl_.parameters());
  for (std::size_t l = 0; l < 3; ++l) {
    append_params(out, "proj" + std::to_string(l) + ".", projection_[l].parameters());
    append_params(out, "graph" + std::to_string(l) + ".", attention_[l].parameters());
  }
  return out;
}

template class SpatialSparseGraph<float>;
template class SpatialSparseGraph<double>;

}  // namespace msgnet
