#pragma once

#include <array>
#include <random>
#include <vector>

#include "msgnet/apl.hpp"
#include "msgnet/encoder.hpp"
#include "msgnet/sparse_graph.hpp"

namespace msgnet {

// Kept-edge counts of one fusion pass, per pyramid level, summed over the batch.
struct GraphStats {
  std::array<std::size_t, 3> edges{0, 0, 0};
  std::array<std::size_t, 3> destinations{0, 0, 0};
};

template <typename T>
struct FusedFrame {
  FeaturePyramid<T> fused;                  // RGB pyramid enriched with thermal messages
  std::vector<PartitionDecision> decisions;  // one per batch item, rectangle on P4
  Tensor<T> lambda;                          // [B]
  GraphStats stats;
};

// Pyramid level read by the partitioning layer. The finest level keeps enough
// spatial support to resolve texture scale at small image sizes.
inline constexpr std::size_t kAplLevel = 0;

// Cross-modal fusion: the partitioning layer picks a centered crop of every
// RGB level, the thermal level is resized to that crop, both go through one
// shared 1x1 projection, and a pruned bipartite graph carries thermal messages
// into the crop. The fused crop is pasted back into the full RGB map.
template <typename T>
class SpatialSparseGraph {
 public:
  SpatialSparseGraph() = default;
  SpatialSparseGraph(const std::array<std::size_t, 3>& channels, std::mt19937_64& rng,
                     double tau = 0.25, std::size_t k = 25);

  FusedFrame<T> fuse_modalities(const FeaturePyramid<T>& rgb, const FeaturePyramid<T>& th) const;

  // Runs the APL head only: thermal P4 is resized to the RGB P4 extent.
  Tensor<T> predict_lambda(const FeaturePyramid<T>& rgb, const FeaturePyramid<T>& th) const;

  // Fusion with externally supplied lambda values and decisions.
  FusedFrame<T> fuse_with(const FeaturePyramid<T>& rgb, const FeaturePyramid<T>& th,
                          const Tensor<T>& lambda,
                          const std::vector<PartitionDecision>& decisions) const;

  AdaptivePartition<T>& apl() { return apl_; }
  const AdaptivePartition<T>& apl() const { return apl_; }
  Conv2d<T>& shared_projection(std::size_t level) { return projection_[level]; }
  GraphAttention<T>& attention(std::size_t level) { return attention_[level]; }
  GraphConfig& config() { return config_; }
  const GraphConfig& config() const { return config_; }
  ParamList<T> parameters() const;

 private:
  AdaptivePartition<T> apl_;
  std::array<Conv2d<T>, 3> projection_;
  std::array<GraphAttention<T>, 3> attention_;
  GraphConfig config_;
};

}  // namespace msgnet
