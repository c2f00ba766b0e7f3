#pragma once

#include <array>
#include <random>

#include "msgnet/encoder.hpp"
#include "msgnet/sparse_graph.hpp"

namespace msgnet {

// Temporal graph branch for one level: nodes of the previous frame send
// messages to nodes of the current frame.
template <typename T>
class TemporalGraph {
 public:
  TemporalGraph() = default;
  TemporalGraph(std::size_t channels, std::mt19937_64& rng);

  // prev, curr: [B,C,H,W] -> [B,C,H,W]
  Tensor<T> operator()(const Tensor<T>& prev, const Tensor<T>& curr, const GraphConfig& config,
                       std::size_t* kept_edges = nullptr) const;

  GraphAttention<T>& attention() { return attention_; }
  ParamList<T> parameters() const { return attention_.parameters(); }

 private:
  GraphAttention<T> attention_;
};

// Convolutional temporal branch: conv3x3 over the channel concat of both
// frames, a gated 1x1 expansion to 4C and back, then conv3x3 plus a residual
// connection to the current frame.
template <typename T>
class TemporalBlock {
 public:
  TemporalBlock() = default;
  TemporalBlock(std::size_t channels, std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& prev, const Tensor<T>& curr) const;
  ParamList<T> parameters() const;

 private:
  Conv2d<T> mix_;
  Conv2d<T> expand_value_;
  Conv2d<T> expand_gate_;
  Conv2d<T> reduce_;
  Conv2d<T> out_;
};

template <typename T>
class HybridTemporal {
 public:
  HybridTemporal() = default;
  HybridTemporal(const std::array<std::size_t, 3>& channels, std::mt19937_64& rng,
                 double tau = 0.25, std::size_t k = 100);

  // Per level: combine(graph(prev, curr) + block(prev, curr)).
  FeaturePyramid<T> operator()(const FeaturePyramid<T>& prev, const FeaturePyramid<T>& curr,
                               std::array<std::size_t, 3>* kept_edges = nullptr) const;

  TemporalGraph<T>& graph(std::size_t level) { return graph_[level]; }
  TemporalBlock<T>& block(std::size_t level) { return block_[level]; }
  Conv2d<T>& combine(std::size_t level) { return combine_[level]; }
  GraphConfig& config() { return config_; }
  const GraphConfig& config() const { return config_; }
  ParamList<T> parameters() const;

 private:
  std::array<TemporalGraph<T>, 3> graph_;
  std::array<TemporalBlock<T>, 3> block_;
  std::array<Conv2d<T>, 3> combine_;
  GraphConfig config_;
};

}  // namespace msgnet
