#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "msgnet/layers.hpp"

namespace msgnet {

enum class NodeOrigin { kRgb, kThermal, kFramePrev, kFrameCurr };

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
};

// One node per position of a feature map, row-major.
template <typename T>
struct NodeSet {
  Tensor<T> feats;  // [N,d]
  NodeOrigin origin = NodeOrigin::kRgb;
  std::vector<GridPos> spatial_index;

  std::size_t size() const { return spatial_index.size(); }
};

// [1,C,H,W] map -> NodeSet with feats [H*W, C].
template <typename T>
NodeSet<T> nodes_from_map(const Tensor<T>& map, NodeOrigin origin);

// [H*W, C] rows -> [1,C,H,W] map.
template <typename T>
Tensor<T> map_from_rows(const Tensor<T>& rows, std::size_t height, std::size_t width);

struct GraphConfig {
  double tau = 0.25;
  std::size_t k = 25;
  std::size_t d_embed = 16;

  void validate() const;
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double gate = 0.0;
  double raw_score = 0.0;
};

// Pruned edges sorted by (dst, src). offsets[d]..offsets[d+1] spans the
// incoming edges of destination d.
struct SparseBipartiteGraph {
  std::vector<Edge> edges;
  std::vector<std::size_t> offsets;
  std::size_t num_src = 0;
  std::size_t num_dst = 0;
  GraphConfig config;

  std::size_t in_degree(std::size_t dst) const { return offsets[dst + 1] - offsets[dst]; }
};

template <typename T>
struct DenseScores {
  Tensor<T> raw;   // [Ndst, Nsrc], (q . k) / sqrt(d_embed)
  Tensor<T> gate;  // sigmoid(raw)
};

// Queries come from dst nodes, keys from src nodes. wq, wk: [d, d_embed].
template <typename T>
DenseScores<T> score_dense(const NodeSet<T>& src, const NodeSet<T>& dst, const Tensor<T>& wq,
                           const Tensor<T>& wk);

// Keeps edges with gate >= tau, then at most k per destination by descending
// gate (ties to the lower src id).
template <typename T>
SparseBipartiteGraph prune(const Tensor<T>& raw, const Tensor<T>& gate, const GraphConfig& config);

// Per destination: softmax over the raw scores of kept edges, weighted sum of
// the source value rows. Destinations without edges get a zero row. Gradients
// flow into raw (kept entries only) and values (kept sources only).
template <typename T>
Tensor<T> edge_softmax_aggregate(const SparseBipartiteGraph& graph, const Tensor<T>& raw,
                                 const Tensor<T>& values);

// out = dst_feats + (edge_softmax_aggregate(raw, src_vals wv)) wo.
template <typename T>
Tensor<T> aggregate(const SparseBipartiteGraph& graph, const Tensor<T>& raw,
                    const Tensor<T>& src_vals, const Tensor<T>& dst_feats, const Tensor<T>& wv,
                    const Tensor<T>& wo);

struct EdgeCost {
  std::uint64_t macs_sparse = 0;
  std::uint64_t macs_dense = 0;
  std::uint64_t aggregation_sparse = 0;
  std::uint64_t aggregation_dense = 0;
};

// Multiply-accumulate counts of the aggregation stage with width d_embed,
// including the value and output projections.
EdgeCost edge_cost(const SparseBipartiteGraph& graph);

// Dense softmax attention over all sources, used as the baseline in
// benchmarks. raw: [Ndst,Nsrc] values; values: [Nsrc,d]. Returns [Ndst,d].
template <typename T>
std::vector<T> dense_attention(std::span<const T> raw, std::span<const T> values,
                               std::size_t num_dst, std::size_t num_src, std::size_t width);

// Plain-buffer sparse counterpart of dense_attention for timing comparisons.
template <typename T>
std::vector<T> sparse_attention(const SparseBipartiteGraph& graph, std::span<const T> raw,
                                std::span<const T> values, std::size_t width);

// Projection weights of one graph-attention block.
template <typename T>
class GraphAttention {
 public:
  GraphAttention() = default;
  GraphAttention(std::size_t channels, std::size_t d_embed, std::mt19937_64& rng);

  struct Result {
    Tensor<T> out;  // [Ndst, C]
    SparseBipartiteGraph graph;
  };

  // Scores src/dst nodes, prunes, and aggregates src_vals into dst_feats.
  Result operator()(const NodeSet<T>& src, const NodeSet<T>& dst, const Tensor<T>& src_vals,
                    const Tensor<T>& dst_feats, const GraphConfig& config) const;

  Tensor<T>& wq() { return wq_; }
  Tensor<T>& wk() { return wk_; }
  Tensor<T>& wv() { return wv_; }
  Tensor<T>& wo() { return wo_; }
  ParamList<T> parameters() const;

 private:
  Tensor<T> wq_, wk_, wv_, wo_;
};

}  // namespace msgnet
