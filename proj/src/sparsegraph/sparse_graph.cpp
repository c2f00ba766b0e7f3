#include "msgnet/sparse_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msgnet {

template <typename T>
NodeSet<T> nodes_from_map(const Tensor<T>& map, NodeOrigin origin) {
  if (map.rank() != 4 || map.dim(0) != 1) {
    throw ShapeError("nodes_from_map: expected [1,C,H,W], got " + shape_str(map.shape()));
  }
  const std::size_t c = map.dim(1), h = map.dim(2), w = map.dim(3);
  NodeSet<T> nodes;
  nodes.feats = transpose(reshape(map, {c, h * w}));
  nodes.origin = origin;
  nodes.spatial_index.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) nodes.spatial_index.push_back({r, col});
  return nodes;
}

template <typename T>
Tensor<T> map_from_rows(const Tensor<T>& rows, std::size_t height, std::size_t width) {
  if (rows.rank() != 2 || rows.dim(0) != height * width) {
    throw ShapeError("map_from_rows: " + shape_str(rows.shape()) + " is not " +
                     std::to_string(height * width) + " rows");
  }
  return reshape(transpose(rows), {1, rows.dim(1), height, width});
}

void GraphConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("GraphConfig: tau must be in [0,1]");
  if (k < 1) throw std::invalid_argument("GraphConfig: k must be >= 1");
  if (d_embed < 1) throw std::invalid_argument("GraphConfig: d_embed must be >= 1");
}

template <typename T>
DenseScores<T> score_dense(const NodeSet<T>& src, const NodeSet<T>& dst, const Tensor<T>& wq,
                           const Tensor<T>& wk) {
  if (wq.rank() != 2 || wk.rank() != 2 || wq.dim(1) != wk.dim(1)) {
    throw ShapeError("score_dense: query projection " + shape_str(wq.shape()) +
                     " and key projection " + shape_str(wk.shape()) +
                     " disagree on the embedding width");
  }
  const auto q = matmul(dst.feats, wq);
  const auto k = matmul(src.feats, wk);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(wq.dim(1)));
  DenseScores<T> s;
  s.raw = scale(matmul(q, transpose(k)), inv_sqrt_d);
  NoGradGuard no_grad;  // gates only drive the discrete pruning step
  s.gate = sigmoid(s.raw);
  return s;
}

template <typename T>
SparseBipartiteGraph prune(const Tensor<T>& raw, const Tensor<T>& gate, const GraphConfig& config) {
  config.validate();
  if (raw.rank() != 2 || raw.shape() != gate.shape()) {
    throw ShapeError("prune: raw " + shape_str(raw.shape()) + " and gate " +
                     shape_str(gate.shape()) + " must be equal [Ndst,Nsrc]");
  }
  SparseBipartiteGraph g;
  g.num_dst = raw.dim(0);
  g.num_src = raw.dim(1);
  g.config = config;
  g.offsets.assign(g.num_dst + 1, 0);
  std::vector<std::size_t> survivors;
  survivors.reserve(g.num_src);
  for (std::size_t d = 0; d < g.num_dst; ++d) {
    const T* grow = gate.data().data() + d * g.num_src;
    survivors.clear();
    for (std::size_t s = 0; s < g.num_src; ++s) {
      if (static_cast<double>(grow[s]) >= config.tau) survivors.push_back(s);
    }
    if (survivors.size() > config.k) {
      auto by_gate = [grow](std::size_t a, std::size_t b) {
        return grow[a] != grow[b] ? grow[a] > grow[b] : a < b;
      };
      std::nth_element(survivors.begin(), survivors.begin() + config.k - 1, survivors.end(),
                       by_gate);
      survivors.resize(config.k);
      std::sort(survivors.begin(), survivors.end());
    }
    for (std::size_t s : survivors) {
      g.edges.push_back({s, d, static_cast<double>(grow[s]),
                         static_cast<double>(raw.data()[d * g.num_src + s])});
    }
    g.offsets[d + 1] = g.edges.size();
  }
  return g;
}

template <typename T>
Tensor<T> edge_softmax_aggregate(const SparseBipartiteGraph& graph, const Tensor<T>& raw,
                                 const Tensor<T>& values) {
  if (raw.rank() != 2 || raw.dim(0) != graph.num_dst || raw.dim(1) != graph.num_src) {
    throw ShapeError("edge_softmax_aggregate: scores " + shape_str(raw.shape()) +
                     " do not match the graph");
  }
  if (values.rank() != 2 || values.dim(0) != graph.num_src) {
    throw ShapeError("edge_softmax_aggregate: values " + shape_str(values.shape()) +
                     " do not match " + std::to_string(graph.num_src) + " sources");
  }
  const std::size_t width = values.dim(1);
  const std::size_t ns = graph.num_src;
  std::vector<T> weights(graph.edges.size());
  std::vector<T> out(graph.num_dst * width, T(0));
  const auto& rd = raw.data();
  const auto& vd = values.data();
  for (std::size_t d = 0; d < graph.num_dst; ++d) {
    const std::size_t b = graph.offsets[d], e = graph.offsets[d + 1];
    if (b == e) continue;
    T mx = rd[d * ns + graph.edges[b].src];
    for (std::size_t i = b + 1; i < e; ++i) mx = std::max(mx, rd[d * ns + graph.edges[i].src]);
    T total = T(0);
    for (std::size_t i = b; i < e; ++i) {
      weights[i] = std::exp(rd[d * ns + graph.edges[i].src] - mx);
      total += weights[i];
    }
    T* orow = out.data() + d * width;
    for (std::size_t i = b; i < e; ++i) {
      weights[i] /= total;
      const T* vrow = vd.data() + graph.edges[i].src * width;
      for (std::size_t c = 0; c < width; ++c) orow[c] += weights[i] * vrow[c];
    }
  }
  auto result = detail::make_result<T>(Shape{graph.num_dst, width}, std::move(out), {&raw, &values});
  if (result.requires_grad()) {
    Tape<T>::current().record(result.node(), [rn = raw.node(), vn = values.node(),
                                              on = result.node(), edges = graph.edges,
                                              offsets = graph.offsets,
                                              weights = std::move(weights), width, ns] {
      std::vector<T> dw;
      for (std::size_t d = 0; d + 1 < offsets.size(); ++d) {
        const std::size_t b = offsets[d], e = offsets[d + 1];
        if (b == e) continue;
        const T* g = on->grad.data() + d * width;
        if (vn->requires_grad) {
          for (std::size_t i = b; i < e; ++i) {
            T* gv = vn->grad.data() + edges[i].src * width;
            for (std::size_t c = 0; c < width; ++c) gv[c] += weights[i] * g[c];
          }
        }
        if (rn->requires_grad) {
          dw.assign(e - b, T(0));
          T dot = T(0);
          for (std::size_t i = b; i < e; ++i) {
            const T* vrow = vn->data.data() + edges[i].src * width;
            T acc = T(0);
            for (std::size_t c = 0; c < width; ++c) acc += g[c] * vrow[c];
            dw[i - b] = acc;
            dot += weights[i] * acc;
          }
          for (std::size_t i = b; i < e; ++i) {
            rn->grad[d * ns + edges[i].src] += weights[i] * (dw[i - b] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> aggregate(const SparseBipartiteGraph& graph, const Tensor<T>& raw,
                    const Tensor<T>& src_vals, const Tensor<T>& dst_feats, const Tensor<T>& wv,
                    const Tensor<T>& wo) {
  if (dst_feats.rank() != 2 || dst_feats.dim(0) != graph.num_dst) {
    throw ShapeError("aggregate: destination features " + shape_str(dst_feats.shape()) +
                     " do not match " + std::to_string(graph.num_dst) + " destinations");
  }
  const auto message = edge_softmax_aggregate(graph, raw, matmul(src_vals, wv));
  return add(dst_feats, matmul(message, wo));
}

EdgeCost edge_cost(const SparseBipartiteGraph& graph) {
  const std::uint64_t d = graph.config.d_embed;
  const std::uint64_t projections = graph.num_src * d * d + graph.num_dst * d * d;
  EdgeCost c;
  c.aggregation_sparse = static_cast<std::uint64_t>(graph.edges.size()) * d * 2;
  c.aggregation_dense = static_cast<std::uint64_t>(graph.num_src) * graph.num_dst * d * 2;
  c.macs_sparse = c.aggregation_sparse + projections;
  c.macs_dense = c.aggregation_dense + projections;
  return c;
}

template <typename T>
std::vector<T> dense_attention(std::span<const T> raw, std::span<const T> values,
                               std::size_t num_dst, std::size_t num_src, std::size_t width) {
  std::vector<T> out(num_dst * width, T(0));
  std::vector<T> w(num_src);
  for (std::size_t d = 0; d < num_dst; ++d) {
    const T* row = raw.data() + d * num_src;
    const T mx = *std::max_element(row, row + num_src);
    T total = T(0);
    for (std::size_t s = 0; s < num_src; ++s) total += (w[s] = std::exp(row[s] - mx));
    T* orow = out.data() + d * width;
    for (std::size_t s = 0; s < num_src; ++s) {
      const T ws = w[s] / total;
      const T* vrow = values.data() + s * width;
      for (std::size_t c = 0; c < width; ++c) orow[c] += ws * vrow[c];
    }
  }
  return out;
}

template <typename T>
std::vector<T> sparse_attention(const SparseBipartiteGraph& graph, std::span<const T> raw,
                                std::span<const T> values, std::size_t width) {
  std::vector<T> out(graph.num_dst * width, T(0));
  std::vector<T> w;
  for (std::size_t d = 0; d < graph.num_dst; ++d) {
    const std::size_t b = graph.offsets[d], e = graph.offsets[d + 1];
    if (b == e) continue;
    const T* row = raw.data() + d * graph.num_src;
    w.resize(e - b);
    T mx = row[graph.edges[b].src];
    for (std::size_t i = b + 1; i < e; ++i) mx = std::max(mx, row[graph.edges[i].src]);
    T total = T(0);
    for (std::size_t i = b; i < e; ++i) total += (w[i - b] = std::exp(row[graph.edges[i].src] - mx));
    T* orow = out.data() + d * width;
    for (std::size_t i = b; i < e; ++i) {
      const T ws = w[i - b] / total;
      const T* vrow = values.data() + graph.edges[i].src * width;
      for (std::size_t c = 0; c < width; ++c) orow[c] += ws * vrow[c];
    }
  }
  return out;
}

template <typename T>
GraphAttention<T>::GraphAttention(std::size_t channels, std::size_t d_embed, std::mt19937_64& rng)
    : wq_(uniform_init<T>({channels, d_embed}, channels, rng)),
      wk_(uniform_init<T>({channels, d_embed}, channels, rng)),
      wv_(uniform_init<T>({channels, channels}, channels, rng)),
      wo_(uniform_init<T>({channels, channels}, channels, rng)) {}

template <typename T>
typename GraphAttention<T>::Result GraphAttention<T>::operator()(const NodeSet<T>& src,
                                                                const NodeSet<T>& dst,
                                                                const Tensor<T>& src_vals,
                                                                const Tensor<T>& dst_feats,
                                                                const GraphConfig& config) const {
  auto scores = score_dense(src, dst, wq_, wk_);
  Result r;
  r.graph = prune(scores.raw, scores.gate, config);
  r.out = aggregate(r.graph, scores.raw, src_vals, dst_feats, wv_, wo_);
  return r;
}

template <typename T>
ParamList<T> GraphAttention<T>::parameters() const {
  return {{"wq", wq_}, {"wk", wk_}, {"wv", wv_}, {"wo", wo_}};
}

#define MSGNET_INSTANTIATE_GRAPH(T)                                                             \
  template NodeSet<T> nodes_from_map(const Tensor<T>&, NodeOrigin);                             \
  template Tensor<T> map_from_rows(const Tensor<T>&, std::size_t, std::size_t);                 \
  template DenseScores<T> score_dense(const NodeSet<T>&, const NodeSet<T>&, const Tensor<T>&,   \
                                      const Tensor<T>&);                                        \
  template SparseBipartiteGraph prune(const Tensor<T>&, const Tensor<T>&, const GraphConfig&);  \
  template Tensor<T> edge_softmax_aggregate(const SparseBipartiteGraph&, const Tensor<T>&,      \
                                            const Tensor<T>&);                                  \
  template Tensor<T> aggregate(const SparseBipartiteGraph&, const Tensor<T>&, const Tensor<T>&, \
                               const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template std::vector<T> dense_attention(std::span<const T>, std::span<const T>, std::size_t,  \
                                          std::size_t, std::size_t);                            \
  template std::vector<T> sparse_attention(const SparseBipartiteGraph&, std::span<const T>,     \
                                           std::span<const T>, std::size_t);                    \
  template class GraphAttention<T>;

MSGNET_INSTANTIATE_GRAPH(float)
MSGNET_INSTANTIATE_GRAPH(double)

}  // namespace msgnet
