#include <algorithm>
#include <chrono>
#include <random>

#include "msgnet/commands.hpp"

namespace msgnet {

namespace {

NodeSet<double> random_nodes(std::size_t n, std::size_t width, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n * width);
  for (auto& x : v) x = dist(rng);
  NodeSet<double> nodes;
  nodes.feats = Tensord({n, width}, std::move(v));
  nodes.spatial_index.resize(n);
  for (std::size_t i = 0; i < n; ++i) nodes.spatial_index[i] = {i / 32, i % 32};
  return nodes;
}

Tensord identity(std::size_t width) {
  auto t = Tensord::zeros({width, width});
  for (std::size_t i = 0; i < width; ++i) t.mutable_data()[i * width + i] = 1.0;
  return t;
}

template <typename F>
double best_seconds(std::size_t repeats, F&& fn) {
  double best = 0.0;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (r == 0 || elapsed.count() < best) best = elapsed.count();
  }
  return best;
}

}  // namespace

nlohmann::ordered_json run_bench(const BenchOptions& options) {
  NoGradGuard guard;
  nlohmann::ordered_json report;
  report["seed"] = options.seed;
  report["width"] = options.width;
  auto& table = report["edge_cost"] = nlohmann::ordered_json::array();
  auto& timing = report["timing"];
  if (options.timing) timing = nlohmann::ordered_json::array();

  std::mt19937_64 rng(options.seed);
  const auto w = identity(options.width);
  for (std::size_t n : options.sizes) {
    const auto src = random_nodes(n, options.width, rng);
    const auto dst = random_nodes(n, options.width, rng);
    const auto scores = score_dense(src, dst, w, w);
    for (std::size_t k : options.ks) {
      for (double tau : options.taus) {
        const GraphConfig cfg{tau, k, options.width};
        const auto graph = prune(scores.raw, scores.gate, cfg);
        const auto cost = edge_cost(graph);
        auto ratio = [](std::uint64_t dense, std::uint64_t sparse) {
          return sparse == 0 ? nullptr : nlohmann::ordered_json(double(dense) / double(sparse));
        };
        table.push_back({{"n", n},
                         {"k", k},
                         {"tau", tau},
                         {"edges", graph.edges.size()},
                         {"aggregation_macs_sparse", cost.aggregation_sparse},
                         {"aggregation_macs_dense", cost.aggregation_dense},
                         {"aggregation_ratio", ratio(cost.aggregation_dense, cost.aggregation_sparse)},
                         {"macs_sparse", cost.macs_sparse},
                         {"macs_dense", cost.macs_dense},
                         {"total_ratio", ratio(cost.macs_dense, cost.macs_sparse)}});
        if (options.timing && tau == 0.0) {
          const auto raw = scores.raw.data();
          const auto values = src.feats.data();
          std::vector<double> sink;
          const double dense_s = best_seconds(options.timing_repeats, [&] {
            sink = dense_attention<double>(raw, values, n, n, options.width);
          });
          const double sparse_s = best_seconds(options.timing_repeats, [&] {
            sink = sparse_attention<double>(graph, raw, values, options.width);
          });
          timing.push_back({{"n", n},
                            {"k", k},
                            {"tau", tau},
                            {"dense_seconds", dense_s},
                            {"sparse_seconds", sparse_s},
                            {"speedup", sparse_s > 0 ? dense_s / sparse_s : 0.0}});
        }
      }
    }
  }
  return report;
}

std::string gamma_table_csv() {
  std::string out = "lambda,gamma\n";
  char line[64];
  for (int i = 0; i <= 150; ++i) {
    const double lambda = i / 100.0;
    std::snprintf(line, sizeof line, "%.2f,%.1f\n", lambda, lambda_to_gamma(lambda));
    out += line;
  }
  return out;
}

}  // namespace msgnet
