#include <cmath>

#include "doctest.h"
#include "msgnet/gradcheck.hpp"
#include "msgnet/hstm.hpp"
#include "support/attention_oracle.hpp"
#include "support/test_util.hpp"

using namespace msgnet;
using namespace msgnet::testing;

namespace {

FeaturePyramid<double> random_pyramid(std::size_t batch, std::size_t c, std::size_t size,
                                      std::mt19937_64& rng, bool grad = false) {
  FeaturePyramid<double> p;
  for (std::size_t l = 0; l < 3; ++l) {
    p[l] = random_tensor({batch, c << l, size >> l, size >> l}, rng, -1, 1, grad);
  }
  return p;
}

std::vector<double> vec(const Tensord& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("temporal module keeps shapes") {
  std::mt19937_64 rng(1);
  HybridTemporal<double> h({4, 8, 16}, rng);
  auto prev = random_pyramid(2, 4, 8, rng);
  auto curr = random_pyramid(2, 4, 8, rng);
  std::array<std::size_t, 3> edges{};
  auto out = h(prev, curr, &edges);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(out[l].shape() == curr[l].shape());
    const std::size_t n = (8u >> l) * (8u >> l);
    CHECK(edges[l] <= 2 * n * std::min<std::size_t>(n, 100));
  }
  CHECK(h.config().k == 100);
  CHECK(h.config().tau == 0.25);
}

TEST_CASE("complete temporal graph equals dense attention from the previous frame") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t c = 3, side = 4 + trial, n = side * side;
    TemporalGraph<double> g(c, rng);
    auto prev = random_tensor({1, c, side, side}, rng);
    auto curr = random_tensor({1, c, side, side}, rng);
    auto out = g(prev, curr, GraphConfig{0.0, n, c});
    auto pr = map_to_rows(vec(prev), c, n);
    auto cr = map_to_rows(vec(curr), c, n);
    auto& a = g.attention();
    auto ref = dense_reference(pr, cr, pr, cr, n, n, c, vec(a.wq()), vec(a.wk()), vec(a.wv()),
                               vec(a.wo()), c);
    CHECK(max_abs_diff<double>(map_to_rows(vec(out), c, n), ref) < 1e-12);
  }
}

TEST_CASE("temporal block reduces to the identity when its last conv is zero") {
  std::mt19937_64 rng(3);
  TemporalBlock<double> b(4, rng);
  for (auto& p : b.parameters()) {
    if (p.name.rfind("out.", 0) == 0)
      for (auto& x : p.tensor.mutable_data()) x = 0;
  }
  auto prev = random_tensor({1, 4, 5, 5}, rng);
  auto curr = random_tensor({1, 4, 5, 5}, rng);
  auto y = b(prev, curr);
  CHECK(max_abs_diff<double>(y.data(), curr.data()) == 0.0);
}

TEST_CASE("previous frame influences the output") {
  std::mt19937_64 rng(4);
  HybridTemporal<double> h({2, 4, 8}, rng);
  auto prev = random_pyramid(1, 2, 8, rng);
  auto curr = random_pyramid(1, 2, 8, rng);
  auto a = h(prev, curr);
  prev[0].mutable_data()[0] += 1.0;
  auto b = h(prev, curr);
  CHECK(max_abs_diff<double>(a[0].data(), b[0].data()) > 0.0);
}

TEST_CASE("temporal gradients match finite differences") {
  std::mt19937_64 rng(5);
  HybridTemporal<double> h({2, 4, 8}, rng, 0.25, 10);
  auto prev = random_pyramid(2, 2, 8, rng, true);
  auto curr = random_pyramid(2, 2, 8, rng, true);
  auto w = random_pyramid(2, 2, 8, rng);
  std::vector<Tensord> wrt;
  for (std::size_t l = 0; l < 3; ++l) {
    wrt.push_back(prev[l]);
    wrt.push_back(curr[l]);
  }
  for (const auto& p : h.parameters()) wrt.push_back(p.tensor);
  auto loss = [&] {
    auto out = h(prev, curr);
    Tensord total = sum(mul(out[0], w[0]));
    for (std::size_t l = 1; l < 3; ++l) total = add(total, sum(mul(out[l], w[l])));
    return total;
  };
  CHECK(check_gradients(loss, wrt).max_rel_error < 1e-3);
}

TEST_CASE("mismatched frames are rejected") {
  std::mt19937_64 rng(6);
  TemporalGraph<double> g(2, rng);
  CHECK_THROWS_AS(g(random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 2, 3, 4}, rng),
                    GraphConfig{}),
                  ShapeError);
}

TEST_CASE("identical frames: every destination's strongest edge is its own position") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 4, side = 5, n = side * side;
    TemporalGraph<double> g(c, rng);
    auto id = Tensord::zeros({c, c});
    for (std::size_t i = 0; i < c; ++i) id.mutable_data()[i * c + i] = 1;
    g.attention().wq() = id;
    g.attention().wk() = id.clone();
    // Unit-norm features make self-similarity the strict maximum.
    auto map = random_tensor({1, c, side, side}, rng);
    for (std::size_t p = 0; p < n; ++p) {
      double norm = 0;
      for (std::size_t ch = 0; ch < c; ++ch) norm += map[ch * n + p] * map[ch * n + p];
      for (std::size_t ch = 0; ch < c; ++ch) map.mutable_data()[ch * n + p] /= std::sqrt(norm);
    }
    auto nodes = nodes_from_map(map, NodeOrigin::kFrameCurr);
    auto scores = score_dense(nodes, nodes, id, id);
    auto graph = prune(scores.raw, scores.gate, GraphConfig{0.25, 100, c});
    for (std::size_t d = 0; d < n; ++d) {
      REQUIRE(graph.in_degree(d) > 0);
      const Edge* best = &graph.edges[graph.offsets[d]];
      for (std::size_t i = graph.offsets[d]; i < graph.offsets[d + 1]; ++i)
        if (graph.edges[i].gate > best->gate) best = &graph.edges[i];
      CHECK(best->src == d);
    }
  }
}

TEST_CASE("zero output projection returns the current frame") {
  std::mt19937_64 rng(8);
  TemporalGraph<double> g(3, rng);
  for (auto& x : g.attention().wo().mutable_data()) x = 0;
  auto prev = random_tensor({2, 3, 4, 4}, rng);
  auto curr = random_tensor({2, 3, 4, 4}, rng);
  auto y = g(prev, curr, GraphConfig{0.25, 100, 3});
  CHECK(max_abs_diff<double>(y.data(), curr.data()) == 0.0);
}

TEST_CASE("repeated frames keep fewer edges than positions") {
  std::mt19937_64 rng(9);
  TemporalGraph<double> g(4, rng);
  // Wide weight and feature ranges so scores spread past the gate threshold.
  g.attention().wq() = random_tensor({4, 4}, rng, -2, 2);
  g.attention().wk() = random_tensor({4, 4}, rng, -2, 2);
  auto map = random_tensor({1, 4, 6, 6}, rng, -3, 3);
  std::size_t kept = 0;
  g(map, map, GraphConfig{0.25, 100, 4}, &kept);
  auto nodes = nodes_from_map(map, NodeOrigin::kFrameCurr);
  auto s = score_dense(nodes, nodes, g.attention().wq(), g.attention().wk());
  auto graph = prune(s.raw, s.gate, GraphConfig{0.25, 100, 4});
  CHECK(kept == graph.edges.size());
  for (std::size_t d = 0; d < 36; ++d) CHECK(graph.in_degree(d) < 36);
}

TEST_CASE("branch join with identity projection") {
  std::mt19937_64 rng(10);
  HybridTemporal<double> h({2, 4, 8}, rng);
  for (std::size_t l = 0; l < 3; ++l) {
    auto& conv = h.combine(l);
    const std::size_t c = 2u << l;
    for (auto& x : conv.weight().mutable_data()) x = 0;
    for (std::size_t i = 0; i < c; ++i) conv.weight().mutable_data()[i * c + i] = 1;
    for (auto& x : conv.bias().mutable_data()) x = 0;
  }
  auto prev = random_pyramid(1, 2, 8, rng);
  auto curr = random_pyramid(1, 2, 8, rng);
  auto out = h(prev, curr);
  for (std::size_t l = 0; l < 3; ++l) {
    auto g = h.graph(l)(prev[l], curr[l], h.config());
    auto b = h.block(l)(prev[l], curr[l]);
    auto expect = add(g, b);
    CHECK(max_abs_diff<double>(out[l].data(), expect.data()) < 1e-14);
    // Both branches zero gives zero.
    auto zero = Tensord::zeros(curr[l].shape());
    auto z = h.combine(l)(add(zero, zero));
    CHECK(max_abs_diff<double>(z.data(), zero.data()) == 0.0);
  }
}
