#include <functional>
#include <random>

#include "msgnet/commands.hpp"
#include "msgnet/gradcheck.hpp"

namespace msgnet {

namespace {

Tensord random_uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                       double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensord(shape, std::move(v), true);
}

// Weighted sum with fixed weights, so every output element gets its own
// upstream gradient.
Tensord probe(const Tensord& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = dist(rng);
  return sum(mul(y, Tensord(y.shape(), std::move(w))));
}

Tensord probe(const FeaturePyramid<double>& p, std::uint64_t seed) {
  Tensord total = probe(p[0], seed);
  for (std::size_t l = 1; l < 3; ++l) total = add(total, probe(p[l], seed + l));
  return total;
}

// Identity forward whose backward is scaled by 1.1.
Tensord faulty_identity(const Tensord& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  auto result = detail::make_result<double>(x.shape(), std::move(out), {&x});
  if (result.requires_grad()) {
    Tape<double>::current().record(result.node(), [xn = x.node(), on = result.node()] {
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += 1.1 * on->grad[i];
    });
  }
  return result;
}

FeaturePyramid<double> random_pyramid(std::size_t batch, std::size_t c, std::size_t side,
                                      std::mt19937_64& rng) {
  FeaturePyramid<double> p;
  for (std::size_t l = 0; l < 3; ++l) p[l] = random_uniform({batch, c << l, side >> l, side >> l}, rng);
  return p;
}

std::vector<Tensord> tensors_of(const ParamList<double>& params, const std::string& skip = {}) {
  std::vector<Tensord> out;
  for (const auto& p : params)
    if (skip.empty() || p.name.rfind(skip, 0) != 0) out.push_back(p.tensor);
  return out;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }

  void run(const std::string& name, bool composite, const std::function<Tensord()>& loss,
           std::vector<Tensord> wrt, std::size_t max_entries = 0) {
    GradCheckOptions opt;
    opt.max_entries_per_tensor = max_entries;
    opt.seed = report_.entries.size();
    const double err = check_gradients(loss, std::move(wrt), opt).max_rel_error;
    GradSuiteEntry e{name, composite, err, composite ? 1e-3 : 1e-4, false};
    e.passed = err <= e.tolerance;
    report_.passed = report_.passed && e.passed;
    report_.entries.push_back(e);
  }

  GradSuiteReport take() { return std::move(report_); }

 private:
  std::mt19937_64 rng_;
  GradSuiteReport report_;
};

void primitive_ops(Suite& s) {
  auto& rng = s.rng();
  auto a = random_uniform({2, 3, 4, 4}, rng);
  auto b = random_uniform({2, 3, 4, 4}, rng);
  auto pos = random_uniform({4}, rng, 0.5, 1.5);
  auto m = random_uniform({5, 4}, rng);
  auto n = random_uniform({4, 3}, rng);
  auto w = random_uniform({2, 3, 3, 3}, rng);
  auto bias = random_uniform({2}, rng);
  auto patch = random_uniform({2, 3, 2, 3}, rng);

  s.run("add", false, [&] { return probe(add(a, b), 1); }, {a, b});
  s.run("add_broadcast", false, [&] { return probe(add(a, pos), 2); }, {a, pos});
  s.run("sub", false, [&] { return probe(sub(a, b), 3); }, {a, b});
  s.run("mul", false, [&] { return probe(mul(a, b), 4); }, {a, b});
  s.run("div", false, [&] { return probe(div(a, pos), 5); }, {a, pos});
  s.run("scale", false, [&] { return probe(scale(a, 0.7), 6); }, {a});
  s.run("matmul", false, [&] { return probe(matmul(m, n), 7); }, {m, n});
  s.run("transpose", false, [&] { return probe(transpose(m), 8); }, {m});
  s.run("reshape", false, [&] { return probe(reshape(a, {6, 16}), 9); }, {a});
  s.run("conv2d_stride1", false, [&] { return probe(conv2d(a, w, bias, 1, 1), 10); },
        {a, w, bias});
  s.run("conv2d_stride2", false, [&] { return probe(conv2d(a, w, bias, 2, 1), 11); },
        {a, w, bias});
  s.run("relu", false, [&] { return probe(relu(a), 12); }, {a});
  s.run("sigmoid", false, [&] { return probe(sigmoid(a), 13); }, {a});
  s.run("softplus", false, [&] { return probe(softplus(a), 14); }, {a});
  s.run("natural_log", false, [&] { return probe(natural_log(pos), 23); }, {pos});
  s.run("softmax", false, [&] { return probe(softmax(a, 1), 15); }, {a});
  s.run("bilinear_resize", false, [&] { return probe(bilinear_resize(a, 3, 7), 16); }, {a});
  s.run("crop", false, [&] { return probe(crop(a, 1, 0, 2, 3), 17); }, {a});
  s.run("paste", false, [&] { return probe(paste(a, patch, 1, 1), 18); }, {a, patch});
  s.run("concat", false, [&] { return probe(concat<double>({a, b}, 1), 19); }, {a, b});
  s.run("slice", false, [&] { return probe(slice(a, 1, 1, 2), 20); }, {a});
  s.run("gather_cells", false,
        [&] { return probe(gather_cells(a, {{0, 1, 2}, {1, 3, 0}, {0, 1, 2}}), 21); }, {a});
  s.run("sum", false, [&] { return mul(sum(a), sum(a)); }, {a});
  s.run("mean", false, [&] { return mul(mean(a), mean(a)); }, {a});
  s.run("global_avg_pool", false, [&] { return probe(global_avg_pool(a), 22); }, {a});
}

void graph_ops(Suite& s) {
  auto& rng = s.rng();
  const std::size_t c = 3, de = 4;
  auto src_map = random_uniform({1, c, 3, 3}, rng);
  auto dst_map = random_uniform({1, c, 2, 3}, rng);
  auto wq = random_uniform({c, de}, rng);
  auto wk = random_uniform({c, de}, rng);
  auto wv = random_uniform({c, c}, rng);
  auto wo = random_uniform({c, c}, rng);
  GraphConfig cfg{0.25, 4, de};

  s.run("nodes_from_map", false,
        [&] { return probe(nodes_from_map(src_map, NodeOrigin::kThermal).feats, 30); }, {src_map});
  s.run("map_from_rows", false,
        [&] { return probe(map_from_rows(reshape(src_map, {9, 3}), 3, 3), 31); }, {src_map});
  s.run("score_dense", false,
        [&] {
          auto src = nodes_from_map(src_map, NodeOrigin::kThermal);
          auto dst = nodes_from_map(dst_map, NodeOrigin::kRgb);
          // Gates only steer the discrete pruning and carry no gradient.
          return probe(score_dense(src, dst, wq, wk).raw, 32);
        },
        {src_map, dst_map, wq, wk});

  // The kept-edge set is computed once and held fixed, as during a step.
  const auto src0 = nodes_from_map(src_map, NodeOrigin::kThermal);
  const auto dst0 = nodes_from_map(dst_map, NodeOrigin::kRgb);
  SparseBipartiteGraph graph;
  {
    NoGradGuard guard;
    auto sc = score_dense(src0, dst0, wq, wk);
    graph = prune(sc.raw, sc.gate, cfg);
  }
  auto raw = random_uniform({6, 9}, rng);
  auto vals = random_uniform({9, c}, rng);
  auto feats = random_uniform({6, c}, rng);
  s.run("edge_softmax_aggregate", false,
        [&] { return probe(edge_softmax_aggregate(graph, raw, vals), 34); }, {raw, vals});
  s.run("aggregate", false, [&] { return probe(aggregate(graph, raw, vals, feats, wv, wo), 35); },
        {raw, vals, feats, wv, wo});

  auto fmap = random_uniform({1, 3, 6, 6}, rng);
  Tensord lam({1}, {0.55}, true);
  const auto decision = make_decision(0.55, 6, 6);
  s.run("crop_fused", false, [&] { return probe(crop_fused(fmap, decision, lam), 36); }, {fmap});
}

void loss_ops(Suite& s) {
  auto& rng = s.rng();
  std::vector<double> pv, gv;
  std::uniform_real_distribution<double> pos(2.0, 40.0), ext(3.0, 20.0);
  for (int i = 0; i < 6; ++i) {
    for (auto* v : {&pv, &gv}) {
      const double x = pos(rng), y = pos(rng);
      v->insert(v->end(), {x, y, x + ext(rng), y + ext(rng)});
    }
  }
  Tensord pred({6, 4}, pv, true), gt({6, 4}, gv);
  s.run("ciou_loss", false, [&] { return ciou_loss(pred, gt); }, {pred});

  auto logits = random_uniform({3, 4 * kDflBins}, rng, -2, 2);
  std::vector<double> tv(12);
  std::uniform_real_distribution<double> tdist(0.2, 14.8);
  for (auto& t : tv) t = tdist(rng);
  Tensord targets({3, 4}, tv);
  s.run("dfl_loss", false, [&] { return dfl_loss(logits, targets); }, {logits});

  auto cls = random_uniform({2, 3, 4}, rng, -4, 4);
  auto labels = random_uniform({2, 3, 4}, rng, 0, 1);
  s.run("bce_loss", false, [&] { return bce_loss(cls, labels, 30.0); }, {cls});
}

void composites(Suite& s) {
  auto& rng = s.rng();
  {
    AdaptivePartition<double> apl(2, rng);
    auto r = random_uniform({2, 2, 4, 4}, rng);
    auto t = random_uniform({2, 2, 4, 4}, rng);
    std::vector<Tensord> wrt{r, t};
    for (const auto& p : apl.parameters()) wrt.push_back(p.tensor);
    s.run("apl_head", true, [&] { return probe(apl.predict_lambda(r, t), 40); }, wrt);
  }
  {
    SpatialSparseGraph<double> ssglm({2, 4, 8}, rng, 0.25, 6);
    auto rgb = random_pyramid(2, 2, 8, rng);
    auto th = random_pyramid(2, 2, 8, rng);
    Tensord lam({2}, {0.5, 0.9});
    std::vector<PartitionDecision> d{make_decision(0.5, 2, 2), make_decision(0.9, 2, 2)};
    // lambda only enters through a factor that is one in the forward pass, so
    // central differences cannot see its gradient.
    std::vector<Tensord> wrt = tensors_of(ssglm.parameters(), "apl.");
    for (std::size_t l = 0; l < 3; ++l) {
      wrt.push_back(rgb[l]);
      wrt.push_back(th[l]);
    }
    s.run("ssglm", true, [&] { return probe(ssglm.fuse_with(rgb, th, lam, d).fused, 41); }, wrt);
  }
  {
    TemporalGraph<double> tg(4, rng);
    auto prev = random_uniform({2, 4, 3, 3}, rng);
    auto curr = random_uniform({2, 4, 3, 3}, rng);
    std::vector<Tensord> wrt = tensors_of(tg.attention().parameters());
    wrt.push_back(prev);
    wrt.push_back(curr);
    const GraphConfig cfg{0.25, 5, 4};
    s.run("tsglm", true, [&] { return probe(tg(prev, curr, cfg), 42); }, wrt);
  }
  {
    TemporalBlock<double> tsb(3, rng);
    auto prev = random_uniform({2, 3, 4, 4}, rng);
    auto curr = random_uniform({2, 3, 4, 4}, rng);
    std::vector<Tensord> wrt = tensors_of(tsb.parameters());
    wrt.push_back(prev);
    wrt.push_back(curr);
    s.run("tsb", true, [&] { return probe(tsb(prev, curr), 43); }, wrt);
  }
  {
    HybridTemporal<double> hstm({2, 4, 8}, rng, 0.25, 10);
    auto prev = random_pyramid(2, 2, 8, rng);
    auto curr = random_pyramid(2, 2, 8, rng);
    std::vector<Tensord> wrt = tensors_of(hstm.parameters());
    for (std::size_t l = 0; l < 3; ++l) {
      wrt.push_back(prev[l]);
      wrt.push_back(curr[l]);
    }
    s.run("hstm", true, [&] { return probe(hstm(prev, curr), 44); }, wrt, 40);
  }
  {
    DetectionHead<double> head({2, 4, 8}, 3, rng);
    auto feats = random_pyramid(2, 2, 32, rng);
    std::vector<GroundTruth> gts{
        {{Box{10, 12, 8, 6}, Box{40, 30, 24, 20}}, {0, 2}},
        {{Box{20, 44, 14, 12}}, {1}},
    };
    const auto targets = assign_targets(gts, 32 * 4, 32 * 4);
    std::vector<Tensord> wrt = tensors_of(head.parameters());
    for (std::size_t l = 0; l < 3; ++l) wrt.push_back(feats[l]);
    s.run("detection_loss", true, [&] { return detection_loss(head(feats), targets).total; }, wrt,
          30);
  }
  {
    Encoder<double> enc(2, rng);
    auto image = random_uniform({1, 3, 32, 32}, rng, 0, 1);
    std::vector<Tensord> wrt = tensors_of(enc.parameters());
    wrt.push_back(image);
    s.run("encoder", true, [&] { return probe(enc.encode(image), 45); }, wrt, 30);
  }
}

}  // namespace

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options) {
  Suite suite(options.seed);
  primitive_ops(suite);
  graph_ops(suite);
  loss_ops(suite);
  composites(suite);
  if (options.inject_fault) {
    auto x = random_uniform({3, 4}, suite.rng());
    suite.run("faulty_identity", false, [&] { return probe(faulty_identity(x), 50); }, {x});
  }
  return suite.take();
}

nlohmann::ordered_json GradSuiteReport::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = passed;
  auto& ops = j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    ops.push_back({{"name", e.name},
                   {"kind", e.composite ? "composite" : "op"},
                   {"max_rel_error", e.max_rel_error},
                   {"tolerance", e.tolerance},
                   {"passed", e.passed}});
  }
  return j;
}

}  // namespace msgnet
