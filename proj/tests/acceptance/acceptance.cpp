#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "msgnet/commands.hpp"
#include "msgnet/hstm.hpp"
#include "msgnet/sparse_graph.hpp"
#include "support/ap_oracle.hpp"
#include "support/attention_oracle.hpp"
#include "support/test_util.hpp"

using namespace msgnet;
using namespace msgnet::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("msgnet_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig toy_config(const fs::path& data, const fs::path& out) {
  auto c = TrainConfig::from_file(fs::path(MSGNET_SOURCE_DIR) / "configs" / "toy.cfg");
  c.data_root = data;
  c.out_dir = out;
  c.quiet = true;
  return c;
}

Outcome gradient_suite() {
  const double start = cpu_seconds();
  const auto report = run_gradient_suite();
  const double elapsed = cpu_seconds() - start;
  const std::set<std::string> required{"apl_head", "ssglm", "tsglm", "tsb",
                                       "ciou_loss", "dfl_loss", "bce_loss"};
  std::set<std::string> seen;
  bool ok = report.passed;
  double worst_op = 0, worst_composite = 0;
  for (const auto& e : report.entries) {
    seen.insert(e.name);
    const double limit = e.composite ? 1e-3 : 1e-4;
    ok = ok && e.max_rel_error <= limit;
    (e.composite ? worst_composite : worst_op) =
        std::max(e.composite ? worst_composite : worst_op, e.max_rel_error);
  }
  for (const auto& name : required) ok = ok && seen.count(name);
  GradSuiteOptions faulty;
  faulty.inject_fault = true;
  const bool catches_fault = !run_gradient_suite(faulty).passed;
  ok = ok && catches_fault && elapsed <= 120.0;
  return {ok, std::to_string(report.entries.size()) + " entries, worst op " + fmt(worst_op) +
                  ", worst composite " + fmt(worst_composite) + ", " + fmt(elapsed, 3) +
                  " s CPU, injected fault " + (catches_fault ? "caught" : "missed")};
}

Outcome sparse_dense() {
  std::mt19937_64 rng(20);
  double worst = 0;
  std::size_t instances = 0;
  struct Spatial {
    std::size_t ns, nd, c, de;
  };
  for (const auto cfg : {Spatial{16, 16, 8, 8}, Spatial{64, 16, 8, 4}, Spatial{9, 25, 4, 6}}) {
    for (int trial = 0; trial < 20; ++trial, ++instances) {
      GraphAttention<double> att(cfg.c, cfg.de, rng);
      auto src = random_tensor({cfg.ns, cfg.c}, rng);
      auto dst = random_tensor({cfg.nd, cfg.c}, rng);
      NodeSet<double> s, d;
      s.feats = src;
      d.feats = dst;
      for (std::size_t i = 0; i < cfg.ns; ++i) s.spatial_index.push_back({0, i});
      for (std::size_t i = 0; i < cfg.nd; ++i) d.spatial_index.push_back({0, i});
      auto r = att(s, d, src, dst, GraphConfig{0.0, cfg.ns, cfg.de});
      auto ref = dense_reference(vec(src.data()), vec(dst.data()), vec(src.data()),
                                 vec(dst.data()), cfg.ns, cfg.nd, cfg.c, vec(att.wq().data()),
                                 vec(att.wk().data()), vec(att.wv().data()),
                                 vec(att.wo().data()), cfg.de);
      worst = std::max(worst, max_abs_diff<double>(r.out.data(), ref));
    }
  }
  for (const std::size_t side : {3, 5, 8}) {
    const std::size_t c = 4, n = side * side;
    for (int trial = 0; trial < 20; ++trial, ++instances) {
      TemporalGraph<double> g(c, rng);
      auto prev = random_tensor({1, c, side, side}, rng);
      auto curr = random_tensor({1, c, side, side}, rng);
      auto out = g(prev, curr, GraphConfig{0.0, n, c});
      auto pr = map_to_rows(vec(prev.data()), c, n);
      auto cr = map_to_rows(vec(curr.data()), c, n);
      auto& a = g.attention();
      auto ref = dense_reference(pr, cr, pr, cr, n, n, c, vec(a.wq().data()),
                                 vec(a.wk().data()), vec(a.wv().data()), vec(a.wo().data()), c);
      worst = std::max(worst, max_abs_diff<double>(map_to_rows(vec(out.data()), c, n), ref));
    }
  }
  return {worst <= 1e-6, std::to_string(instances) + " instances, max abs diff " + fmt(worst)};
}

Outcome gamma_table() {
  std::istringstream in(gamma_table_csv());
  std::string line;
  std::getline(in, line);
  bool ok = line == "lambda,gamma";
  bool above_one = false, low_case = false;
  double previous = 0;
  std::size_t rows = 0;
  const std::set<double> bins(kGammaBins.begin(), kGammaBins.end());
  while (std::getline(in, line)) {
    if (line == "1.17,1.0") above_one = true;
    if (line == "0.32,0.4") low_case = true;
    const auto comma = line.find(',');
    const double lambda = std::stod(line.substr(0, comma));
    const double gamma = std::stod(line.substr(comma + 1));
    ok = ok && bins.count(gamma) && gamma >= previous;
    // Zero has no bin of its own and goes to the smallest one.
    if (lambda == 0.0) ok = ok && gamma == kGammaBins.front();
    else if (lambda < 1.0) ok = ok && gamma - lambda >= -1e-12 && gamma - lambda < 0.2;
    else ok = ok && gamma == 1.0;
    previous = gamma;
    ++rows;
  }
  above_one = above_one && lambda_to_gamma(1.17) == 1.0;
  low_case = low_case && lambda_to_gamma(0.32) == 0.4;
  return {ok && above_one && low_case && rows == 151,
          std::to_string(rows) + " rows, 1.17->1.0 " + (above_one ? "ok" : "wrong") +
              ", 0.32->0.4 " + (low_case ? "ok" : "wrong") + ", invariants " +
              (ok ? "hold" : "violated")};
}

Outcome loss_values() {
  // Two 2x2 boxes four apart on one axis: IoU 0, squared center distance 16,
  // enclosing diagonal squared 6^2 + 2^2 = 40, equal aspect ratios.
  const double by_hand = 1.0 - 0.0 + 16.0 / 40.0 + 0.0;
  const double ciou = ciou_loss(Box{0, 0, 2, 2}, Box{4, 0, 2, 2});
  const std::vector<double> uniform(kDflBins, 1.0 / kDflBins);
  double dfl_worst = 0;
  for (int y = 0; y < static_cast<int>(kDflBins); ++y) {
    dfl_worst = std::max(dfl_worst, std::abs(dfl_loss(uniform, y) - std::log(16.0)));
  }
  const double bce = bce_with_logits(0.0, 1.0);
  const bool ok = std::abs(ciou - 1.4) <= 1e-9 && std::abs(by_hand - 1.4) <= 1e-12 &&
                  dfl_worst <= 1e-9 && std::abs(bce - std::log(2.0)) <= 1e-9;
  return {ok, "ciou " + fmt(ciou, 17) + ", dfl max dev " + fmt(dfl_worst) + ", bce " +
                  fmt(bce, 17)};
}

Outcome pruning() {
  std::mt19937_64 rng(50);
  bool subset = true, bounded = true;
  std::size_t lo_edges = 0, hi_edges = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nd = 10 + trial % 20, ns = 30 + 3 * trial;
    auto raw = random_tensor({nd, ns}, rng, -4, 4);
    auto gate = sigmoid(raw);
    const GraphConfig lo_cfg{0.25, 25, 8}, hi_cfg{0.75, 25, 8};
    const auto lo = prune(raw, gate, lo_cfg);
    const auto hi = prune(raw, gate, hi_cfg);
    std::set<std::pair<std::size_t, std::size_t>> kept;
    for (const auto& e : lo.edges) kept.insert({e.src, e.dst});
    for (const auto& e : hi.edges) subset = subset && kept.count({e.src, e.dst});
    for (std::size_t d = 0; d < nd; ++d) {
      bounded = bounded && lo.in_degree(d) <= 25 && hi.in_degree(d) <= 25;
    }
    lo_edges += lo.edges.size();
    hi_edges += hi.edges.size();
  }
  return {subset && bounded && hi_edges < lo_edges,
          "50 matrices, edges tau=0.25 " + std::to_string(lo_edges) + ", tau=0.75 " +
              std::to_string(hi_edges) + ", subset " + (subset ? "yes" : "no") +
              ", in-degree <= 25 " + (bounded ? "yes" : "no")};
}

Outcome apl_recovery() {
  const auto root = scratch("apl");
  make_dataset(root, 500, 7, "train");
  make_dataset(root, 200, 7, "val");
  auto c = toy_config(root, root / "run");
  c.val_split = "";
  const double start = cpu_seconds();
  const auto result = train_toy(c);
  const double elapsed = cpu_seconds() - start;
  const auto report = evaluate_checkpoint(result.checkpoint, root, "val", c.precision);
  fs::remove_all(root);
  return {report.gamma_accuracy >= 0.8 && elapsed <= 600.0,
          "gamma accuracy " + fmt(report.gamma_accuracy, 3) + " on " +
              std::to_string(report.samples) + " held-out pairs after " + fmt(elapsed, 4) +
              " s CPU (" + std::to_string(c.epochs) + " epochs), val AP50 " +
              fmt(report.ap.ap50, 3)};
}

Outcome overfit() {
  const auto root = scratch("overfit");
  make_dataset(root, 32, 1, "train");
  auto c = toy_config(root, root / "run");
  c.val_split = "";
  c.epochs = 600;
  c.augment = false;
  const double start = cpu_seconds();
  const auto result = train_toy(c);
  const double elapsed = cpu_seconds() - start;
  const auto report = evaluate_checkpoint(result.checkpoint, root, "train", c.precision);
  fs::remove_all(root);

  std::mt19937_64 rng(70);
  std::size_t compared = 0, mismatched = 0;
  for (int t = 0; t < 300; ++t) {
    const auto inst = random_instance(rng, 4, 3);
    for (std::size_t cls = 0; cls < 3; ++cls) {
      for (int k = 0; k < 10; ++k) {
        const double thr = 0.5 + 0.05 * k;
        ++compared;
        if (average_precision(inst.dets, inst.gts, cls, thr) !=
            exhaustive_ap(inst.dets, inst.gts, cls, thr)) {
          ++mismatched;
        }
      }
    }
  }
  return {report.ap.ap50 >= 0.9 && elapsed <= 900.0 && mismatched == 0,
          "train AP50 " + fmt(report.ap.ap50, 3) + " after " + fmt(elapsed, 4) +
              " s CPU, AP oracle mismatches " + std::to_string(mismatched) + "/" +
              std::to_string(compared)};
}

Outcome sparsity_bench() {
  BenchOptions opt;
  opt.sizes = {1024};
  opt.ks = {25};
  opt.taus = {0.0};
  opt.timing = true;
  const auto j = run_bench(opt);
  const auto& row = j["edge_cost"].at(0);
  const double ratio = row["aggregation_ratio"];
  const auto& timing = j["timing"].at(0);
  const double dense = timing["dense_seconds"], sparse = timing["sparse_seconds"];
  return {ratio >= 40.0 && sparse < dense,
          "aggregation MAC ratio " + fmt(ratio) + ", dense " + fmt(dense * 1e3) +
              " ms, sparse " + fmt(sparse * 1e3) + " ms"};
}

int run(const std::string& command) {
  return std::system((command + " > /dev/null 2>&1").c_str());
}

// Every file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

Outcome cli_determinism() {
  const std::string cli = MSGNET_CLI;
  std::array<std::map<std::string, std::string>, 2> runs;
  bool all_ran = true;
  for (int r = 0; r < 2; ++r) {
    const auto dir = scratch("determinism");
    const std::string d = dir.string();
    {
      std::ofstream cfg(dir / "train.cfg");
      cfg << "data_root=" << d << "/data\nout_dir=" << d
          << "/run\nval_split=val\nepochs=2\nbase_channels=4\nprecision=f64\n"
             "cls_weight=100\nquiet=1\n";
    }
    const std::vector<std::string> commands{
        cli + " gradcheck --seed 3 --out " + d + "/gradcheck.json",
        cli + " gamma-table --out " + d + "/gamma.csv",
        cli + " synth-gen --n 8 --seed 5 --out " + d + "/data --split train",
        cli + " synth-gen --n 4 --seed 5 --out " + d + "/data --split val",
        cli + " train-toy --config " + d + "/train.cfg",
        cli + " eval --checkpoint " + d + "/run/checkpoint --data " + d +
            "/data --split val --precision f64 --out " + d + "/eval.json",
        cli + " bench --seed 3 --out " + d + "/bench.json",
    };
    for (const auto& c : commands) all_ran = all_ran && run(c) == 0;
    runs[r] = tree(dir);
    fs::remove_all(dir);
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  const bool ok = all_ran && runs[0].size() == runs[1].size() && differing == 0 &&
                  runs[0].count("eval.json") && runs[0].count("run/metrics.csv");
  return {ok, std::to_string(runs[0].size()) + " report files compared, " +
                  std::to_string(differing) + " differ" + (all_ran ? "" : ", a command failed")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; one PASS/FAIL line per criterion"};
  std::vector<int> only;
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"sparse-dense oracle", sparse_dense},
      {"gamma regression", gamma_table},
      {"loss unit values", loss_values},
      {"pruning monotonicity", pruning},
      {"APL recovery", apl_recovery},
      {"overfit sanity", overfit},
      {"sparsity benchmark", sparsity_bench},
      {"CLI determinism", cli_determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << ' ' << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
