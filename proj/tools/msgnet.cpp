#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "msgnet/commands.hpp"

using namespace msgnet;

namespace {

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << text;
}

std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-graph RGB-thermal video detector toolkit"};
  app.require_subcommand(1);
  std::string out_path;

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and module");
  std::uint64_t grad_seed = 0;
  bool inject_fault = false;
  gradcheck->add_option("--seed", grad_seed);
  gradcheck->add_flag("--inject-fault", inject_fault, "add an op with a corrupted backward rule");
  gradcheck->add_option("--out", out_path, "report path (default stdout)");

  auto* gamma = app.add_subcommand("gamma-table", "lambda to gamma mapping as CSV");
  gamma->add_option("--out", out_path);

  auto* synth = app.add_subcommand("synth-gen", "write a synthetic RGB-thermal dataset");
  std::size_t n = 0;
  std::uint64_t synth_seed = 0;
  std::string synth_out, split = "train";
  SynthConfig synth_cfg;
  synth->add_option("--n", n, "number of pairs")->required();
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--out", synth_out, "dataset root")->required();
  synth->add_option("--split", split);
  synth->add_option("--image-size", synth_cfg.image_size);
  synth->add_option("--thermal-size", synth_cfg.thermal_size);
  synth->add_option("--max-objects", synth_cfg.max_objects);

  auto* train = app.add_subcommand("train-toy", "train the full model on a synthetic dataset");
  std::string config_path;
  std::vector<std::string> overrides;
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--set", overrides, "extra key=value entries overriding the file");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint, data_root = "data", eval_split = "val", precision = "f32";
  EvalOptions eval_opt;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data_root);
  eval->add_option("--split", eval_split);
  eval->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
  eval->add_option("--batch-size", eval_opt.batch_size);
  eval->add_option("--conf", eval_opt.conf_thresh);
  eval->add_option("--out", out_path);

  auto* bench = app.add_subcommand("bench", "edge cost of sparse versus dense aggregation");
  BenchOptions bench_opt;
  bench->add_option("--seed", bench_opt.seed);
  bench->add_flag("--timing", bench_opt.timing, "also time both aggregations (not reproducible)");
  bench->add_option("--repeats", bench_opt.timing_repeats);
  bench->add_option("--out", out_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) {
      GradSuiteOptions opt{grad_seed, inject_fault};
      const auto report = run_gradient_suite(opt);
      emit(dump(report.to_json()), out_path);
      return report.passed ? 0 : 1;
    }
    if (*gamma) emit(gamma_table_csv(), out_path);
    if (*synth) make_dataset(synth_out, n, synth_seed, split, synth_cfg);
    if (*train) {
      auto values = read_key_values(config_path);
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value: " + kv);
        values[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      const auto cfg = TrainConfig::from_map(values);
      train_toy(cfg, cfg.quiet ? nullptr : &std::cerr);
    }
    if (*eval) {
      const auto report =
          evaluate_checkpoint(checkpoint, data_root, eval_split, parse_precision(precision), eval_opt);
      emit(dump(report.to_json()), out_path);
    }
    if (*bench) emit(dump(run_bench(bench_opt)), out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
