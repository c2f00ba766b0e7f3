#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "msgnet/model.hpp"
#include "msgnet/synth.hpp"

namespace msgnet {

enum class Precision { kF32, kF64 };

Precision parse_precision(const std::string& name);
std::string precision_name(Precision p);

struct TrainConfig {
  std::filesystem::path data_root = "data";
  std::string train_split = "train";
  std::string val_split = "val";  // empty skips validation
  std::filesystem::path out_dir = "run";
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::size_t max_samples = 0;  // 0 uses the whole split
  double learning_rate = 0.01;
  double momentum = 0.938;
  double warmup_fraction = 0.05;
  // After warm-up the rate decays linearly to learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.01;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm, 0 disables
  // Auxiliary regression of log lambda toward log(true_scale - lambda_offset);
  // the target sits in the middle of the gamma bin of true_scale.
  double lambda_weight = 5.0;
  double lambda_offset = 0.1;
  LossWeights loss_weights;
  Precision precision = Precision::kF32;
  std::size_t image_size = 64;
  double conf_thresh = 0.25;
  double nms_iou = 0.65;
  // Draws one of the eight square symmetries per training sample.
  bool augment = true;
  ModelConfig model;
  bool quiet = false;

  std::map<std::string, std::string> to_map() const;
  // Unknown keys throw std::invalid_argument.
  static TrainConfig from_map(const std::map<std::string, std::string>& values);
  static TrainConfig from_file(const std::filesystem::path& path);
};

struct EpochStats {
  std::size_t epoch = 0;
  double box = 0.0;
  double dfl = 0.0;
  double cls = 0.0;
  double apl = 0.0;
  double total = 0.0;
  double val_ap50 = -1.0;  // -1 when no validation split
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::filesystem::path checkpoint;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SGD with momentum and linear warm-up. Writes <out_dir>/metrics.csv,
// <out_dir>/config.txt and <out_dir>/checkpoint/. Throws DivergenceError on a
// non-finite loss.
TrainResult train_toy(const TrainConfig& config, std::ostream* log = nullptr);

// Same loop on pairs already in memory; the model is updated in place.
template <typename T>
std::vector<EpochStats> train_model(MSGNet<T>& model, const std::vector<SamplePair>& train,
                                    const std::vector<SamplePair>* val, const TrainConfig& config,
                                    std::ostream* log = nullptr);

struct EvalOptions {
  std::size_t batch_size = 8;
  double conf_thresh = 0.25;
  double nms_iou = 0.65;
};

struct EvalReport {
  APReport ap;
  // Rows: gamma bin of true_scale, columns: predicted bin.
  std::array<std::array<std::size_t, 5>, 5> gamma_confusion{};
  double gamma_accuracy = 0.0;
  std::size_t samples = 0;
  // Kept edges per destination node, averaged over samples.
  std::array<double, 3> spatial_edges_per_dst{0, 0, 0};
  std::array<double, 3> temporal_edges_per_dst{0, 0, 0};
  std::array<double, 3> spatial_edges{0, 0, 0};  // per sample
  std::array<double, 3> temporal_edges{0, 0, 0};

  nlohmann::ordered_json to_json() const;
};

template <typename T>
EvalReport evaluate_model(const MSGNet<T>& model, const std::vector<SamplePair>& pairs,
                          const EvalOptions& options = {});

// Loads <checkpoint> and evaluates it on <data_root>/<split>.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_root, const std::string& split,
                               Precision precision, const EvalOptions& options = {});

template <typename T>
FrameQuad<T> make_frames(const std::vector<SamplePair>& pairs, std::size_t begin, std::size_t end);

// "lambda,gamma" rows for lambda = 0, 0.01, ..., 1.5.
std::string gamma_table_csv();

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  // Adds an op whose backward is scaled by 1.1, to prove the suite fails.
  bool inject_fault = false;
};

struct GradSuiteEntry {
  std::string name;
  bool composite = false;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  bool passed = true;

  nlohmann::ordered_json to_json() const;
};

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options = {});

struct BenchOptions {
  std::uint64_t seed = 0;
  std::size_t width = 16;
  std::vector<std::size_t> sizes{64, 256, 1024};
  std::vector<std::size_t> ks{10, 25, 50, 100};
  std::vector<double> taus{0.0, 0.25, 0.5, 0.75};
  // Timing is reported in its own section so the counting table stays
  // reproducible.
  bool timing = false;
  std::size_t timing_repeats = 5;
};

nlohmann::ordered_json run_bench(const BenchOptions& options = {});

}  // namespace msgnet
