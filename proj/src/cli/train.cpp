#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "msgnet/commands.hpp"

namespace msgnet {

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::kF32;
  if (name == "f64") return Precision::kF64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + name + "'");
}

std::string precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

std::map<std::string, std::string> TrainConfig::to_map() const {
  auto out = model.to_map();
  auto put = [&](const char* k, std::string v) { out[k] = std::move(v); };
  put("data_root", data_root.string());
  put("train_split", train_split);
  put("val_split", val_split);
  put("out_dir", out_dir.string());
  put("epochs", std::to_string(epochs));
  put("batch_size", std::to_string(batch_size));
  put("max_samples", std::to_string(max_samples));
  put("learning_rate", format_real(learning_rate));
  put("momentum", format_real(momentum));
  put("warmup_fraction", format_real(warmup_fraction));
  put("final_lr_fraction", format_real(final_lr_fraction));
  put("weight_decay", format_real(weight_decay));
  put("grad_clip", format_real(grad_clip));
  put("lambda_weight", format_real(lambda_weight));
  put("lambda_offset", format_real(lambda_offset));
  put("box_weight", format_real(loss_weights.box));
  put("dfl_weight", format_real(loss_weights.dfl));
  put("cls_weight", format_real(loss_weights.cls));
  put("precision", precision_name(precision));
  put("image_size", std::to_string(image_size));
  put("conf_thresh", format_real(conf_thresh));
  put("nms_iou", format_real(nms_iou));
  put("quiet", quiet ? "1" : "0");
  put("augment", augment ? "1" : "0");
  return out;
}

namespace {

bool parse_flag(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("expected 0/1/true/false");
}

}  // namespace

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values) {
  TrainConfig c;
  c.model = ModelConfig::from_map(values);
  const auto model_keys = c.model.to_map();
  for (const auto& [key, value] : values) {
    if (model_keys.count(key)) continue;
    auto real = [&] { return std::stod(value); };
    auto count = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    bool known = true;
    try {
      if (key == "data_root") c.data_root = value;
      else if (key == "train_split") c.train_split = value;
      else if (key == "val_split") c.val_split = value;
      else if (key == "out_dir") c.out_dir = value;
      else if (key == "epochs") c.epochs = count();
      else if (key == "batch_size") c.batch_size = count();
      else if (key == "max_samples") c.max_samples = count();
      else if (key == "learning_rate") c.learning_rate = real();
      else if (key == "momentum") c.momentum = real();
      else if (key == "warmup_fraction") c.warmup_fraction = real();
      else if (key == "final_lr_fraction") c.final_lr_fraction = real();
      else if (key == "weight_decay") c.weight_decay = real();
      else if (key == "grad_clip") c.grad_clip = real();
      else if (key == "lambda_weight") c.lambda_weight = real();
      else if (key == "lambda_offset") c.lambda_offset = real();
      else if (key == "box_weight") c.loss_weights.box = real();
      else if (key == "dfl_weight") c.loss_weights.dfl = real();
      else if (key == "cls_weight") c.loss_weights.cls = real();
      else if (key == "precision") c.precision = parse_precision(value);
      else if (key == "image_size") c.image_size = count();
      else if (key == "conf_thresh") c.conf_thresh = real();
      else if (key == "nms_iou") c.nms_iou = real();
      else if (key == "quiet") c.quiet = parse_flag(value);
      else if (key == "augment") c.augment = parse_flag(value);
      else known = false;
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad value '" + value + "' for config key '" + key + "'");
    }
    if (!known) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  return from_map(read_key_values(path));
}

namespace {

template <typename T>
FrameQuad<T> frames_at(const std::vector<SamplePair>& pairs, std::span<const std::size_t> idx) {
  std::vector<const Image*> rp, rc, tp, tc;
  for (auto i : idx) {
    rp.push_back(&pairs[i].rgb_prev);
    rc.push_back(&pairs[i].rgb_curr);
    tp.push_back(&pairs[i].th_prev);
    tc.push_back(&pairs[i].th_curr);
  }
  return {to_tensor<T>(rp), to_tensor<T>(rc), to_tensor<T>(tp), to_tensor<T>(tc)};
}

template <typename T>
double global_grad_norm(const ParamList<T>& params) {
  double s = 0;
  for (const auto& p : params)
    for (T g : p.tensor.grad()) s += static_cast<double>(g) * g;
  return std::sqrt(s);
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,box,dfl,cls,apl,total,val_ap50\n";
  out << std::setprecision(10);
  for (const auto& e : history) {
    out << e.epoch << ',' << e.box << ',' << e.dfl << ',' << e.cls << ',' << e.apl << ','
        << e.total << ',';
    if (e.val_ap50 >= 0) out << e.val_ap50;
    out << '\n';
  }
}

}  // namespace

template <typename T>
FrameQuad<T> make_frames(const std::vector<SamplePair>& pairs, std::size_t begin,
                         std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return frames_at<T>(pairs, idx);
}

template <typename T>
std::vector<EpochStats> train_model(MSGNet<T>& model, const std::vector<SamplePair>& train,
                                    const std::vector<SamplePair>* val, const TrainConfig& config,
                                    std::ostream* log) {
  if (train.empty()) throw std::invalid_argument("training split is empty");
  const auto params = model.parameters();
  std::vector<std::vector<T>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.tensor.numel(), T(0));

  const std::size_t n = train.size();
  const std::size_t bs = std::min(config.batch_size, n);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const auto warmup = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.warmup_fraction * double(total_steps))));
  const std::size_t H = train.front().rgb_curr.height, W = train.front().rgb_curr.width;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(config.model.seed ^ 0x5eed5eedULL);
  std::mt19937_64 augment_rng(config.model.seed ^ 0xa4a4a4a4ULL);
  const bool square = H == W && train.front().th_curr.height == train.front().th_curr.width;
  std::vector<EpochStats> history;
  std::size_t step = 0;
  auto& tape = Tape<T>::current();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t begin = 0; begin < n; begin += bs, ++step) {
      const std::size_t end = std::min(begin + bs, n);
      auto idx = std::span<const std::size_t>(order).subspan(begin, end - begin);
      std::vector<SamplePair> augmented;
      if (square && config.augment) {
        for (auto i : idx) augmented.push_back(apply_symmetry(train[i], unsigned(augment_rng() % 8)));
      }
      const auto& source = augmented.empty() ? train : augmented;
      std::vector<std::size_t> local(idx.size());
      std::iota(local.begin(), local.end(), 0);
      if (!augmented.empty()) idx = local;

      std::vector<GroundTruth> gts;
      std::vector<T> lambda_target;
      for (auto i : idx) {
        gts.push_back(source[i].annotations);
        lambda_target.push_back(static_cast<T>(source[i].true_scale - config.lambda_offset));
      }

      tape.reset();
      const auto out = model.forward(frames_at<T>(source, idx));
      auto det = detection_loss(out.head, assign_targets(gts, H, W), config.loss_weights);
      const Tensor<T> target({idx.size()}, lambda_target);
      // Log-space regression: its pull on the head's pre-softplus output grows
      // as lambda shrinks, which keeps the straight-through crop gradient from
      // driving lambda to zero.
      const auto log_target = natural_log(target);
      const auto dc = sub(natural_log(out.lambda_curr), log_target);
      const auto dp = sub(natural_log(out.lambda_prev), log_target);
      const auto apl = scale(add(mean(mul(dc, dc)), mean(mul(dp, dp))), T(0.5));
      const auto total = add(det.total, scale(apl, static_cast<T>(config.lambda_weight)));
      const double total_value = static_cast<double>(total.item());
      if (!std::isfinite(total_value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " step " << step << ": box=" << det.box
            << " dfl=" << det.dfl << " cls=" << det.cls << " apl=" << apl.item()
            << " (lower learning_rate or grad_clip)";
        throw DivergenceError(msg.str());
      }
      backward(total);

      double lr = config.learning_rate;
      if (step < warmup) {
        lr *= double(step + 1) / double(warmup);
      } else if (total_steps > warmup) {
        const double t = double(step - warmup) / double(total_steps - warmup);
        lr *= 1.0 - (1.0 - config.final_lr_fraction) * t;
      }
      double clip = 1.0;
      if (config.grad_clip > 0) {
        const double norm = global_grad_norm(params);
        if (!std::isfinite(norm)) {
          std::string names;
          for (const auto& p : params) {
            const auto g = p.tensor.grad();
            if (!std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(v); })) {
              names += (names.empty() ? "" : ", ") + p.name;
            }
          }
          throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch) +
                                " step " + std::to_string(step) + " in " + names);
        }
        if (norm > config.grad_clip) clip = config.grad_clip / norm;
      }
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].tensor;
        auto w = p.mutable_data();
        auto g = p.grad();
        auto& v = velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double gj = clip * double(g[j]) + config.weight_decay * double(w[j]);
          v[j] = static_cast<T>(config.momentum * double(v[j]) + gj);
          w[j] = static_cast<T>(double(w[j]) - lr * double(v[j]));
        }
        p.zero_grad();
      }

      const double weight = double(end - begin) / double(n);
      stats.box += weight * det.box;
      stats.dfl += weight * det.dfl;
      stats.cls += weight * det.cls;
      stats.apl += weight * static_cast<double>(apl.item());
      stats.total += weight * total_value;
    }
    tape.reset();
    if (val && !val->empty()) {
      EvalOptions opt;
      opt.batch_size = bs;
      opt.conf_thresh = config.conf_thresh;
      opt.nms_iou = config.nms_iou;
      stats.val_ap50 = evaluate_model(model, *val, opt).ap.ap50;
    }
    if (log) {
      *log << "epoch " << epoch << " box " << stats.box << " dfl " << stats.dfl << " cls "
           << stats.cls << " apl " << stats.apl << " total " << stats.total;
      if (stats.val_ap50 >= 0) *log << " val_ap50 " << stats.val_ap50;
      *log << std::endl;
    }
    history.push_back(stats);
  }
  return history;
}

namespace {

template <typename T>
TrainResult train_toy_typed(const TrainConfig& config, std::ostream* log) {
  auto train = load_split(config.data_root, config.train_split);
  if (config.max_samples && train.size() > config.max_samples) train.resize(config.max_samples);
  if (train.empty()) {
    throw std::runtime_error("no samples in " + (config.data_root / config.train_split).string());
  }
  if (train.front().rgb_curr.height != config.image_size ||
      train.front().rgb_curr.width != config.image_size) {
    throw std::invalid_argument("dataset images are " +
                                std::to_string(train.front().rgb_curr.height) + "x" +
                                std::to_string(train.front().rgb_curr.width) +
                                " but image_size is " + std::to_string(config.image_size));
  }
  std::vector<SamplePair> val;
  if (!config.val_split.empty() &&
      std::filesystem::exists(config.data_root / config.val_split)) {
    val = load_split(config.data_root, config.val_split);
  }

  MSGNet<T> model(config.model);
  std::filesystem::create_directories(config.out_dir);
  write_key_values(config.out_dir / "config.txt", config.to_map());
  TrainResult result;
  result.history = train_model(model, train, val.empty() ? nullptr : &val, config, log);
  write_metrics(config.out_dir / "metrics.csv", result.history);
  result.checkpoint = config.out_dir / "checkpoint";
  model.save(result.checkpoint);
  return result;
}

}  // namespace

TrainResult train_toy(const TrainConfig& config, std::ostream* log) {
  return config.precision == Precision::kF64 ? train_toy_typed<double>(config, log)
                                             : train_toy_typed<float>(config, log);
}

template <typename T>
EvalReport evaluate_model(const MSGNet<T>& model, const std::vector<SamplePair>& pairs,
                          const EvalOptions& options) {
  EvalReport report;
  report.samples = pairs.size();
  if (pairs.empty()) return report;
  NoGradGuard guard;
  const std::size_t H = pairs.front().rgb_curr.height, W = pairs.front().rgb_curr.width;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  std::vector<std::vector<Detection>> dets;
  std::vector<GroundTruth> gts;
  std::array<double, 3> spatial_dst{0, 0, 0};
  std::array<std::size_t, 3> temporal_dst{0, 0, 0};
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < pairs.size(); begin += bs) {
    const std::size_t end = std::min(begin + bs, pairs.size());
    const auto out = model.forward(make_frames<T>(pairs, begin, end));
    auto decoded = decode_detections(out.head, H, W, options.conf_thresh);
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      for (auto& d : decoded[i]) d.image_id = begin + i;
      dets.push_back(nms(decoded[i], options.nms_iou, options.conf_thresh));
      gts.push_back(pairs[begin + i].annotations);
      const auto truth = gamma_bin_index(lambda_to_gamma(pairs[begin + i].true_scale));
      const auto pred = gamma_bin_index(out.decisions[i].gamma);
      ++report.gamma_confusion[truth][pred];
      if (truth == pred) ++correct;
    }
    for (std::size_t l = 0; l < 3; ++l) {
      report.spatial_edges[l] += double(out.spatial.edges[l]);
      spatial_dst[l] += double(out.spatial.destinations[l]);
      report.temporal_edges[l] += double(out.temporal_edges[l]);
      temporal_dst[l] += out.head[l].cls.dim(2) * out.head[l].cls.dim(3) * (end - begin);
    }
  }
  report.ap = evaluate(dets, gts, model.config().num_classes);
  const double n = double(pairs.size());
  report.gamma_accuracy = double(correct) / n;
  for (std::size_t l = 0; l < 3; ++l) {
    report.spatial_edges_per_dst[l] = spatial_dst[l] > 0 ? report.spatial_edges[l] / spatial_dst[l] : 0.0;
    report.temporal_edges_per_dst[l] =
        temporal_dst[l] > 0 ? report.temporal_edges[l] / double(temporal_dst[l]) : 0.0;
    report.spatial_edges[l] /= n;
    report.temporal_edges[l] /= n;
  }
  return report;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  j["ap50"] = ap.ap50;
  j["ap"] = ap.ap;
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& c : ap.per_class) {
    pc.push_back({{"class_id", c.class_id}, {"num_gt", c.num_gt}, {"ap50", c.ap50}, {"ap", c.ap}});
  }
  j["gamma_bins"] = kGammaBins;
  j["gamma_confusion"] = gamma_confusion;
  j["gamma_accuracy"] = gamma_accuracy;
  j["spatial_edges_per_sample"] = spatial_edges;
  j["spatial_edges_per_dst"] = spatial_edges_per_dst;
  j["temporal_edges_per_sample"] = temporal_edges;
  j["temporal_edges_per_dst"] = temporal_edges_per_dst;
  return j;
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_root, const std::string& split,
                               Precision precision, const EvalOptions& options) {
  const auto pairs = load_split(data_root, split);
  if (precision == Precision::kF64) {
    return evaluate_model(MSGNet<double>::load(checkpoint), pairs, options);
  }
  return evaluate_model(MSGNet<float>::load(checkpoint), pairs, options);
}

template FrameQuad<float> make_frames(const std::vector<SamplePair>&, std::size_t, std::size_t);
template FrameQuad<double> make_frames(const std::vector<SamplePair>&, std::size_t, std::size_t);
template std::vector<EpochStats> train_model(MSGNet<float>&, const std::vector<SamplePair>&,
                                             const std::vector<SamplePair>*, const TrainConfig&,
                                             std::ostream*);
template std::vector<EpochStats> train_model(MSGNet<double>&, const std::vector<SamplePair>&,
                                             const std::vector<SamplePair>*, const TrainConfig&,
                                             std::ostream*);
template EvalReport evaluate_model(const MSGNet<float>&, const std::vector<SamplePair>&,
                                   const EvalOptions&);
template EvalReport evaluate_model(const MSGNet<double>&, const std::vector<SamplePair>&,
                                   const EvalOptions&);

}  // namespace msgnet
