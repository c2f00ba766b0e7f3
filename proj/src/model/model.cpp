#include "msgnet/model.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "msgnet/serialize.hpp"

namespace msgnet {

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void write_key_values(const std::filesystem::path& path,
                      const std::map<std::string, std::string>& values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : values) out << k << '=' << v << '\n';
}

std::string format_real(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"base_channels", std::to_string(base_channels)},
          {"num_classes", std::to_string(num_classes)},
          {"tau", format_real(tau)},
          {"k_spatial", std::to_string(k_spatial)},
          {"k_temporal", std::to_string(k_temporal)},
          {"seed", std::to_string(seed)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    auto it = values.find(key);
    if (it == values.end()) return;
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_floating_point_v<F>) field = std::stod(it->second);
    else field = static_cast<F>(std::stoull(it->second));
  };
  get("base_channels", c.base_channels);
  get("num_classes", c.num_classes);
  get("tau", c.tau);
  get("k_spatial", c.k_spatial);
  get("k_temporal", c.k_temporal);
  get("seed", c.seed);
  return c;
}

namespace {

template <typename T>
std::array<std::size_t, 3> level_channels(const Encoder<T>& enc) {
  return {enc.channels(0), enc.channels(1), enc.channels(2)};
}

}  // namespace

// Submodules draw their initial weights from one generator in a fixed order.
template <typename T>
MSGNet<T>::MSGNet(const ModelConfig& config) : config_(config) {
  std::mt19937_64 rng(config.seed);
  encoder_ = Encoder<T>(config.base_channels, rng);
  const auto ch = level_channels(encoder_);
  spatial_ = SpatialSparseGraph<T>(ch, rng, config.tau, config.k_spatial);
  temporal_ = HybridTemporal<T>(ch, rng, config.tau, config.k_temporal);
  head_ = DetectionHead<T>(ch, config.num_classes, rng);
}

template <typename T>
ModelOutput<T> MSGNet<T>::forward(const FrameQuad<T>& frames) const {
  const auto rgb_prev = encoder_.encode(frames.rgb_prev);
  const auto rgb_curr = encoder_.encode(frames.rgb_curr);
  const auto th_prev = encoder_.encode(frames.th_prev);
  const auto th_curr = encoder_.encode(frames.th_curr);
  auto prev = spatial_.fuse_modalities(rgb_prev, th_prev);
  auto curr = spatial_.fuse_modalities(rgb_curr, th_curr);
  ModelOutput<T> out;
  const auto mixed = temporal_(prev.fused, curr.fused, &out.temporal_edges);
  out.head = head_(mixed);
  out.lambda_curr = curr.lambda;
  out.lambda_prev = prev.lambda;
  out.decisions = std::move(curr.decisions);
  out.spatial = curr.stats;
  return out;
}

template <typename T>
ParamList<T> MSGNet<T>::parameters() const {
  ParamList<T> out;
  append_params(out, "encoder.", encoder_.parameters());
  append_params(out, "ssglm.", spatial_.parameters());
  append_params(out, "hstm.", temporal_.parameters());
  append_params(out, "head.", head_.parameters());
  return out;
}

template <typename T>
void MSGNet<T>::save(const std::filesystem::path& dir) const {
  std::vector<NamedTensor> tensors;
  for (const auto& p : parameters()) {
    NamedTensor t{p.name, p.tensor.shape(), {}};
    t.values.assign(p.tensor.data().begin(), p.tensor.data().end());
    tensors.push_back(std::move(t));
  }
  save_checkpoint(dir, tensors);
  write_key_values(dir / "config.txt", config_.to_map());
}

template <typename T>
MSGNet<T> MSGNet<T>::load(const std::filesystem::path& dir) {
  MSGNet<T> model(ModelConfig::from_map(read_key_values(dir / "config.txt")));
  std::map<std::string, NamedTensor> stored;
  for (auto& t : load_checkpoint(dir)) stored.emplace(t.name, std::move(t));
  for (auto& p : model.parameters()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw std::runtime_error("checkpoint lacks tensor " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw ShapeError("checkpoint tensor " + p.name + " has shape " +
                       shape_str(it->second.shape) + ", model expects " +
                       shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
  return model;
}

template class MSGNet<float>;
template class MSGNet<double>;

}  // namespace msgnet
