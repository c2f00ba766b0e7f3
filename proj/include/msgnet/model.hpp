#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "msgnet/detect.hpp"
#include "msgnet/encoder.hpp"
#include "msgnet/hstm.hpp"
#include "msgnet/ssglm.hpp"

namespace msgnet {

struct ModelConfig {
  std::size_t base_channels = 16;
  std::size_t num_classes = 3;
  double tau = 0.25;
  std::size_t k_spatial = 25;
  std::size_t k_temporal = 100;
  std::uint64_t seed = 0;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

// The four input frames: RGB and thermal at t-1 and t. RGB is [B,3,H,W],
// thermal [B,1,Ht,Wt].
template <typename T>
struct FrameQuad {
  Tensor<T> rgb_prev, rgb_curr;
  Tensor<T> th_prev, th_curr;
};

template <typename T>
struct ModelOutput {
  HeadOutput<T> head;
  Tensor<T> lambda_curr;  // [B]
  Tensor<T> lambda_prev;
  std::vector<PartitionDecision> decisions;  // frame t
  GraphStats spatial;                       // frame t
  std::array<std::size_t, 3> temporal_edges{0, 0, 0};
};

template <typename T>
class MSGNet {
 public:
  explicit MSGNet(const ModelConfig& config);

  ModelOutput<T> forward(const FrameQuad<T>& frames) const;

  const ModelConfig& config() const { return config_; }
  Encoder<T>& encoder() { return encoder_; }
  SpatialSparseGraph<T>& spatial() { return spatial_; }
  HybridTemporal<T>& temporal() { return temporal_; }
  DetectionHead<T>& head() { return head_; }
  ParamList<T> parameters() const;

  // Directory checkpoint: weights.msgt + manifest.txt + config.txt.
  void save(const std::filesystem::path& dir) const;
  static MSGNet load(const std::filesystem::path& dir);

 private:
  ModelConfig config_;
  Encoder<T> encoder_;
  SpatialSparseGraph<T> spatial_;
  HybridTemporal<T> temporal_;
  DetectionHead<T> head_;
};

// key=value lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
// Shortest form that reads back to the same double.
std::string format_real(double v);

void write_key_values(const std::filesystem::path& path,
                      const std::map<std::string, std::string>& values);

}  // namespace msgnet
