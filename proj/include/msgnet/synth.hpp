#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msgnet/detect.hpp"

namespace msgnet {

enum class ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr std::size_t kNumShapeClasses = 3;

struct SceneObject {
  ShapeKind shape = ShapeKind::kCircle;
  std::size_t class_id = 0;
  double cx = 0.0;  // center at frame t, pixels
  double cy = 0.0;
  double size = 0.0;  // bounding extent, pixels
  double vx = 0.0;    // displacement per frame
  double vy = 0.0;
  std::array<double, 3> rgb{0.0, 0.0, 0.0};
  double heat = 0.0;

  // Box at frame t (offset 0) or t-1 (offset -1).
  Box box(double frame_offset = 0.0) const;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<SceneObject> objects;
  double true_scale = 1.0;
  std::size_t thermal_height = 64;
  std::size_t thermal_width = 64;
  double illumination = 1.0;

  // Throws std::invalid_argument when an object leaves the canvas at either
  // frame, the scale is not a bin value, or the thermal grid is larger than
  // the canvas.
  void validate() const;
};

// Planar image, values in [0,1], channel-major.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
};

struct SamplePair {
  Image rgb_prev, rgb_curr;
  Image th_prev, th_curr;
  GroundTruth annotations;  // RGB pixel coordinates at frame t
  double true_scale = 1.0;
};

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t thermal_size = 64;
  std::size_t max_objects = 3;
  double min_illumination = 0.3;
  double max_velocity = 3.0;
};

// Draws a random scene; object classes start at class_offset and cycle over
// the three shapes. true_scale < 0 draws it uniformly from the bins.
SceneSpec random_scene(std::uint64_t seed, const SynthConfig& config, double true_scale = -1.0,
                       std::size_t class_offset = 0);

SamplePair render(const SceneSpec& spec);

// Heat intensity of the scene at frame offset 0 or -1, sampled at every RGB
// pixel center. The thermal frame is this field restricted to the centered
// true_scale window and resampled to the thermal grid.
Image render_heat_rgb_grid(const SceneSpec& spec, double frame_offset = 0.0);

// Writes n pairs to <root>/<split>/. Scales are balanced in blocks of five,
// seeds of the two splits come from disjoint streams.
void make_dataset(const std::filesystem::path& root, std::size_t n, std::uint64_t seed,
                  const std::string& split, const SynthConfig& config = {});

void write_sample(const std::filesystem::path& dir, std::size_t id, const SamplePair& pair);
SamplePair read_sample(const std::filesystem::path& dir, const std::string& stem);

// Every pair of <root>/<split>, in file-name order.
std::vector<SamplePair> load_split(const std::filesystem::path& root, const std::string& split);

void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

// One of the eight symmetries of the square: bit 2 transposes, then bit 0
// mirrors columns and bit 1 mirrors rows. Transposition needs square frames.
// Scale and the centered thermal window are preserved.
Image apply_symmetry(const Image& image, unsigned k);
Box apply_symmetry(const Box& box, std::size_t height, std::size_t width, unsigned k);
SamplePair apply_symmetry(const SamplePair& pair, unsigned k);

// Stacks images into [B,C,H,W].
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images);

}  // namespace msgnet
