#include "msgnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "msgnet/apl.hpp"

namespace msgnet {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(n)));
}

// Smoothly interpolated lattice of random values in [0,1].
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, double spacing, double height, double width)
      : spacing_(spacing),
        rows_(static_cast<std::size_t>(std::ceil(height / spacing)) + 2),
        cols_(static_cast<std::size_t>(std::ceil(width / spacing)) + 2),
        lattice_(rows_ * cols_) {
    for (auto& v : lattice_) v = unit(rng);
  }

  double operator()(double y, double x) const {
    auto locate = [this](double v, std::size_t n, std::size_t& i) {
      const double g = std::clamp(v / spacing_, 0.0, static_cast<double>(n - 1) - 1e-9);
      i = static_cast<std::size_t>(g);
      const double t = g - static_cast<double>(i);
      return t * t * (3.0 - 2.0 * t);
    };
    std::size_t r = 0, c = 0;
    const double ty = locate(y, rows_, r);
    const double tx = locate(x, cols_, c);
    const double* row0 = lattice_.data() + r * cols_ + c;
    const double* row1 = row0 + cols_;
    const double top = row0[0] + (row0[1] - row0[0]) * tx;
    const double bottom = row1[0] + (row1[1] - row1[0]) * tx;
    return top + (bottom - top) * ty;
  }

 private:
  double spacing_;
  std::size_t rows_, cols_;
  std::vector<double> lattice_;
};

// Two octaves of value noise.
class Texture {
 public:
  Texture(std::mt19937_64& rng, double spacing, double height, double width)
      : coarse_(rng, spacing, height, width), fine_(rng, spacing / 2, height, width) {}
  double operator()(double y, double x) const {
    return (2.0 * coarse_(y, x) + fine_(y, x)) / 3.0;
  }

 private:
  ValueNoise coarse_, fine_;
};

// Signed distance to the outline, negative inside.
double signed_distance(const SceneObject& o, double cx, double cy, double y, double x) {
  const double r = 0.5 * o.size;
  const double dx = x - cx, dy = y - cy;
  switch (o.shape) {
    case ShapeKind::kCircle:
      return std::hypot(dx, dy) - r;
    case ShapeKind::kSquare: {
      const double qx = std::abs(dx) - r, qy = std::abs(dy) - r;
      return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
    }
    case ShapeKind::kTriangle: {
      // Apex up at (cx, cy - r), base corners at (cx +- r, cy + r).
      const double n = 1.0 / std::sqrt(5.0);
      const double side = (2.0 * std::abs(dx) - dy - r) * n;
      return std::max(side, dy - r);
    }
  }
  return 0.0;
}

double coverage(double sd, double softness) { return std::clamp(0.5 - sd / softness, 0.0, 1.0); }

constexpr double kRgbSoftness = 1.0;
constexpr double kHeatSoftness = 1.5;

// Scene textures are rebuilt from the seed so rendering stays a pure function
// of the SceneSpec. The shared layer is the ground structure both sensors see; the
// other layers are modality specific.
struct SceneTextures {
  Texture shared;
  std::array<Texture, 3> color;
  Texture heat;

  explicit SceneTextures(const SceneSpec& spec, std::mt19937_64 rng)
      : shared(rng, spec.height / 8.0, spec.height, spec.width),
        color{Texture(rng, spec.height / 8.0, spec.height, spec.width),
              Texture(rng, spec.height / 8.0, spec.height, spec.width),
              Texture(rng, spec.height / 8.0, spec.height, spec.width)},
        heat(rng, spec.height / 10.0, spec.height, spec.width) {}
};

constexpr double kSharedWeight = 0.5;

std::mt19937_64 texture_rng(const SceneSpec& spec) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    0x7e47u};
  return std::mt19937_64(seq);
}

double heat_at(const SceneSpec& spec, const SceneTextures& tex, double frame, double y, double x) {
  double h = 0.05 + 0.5 * (kSharedWeight * tex.shared(y, x) + (1.0 - kSharedWeight) * tex.heat(y, x));
  for (const auto& o : spec.objects) {
    const double a =
        coverage(signed_distance(o, o.cx + frame * o.vx, o.cy + frame * o.vy, y, x), kHeatSoftness);
    h += a * (o.heat - h);
  }
  return h;
}

Image render_rgb(const SceneSpec& spec, const SceneTextures& tex, double frame) {
  Image img{3, spec.height, spec.width, std::vector<double>(3 * spec.height * spec.width)};
  const std::size_t plane = spec.height * spec.width;
  for (std::size_t yi = 0; yi < spec.height; ++yi) {
    for (std::size_t xi = 0; xi < spec.width; ++xi) {
      const double y = yi + 0.5, x = xi + 0.5;
      std::array<double, 3> c;
      const double base = tex.shared(y, x);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        c[ch] = 0.2 + 0.5 * (kSharedWeight * base + (1.0 - kSharedWeight) * tex.color[ch](y, x));
      }
      for (const auto& o : spec.objects) {
        const double a = coverage(
            signed_distance(o, o.cx + frame * o.vx, o.cy + frame * o.vy, y, x), kRgbSoftness);
        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] += a * (o.rgb[ch] - c[ch]);
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img.pixels[ch * plane + yi * spec.width + xi] = c[ch] * spec.illumination;
      }
    }
  }
  return img;
}

Image render_thermal(const SceneSpec& spec, const SceneTextures& tex, double frame) {
  Image img{1, spec.thermal_height, spec.thermal_width,
            std::vector<double>(spec.thermal_height * spec.thermal_width)};
  const double win_h = spec.true_scale * spec.height, win_w = spec.true_scale * spec.width;
  const double top = 0.5 * (spec.height - win_h), left = 0.5 * (spec.width - win_w);
  const double step_y = win_h / spec.thermal_height, step_x = win_w / spec.thermal_width;
  for (std::size_t i = 0; i < spec.thermal_height; ++i) {
    for (std::size_t j = 0; j < spec.thermal_width; ++j) {
      img.pixels[i * spec.thermal_width + j] =
          heat_at(spec, tex, frame, top + (i + 0.5) * step_y, left + (j + 0.5) * step_x);
    }
  }
  return img;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& stream, std::uint64_t index) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (unsigned char ch : stream) words.push_back(ch);
  words.push_back(static_cast<std::uint32_t>(index));
  words.push_back(static_cast<std::uint32_t>(index >> 32));
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out;
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

Box SceneObject::box(double frame_offset) const {
  return {cx + frame_offset * vx, cy + frame_offset * vy, size, size};
}

void SceneSpec::validate() const {
  if (std::find(kGammaBins.begin(), kGammaBins.end(), true_scale) == kGammaBins.end()) {
    throw std::invalid_argument("scene: true scale " + std::to_string(true_scale) +
                                " is not a bin value");
  }
  if (thermal_height == 0 || thermal_width == 0 || thermal_height > height ||
      thermal_width > width) {
    throw std::invalid_argument("scene: thermal grid must be non-empty and no larger than the canvas");
  }
  for (const auto& o : objects) {
    for (double f : {0.0, -1.0}) {
      const Box b = o.box(f);
      if (b.x1() < 0 || b.y1() < 0 || b.x2() > static_cast<double>(width) ||
          b.y2() > static_cast<double>(height)) {
        throw std::invalid_argument("scene: object leaves the canvas at frame offset " +
                                    std::to_string(static_cast<int>(f)));
      }
    }
  }
}

SceneSpec random_scene(std::uint64_t seed, const SynthConfig& config, double true_scale,
                       std::size_t class_offset) {
  std::mt19937_64 rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.height = spec.width = config.image_size;
  spec.thermal_height = spec.thermal_width = config.thermal_size;
  spec.true_scale = true_scale < 0 ? kGammaBins[pick(rng, kGammaBins.size())] : true_scale;
  spec.illumination = uniform(rng, config.min_illumination, 1.0);
  const double canvas = static_cast<double>(config.image_size);
  const std::size_t wanted = 1 + pick(rng, config.max_objects);
  for (std::size_t k = 0; k < wanted; ++k) {
    SceneObject o;
    o.class_id = (class_offset + k) % kNumShapeClasses;
    o.shape = static_cast<ShapeKind>(o.class_id);
    // Saturated colors: every channel either dark or bright, never all equal.
    const std::size_t pattern = 1 + pick(rng, 6);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      o.rgb[ch] = (pattern >> ch) & 1 ? uniform(rng, 0.8, 1.0) : uniform(rng, 0.0, 0.15);
    }
    o.heat = uniform(rng, 0.65, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
      o.size = uniform(rng, 0.19, 0.375) * canvas;
      o.vx = uniform(rng, -config.max_velocity, config.max_velocity);
      o.vy = uniform(rng, -config.max_velocity, config.max_velocity);
      const double r = 0.5 * o.size + 1.0;
      o.cx = uniform(rng, r + std::max(0.0, o.vx), canvas - r + std::min(0.0, o.vx));
      o.cy = uniform(rng, r + std::max(0.0, o.vy), canvas - r + std::min(0.0, o.vy));
      const Box b = o.box();
      const bool clear = std::none_of(spec.objects.begin(), spec.objects.end(), [&](const auto& p) {
        const Box q = p.box();
        return std::abs(q.cx - b.cx) < 0.5 * (q.w + b.w) + 2.0 &&
               std::abs(q.cy - b.cy) < 0.5 * (q.h + b.h) + 2.0;
      });
      if (clear) {
        spec.objects.push_back(o);
        break;
      }
    }
  }
  spec.validate();
  return spec;
}

Image render_heat_rgb_grid(const SceneSpec& spec, double frame_offset) {
  const SceneTextures tex(spec, texture_rng(spec));
  Image img{1, spec.height, spec.width, std::vector<double>(spec.height * spec.width)};
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x)
      img.pixels[y * spec.width + x] = heat_at(spec, tex, frame_offset, y + 0.5, x + 0.5);
  return img;
}

SamplePair render(const SceneSpec& spec) {
  spec.validate();
  const SceneTextures tex(spec, texture_rng(spec));
  SamplePair pair;
  pair.rgb_curr = render_rgb(spec, tex, 0.0);
  pair.rgb_prev = render_rgb(spec, tex, -1.0);
  pair.th_curr = render_thermal(spec, tex, 0.0);
  pair.th_prev = render_thermal(spec, tex, -1.0);
  for (const auto& o : spec.objects) {
    pair.annotations.boxes.push_back(o.box());
    pair.annotations.classes.push_back(o.class_id);
  }
  pair.true_scale = spec.true_scale;
  return pair;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_pnm: only 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << "\n255\n";
  const std::size_t plane = image.height * image.width;
  std::vector<unsigned char> bytes(plane * image.channels);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < image.channels; ++c) {
      const double v = std::clamp(image.pixels[c * plane + p], 0.0, 1.0);
      bytes[p * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto token = [&in] {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::getline(in, t);
    }
    throw std::runtime_error("truncated image header");
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw std::runtime_error(path.string() + ": not P5/P6");
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  if (std::stoul(token()) != 255) throw std::runtime_error(path.string() + ": expected maxval 255");
  in.get();
  const std::size_t plane = img.height * img.width;
  std::vector<unsigned char> bytes(plane * img.channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  img.pixels.resize(bytes.size());
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < img.channels; ++c)
      img.pixels[c * plane + p] = bytes[p * img.channels + c] / 255.0;
  return img;
}

void write_sample(const std::filesystem::path& dir, std::size_t id, const SamplePair& pair) {
  char stem[16];
  std::snprintf(stem, sizeof stem, "%05zu", id);
  const std::string s = stem;
  write_pnm(dir / (s + "_rgb_t.ppm"), pair.rgb_curr);
  write_pnm(dir / (s + "_rgb_tm1.ppm"), pair.rgb_prev);
  write_pnm(dir / (s + "_th_t.pgm"), pair.th_curr);
  write_pnm(dir / (s + "_th_tm1.pgm"), pair.th_prev);
  nlohmann::json ann;
  ann["boxes"] = nlohmann::json::array();
  for (const auto& b : pair.annotations.boxes) ann["boxes"].push_back({b.cx, b.cy, b.w, b.h});
  ann["classes"] = pair.annotations.classes;
  ann["true_scale"] = pair.true_scale;
  std::ofstream(dir / (s + "_ann.json")) << ann.dump() << '\n';
}

SamplePair read_sample(const std::filesystem::path& dir, const std::string& stem) {
  SamplePair pair;
  pair.rgb_curr = read_pnm(dir / (stem + "_rgb_t.ppm"));
  pair.rgb_prev = read_pnm(dir / (stem + "_rgb_tm1.ppm"));
  pair.th_curr = read_pnm(dir / (stem + "_th_t.pgm"));
  pair.th_prev = read_pnm(dir / (stem + "_th_tm1.pgm"));
  std::ifstream in(dir / (stem + "_ann.json"));
  if (!in) throw std::runtime_error("missing annotation for " + stem);
  const auto ann = nlohmann::json::parse(in);
  for (const auto& b : ann.at("boxes")) {
    pair.annotations.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                                      b.at(2).get<double>(), b.at(3).get<double>()});
  }
  pair.annotations.classes = ann.at("classes").get<std::vector<std::size_t>>();
  pair.true_scale = ann.at("true_scale").get<double>();
  return pair;
}

std::vector<SamplePair> load_split(const std::filesystem::path& root, const std::string& split) {
  const auto dir = root / split;
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("dataset split not found: " + dir.string());
  }
  const std::string suffix = "_ann.json";
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      stems.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  std::vector<SamplePair> pairs;
  for (const auto& s : stems) pairs.push_back(read_sample(dir, s));
  return pairs;
}

void make_dataset(const std::filesystem::path& root, std::size_t n, std::uint64_t seed,
                  const std::string& split, const SynthConfig& config) {
  if (n == 0) throw std::invalid_argument("make_dataset: n must be >= 1");
  const auto dir = root / split;
  std::filesystem::create_directories(dir);
  std::size_t objects = 0;
  std::array<double, kGammaBins.size()> block{};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t slot = i % block.size();
    if (slot == 0) {
      std::mt19937_64 rng(derive_seed(seed, split + "/scale", i / block.size()));
      std::copy(kGammaBins.begin(), kGammaBins.end(), block.begin());
      for (std::size_t j = block.size() - 1; j > 0; --j) std::swap(block[j], block[pick(rng, j + 1)]);
    }
    const auto spec = random_scene(derive_seed(seed, split, i), config, block[slot], objects);
    objects += spec.objects.size();
    write_sample(dir, i, render(spec));
  }
}

namespace {

void check_symmetry(unsigned k, std::size_t height, std::size_t width) {
  if (k > 7) throw std::invalid_argument("symmetry index must be in [0,8)");
  if ((k & 4u) && height != width) {
    throw std::invalid_argument("transposing symmetry needs square frames, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

Image apply_symmetry(const Image& image, unsigned k) {
  check_symmetry(k, image.height, image.width);
  Image out = image;
  const std::size_t H = image.height, W = image.width;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t ty = (k & 4u) ? x : y, tx = (k & 4u) ? y : x;
        if (k & 1u) tx = W - 1 - tx;
        if (k & 2u) ty = H - 1 - ty;
        out.pixels[(c * H + ty) * W + tx] = image.at(c, y, x);
      }
    }
  }
  return out;
}

Box apply_symmetry(const Box& box, std::size_t height, std::size_t width, unsigned k) {
  check_symmetry(k, height, width);
  Box b = box;
  if (k & 4u) b = Box{box.cy, box.cx, box.h, box.w};
  if (k & 1u) b.cx = static_cast<double>(width) - b.cx;
  if (k & 2u) b.cy = static_cast<double>(height) - b.cy;
  return b;
}

SamplePair apply_symmetry(const SamplePair& pair, unsigned k) {
  SamplePair out;
  out.rgb_prev = apply_symmetry(pair.rgb_prev, k);
  out.rgb_curr = apply_symmetry(pair.rgb_curr, k);
  out.th_prev = apply_symmetry(pair.th_prev, k);
  out.th_curr = apply_symmetry(pair.th_curr, k);
  out.annotations.classes = pair.annotations.classes;
  for (const auto& b : pair.annotations.boxes) {
    out.annotations.boxes.push_back(
        apply_symmetry(b, pair.rgb_curr.height, pair.rgb_curr.width, k));
  }
  out.true_scale = pair.true_scale;
  return out;
}

template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const auto& first = *images.front();
  std::vector<T> data;
  data.reserve(images.size() * first.pixels.size());
  for (const auto* img : images) {
    if (img->channels != first.channels || img->height != first.height ||
        img->width != first.width) {
      throw ShapeError("to_tensor: images differ in shape");
    }
    for (double v : img->pixels) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({images.size(), first.channels, first.height, first.width}, std::move(data));
}

template Tensor<float> to_tensor(const std::vector<const Image*>&);
template Tensor<double> to_tensor(const std::vector<const Image*>&);

}  // namespace msgnet
