#include <filesystem>

#include "doctest.h"
#include "msgnet/model.hpp"
#include "support/test_util.hpp"

using namespace msgnet;
using namespace msgnet::testing;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(std::uint64_t seed = 0) {
  ModelConfig c;
  c.base_channels = 4;
  c.seed = seed;
  return c;
}

template <typename T = double>
FrameQuad<T> random_frames(std::size_t batch, std::size_t size, std::size_t th_size,
                           std::mt19937_64& rng) {
  return {random_tensor<T>({batch, 3, size, size}, rng, 0, 1),
          random_tensor<T>({batch, 3, size, size}, rng, 0, 1),
          random_tensor<T>({batch, 1, th_size, th_size}, rng, 0, 1),
          random_tensor<T>({batch, 1, th_size, th_size}, rng, 0, 1)};
}

}  // namespace

TEST_CASE("forward produces one head output per level and one decision per pair") {
  std::mt19937_64 rng(2);
  MSGNet<double> net(small_config());
  const auto out = net.forward(random_frames(2, 64, 64, rng));
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t s = 8 >> l;
    CHECK(out.head[l].box.shape() == Shape{2, 64, s, s});
    CHECK(out.head[l].cls.shape() == Shape{2, 3, s, s});
    CHECK(out.temporal_edges[l] > 0);
  }
  CHECK(out.lambda_curr.shape() == Shape{2});
  CHECK(out.lambda_prev.shape() == Shape{2});
  CHECK(out.decisions.size() == 2);
  for (const auto& d : out.decisions) CHECK(d.gamma == lambda_to_gamma(d.lambda));
}

TEST_CASE("thermal frames may be coarser than RGB") {
  std::mt19937_64 rng(3);
  MSGNet<double> net(small_config());
  const auto out = net.forward(random_frames(1, 64, 32, rng));
  CHECK(out.head[0].cls.shape() == Shape{1, 3, 8, 8});
}

TEST_CASE("mismatched batches are rejected") {
  std::mt19937_64 rng(4);
  MSGNet<double> net(small_config());
  auto frames = random_frames(2, 64, 64, rng);
  frames.th_curr = random_tensor({1, 1, 64, 64}, rng, 0, 1);
  CHECK_THROWS(net.forward(frames));
}

TEST_CASE("construction is deterministic in the seed") {
  const auto a = MSGNet<double>(small_config(5)).parameters();
  const auto b = MSGNet<double>(small_config(5)).parameters();
  const auto c = MSGNet<double>(small_config(6)).parameters();
  REQUIRE(a.size() == b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(max_abs_diff(a[i].tensor.data(), b[i].tensor.data()) == 0.0);
    differs = differs || max_abs_diff(a[i].tensor.data(), c[i].tensor.data()) > 0.0;
  }
  CHECK(differs);
}

TEST_CASE("checkpoints reproduce the forward pass exactly") {
  std::mt19937_64 rng(7);
  auto config = small_config(9);
  config.tau = 0.3;
  config.k_spatial = 12;
  MSGNet<float> net(config);
  const auto dir = fs::temp_directory_path() / "msgnet_test_model_ckpt";
  fs::remove_all(dir);
  net.save(dir);
  const auto loaded = MSGNet<float>::load(dir);
  CHECK(loaded.config().tau == 0.3);
  CHECK(loaded.config().k_spatial == 12);
  CHECK(loaded.config().seed == 9);

  const auto frames = random_frames<float>(2, 64, 64, rng);
  const auto a = net.forward(frames);
  const auto b = loaded.forward(frames);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(max_abs_diff(a.head[l].box.data(), b.head[l].box.data()) == 0.0);
    CHECK(max_abs_diff(a.head[l].cls.data(), b.head[l].cls.data()) == 0.0);
  }
  CHECK(max_abs_diff(a.lambda_curr.data(), b.lambda_curr.data()) == 0.0);

  // Weights are stored as f32, so a 64-bit model loads them exactly.
  const auto wide = MSGNet<double>::load(dir).parameters();
  const auto narrow = net.parameters();
  REQUIRE(wide.size() == narrow.size());
  for (std::size_t i = 0; i < wide.size(); ++i) {
    for (std::size_t j = 0; j < wide[i].tensor.numel(); ++j) {
      CHECK(wide[i].tensor[j] == static_cast<double>(narrow[i].tensor[j]));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("loading a missing checkpoint fails") {
  CHECK_THROWS(MSGNet<double>::load(fs::temp_directory_path() / "msgnet_no_such_checkpoint"));
}
