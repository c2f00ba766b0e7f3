#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "msgnet/gradcheck.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/serialize.hpp"
#include "support/test_util.hpp"

using namespace msgnet;
using msgnet::testing::max_abs_diff;
using msgnet::testing::random_tensor;

namespace {

// Direct six-loop convolution, zero padding.
std::vector<double> naive_conv(const Tensord& x, const Tensord& w, const Tensord& b,
                               std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out(B * Co * Ho * Wo);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = b.defined() ? b[co] : 0.0;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long y = long(oy * stride + i) - long(pad);
                const long xx = long(ox * stride + j) - long(pad);
                if (y < 0 || xx < 0 || y >= long(H) || xx >= long(W)) continue;
                acc += x[((n * Ci + ci) * H + y) * W + xx] * w[((co * Ci + ci) * kh + i) * kw + j];
              }
          out[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

double grad_error(const std::function<Tensord()>& f, std::vector<Tensord> wrt) {
  return check_gradients(f, std::move(wrt)).max_rel_error;
}

// Weighted sum with fixed random weights turns any output into a scalar with
// a non-trivial upstream gradient.
Tensord probe(const Tensord& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST_CASE("elementwise examples") {
  Tensord a({2}, {1, 2});
  Tensord zero({2}, {0, 0});
  auto s = add(a, zero);
  CHECK(s[0] == 1);
  CHECK(s[1] == 2);
  Tensord c({2}, {2, 3});
  auto p = mul(c, c);
  CHECK(p[0] == 4);
  CHECK(p[1] == 9);
}

TEST_CASE("elementwise mul gradient equals the other operand") {
  std::mt19937_64 rng(7);
  auto a = random_tensor({2, 3}, rng, -1, 1, true);
  auto b = random_tensor({2, 3}, rng, -1, 1, true);
  Tape<double>::current().reset();
  backward(sum(mul(a, b)));
  CHECK(max_abs_diff(a.grad(), b.data()) == 0.0);
  CHECK(max_abs_diff(b.grad(), a.data()) == 0.0);
  CHECK(grad_error([&] { return sum(mul(a, b)); }, {a, b}) <= 1e-4);
  Tape<double>::current().reset();
}

TEST_CASE("elementwise broadcasting and errors") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({2, 3, 4}, rng, -1, 1, true);
  auto row = random_tensor({4}, rng, -1, 1, true);
  auto col = random_tensor({3, 1}, rng, -1, 1, true);
  for (auto kind : {Elementwise::kAdd, Elementwise::kSub, Elementwise::kMul}) {
    CHECK(grad_error([&] { return probe(elementwise(a, row, kind), 1); }, {a, row}) <= 1e-4);
    CHECK(grad_error([&] { return probe(elementwise(a, col, kind), 2); }, {a, col}) <= 1e-4);
  }
  auto denom = random_tensor({4}, rng, 0.5, 2.0, true);
  CHECK(grad_error([&] { return probe(div(a, denom), 3); }, {a, denom}) <= 1e-4);

  Tensord bad({3}, {1, 2, 3});
  try {
    add(a, bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3]") != std::string::npos);
    CHECK(msg.find("[2,3,4]") != std::string::npos);
  }
}

TEST_CASE("matmul examples and oracle") {
  Tensord eye({2, 2}, {1, 0, 0, 1});
  Tensord m({2, 2}, {5, 6, 7, 8});
  CHECK(max_abs_diff(matmul(eye, m).data(), m.data()) == 0.0);
  auto r = matmul(Tensord({1, 2}, {1, 2}), Tensord({2, 1}, {3, 4}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r[0] == 11);

  std::mt19937_64 rng(11);
  auto a = random_tensor({3, 4}, rng, -1, 1, true);
  auto b = random_tensor({4, 2}, rng, -1, 1, true);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 2 + j];
      CHECK(std::abs(c[i * 2 + j] - acc) <= 1e-12);
    }
  CHECK(grad_error([&] { return probe(matmul(a, b), 5); }, {a, b}) <= 1e-4);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("conv2d examples") {
  auto ones = Tensord::full({1, 1, 3, 3}, 1.0);
  Tensord k2({1, 1, 1, 1}, {2.0});
  auto y = conv2d(ones, k2, Tensord{}, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (auto v : y.data()) CHECK(v == 2.0);

  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 1, 3, 3}, rng);
  auto w = random_tensor({1, 1, 3, 3}, rng);
  auto dot = conv2d(x, w, Tensord{}, 1, 0);
  CHECK(dot.shape() == Shape{1, 1, 1, 1});
  double frob = 0;
  for (std::size_t i = 0; i < 9; ++i) frob += x[i] * w[i];
  CHECK(std::abs(dot[0] - frob) <= 1e-12);
}

TEST_CASE("conv2d matches the naive loop oracle") {
  std::mt19937_64 rng(17);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      auto x = random_tensor({2, 3, 8, 8}, rng);
      auto w = random_tensor({4, 3, 3, 3}, rng);
      auto b = random_tensor({4}, rng);
      auto y = conv2d(x, w, b, stride, pad);
      auto ref = naive_conv(x, w, b, stride, pad);
      REQUIRE(y.numel() == ref.size());
      CHECK(max_abs_diff(y.data(), std::span<const double>(ref)) <= 1e-10);
    }
  }
  auto x = random_tensor({1, 2, 5, 5}, rng, -1, 1, true);
  auto w = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  auto b = random_tensor({3}, rng, -1, 1, true);
  CHECK(grad_error([&] { return probe(conv2d(x, w, b, 2, 1), 9); }, {x, w, b}) <= 1e-4);
  auto w1 = random_tensor({3, 2, 1, 1}, rng, -1, 1, true);
  CHECK(grad_error([&] { return probe(conv2d(x, w1, b, 1, 0), 10); }, {x, w1, b}) <= 1e-4);

  auto tiny = random_tensor({1, 2, 1, 1}, rng);
  CHECK_THROWS_AS(conv2d(tiny, w, Tensord{}, 1, 0), ShapeError);
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensord::scalar(0.0)).item() == 0.5);
  Tensord r({2}, {-3, 3});
  auto rr = relu(r);
  CHECK(rr[0] == 0);
  CHECK(rr[1] == 3);
  CHECK(softplus(Tensord::scalar(100.0)).item() == 100.0);
  CHECK(std::isfinite(softplus(Tensord::scalar(-1000.0)).item()));

  auto x = Tensord::scalar(0.0, true);
  Tape<double>::current().reset();
  backward(softplus(x));
  CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
  const double fd = (std::log1p(std::exp(1e-6)) - std::log1p(std::exp(-1e-6))) / 2e-6;
  CHECK(std::abs(x.grad()[0] - fd) <= 1e-8);
  Tape<double>::current().reset();
}

TEST_CASE("softmax") {
  auto u = softmax(Tensord({3}, {0, 0, 0}), 0);
  for (auto v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  auto big = softmax(Tensord({2}, {1000, 0}), 0);
  CHECK(big[0] == 1.0);
  CHECK(big[1] == 0.0);

  std::mt19937_64 rng(23);
  auto x = random_tensor({5}, rng, -2, 2, true);
  CHECK(grad_error([&] { return probe(softmax(x, 0), 4); }, {x}) <= 1e-5);

  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_tensor({4, 6}, rng, -1000, 1000);
    for (std::size_t axis : {0u, 1u}) {
      auto s = softmax(m, axis);
      const std::size_t rows = axis == 1 ? 4 : 6;
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0;
        for (std::size_t k = 0; k < (axis == 1 ? 6u : 4u); ++k)
          total += axis == 1 ? s[r * 6 + k] : s[k * 6 + r];
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("bilinear resize") {
  std::mt19937_64 rng(29);
  auto x = random_tensor({1, 2, 5, 7}, rng);
  CHECK(max_abs_diff(bilinear_resize(x, 5, 7).data(), x.data()) <= 1e-6);

  Tensord corners({1, 1, 2, 2}, {0, 1, 2, 3});
  CHECK(bilinear_resize(corners, 1, 1).item() == doctest::Approx(1.5).epsilon(1e-12));

  auto c = Tensord::full({1, 1, 3, 3}, 4.25);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 2}, {10, 10}}) {
    const auto r = bilinear_resize(c, h, w);
    for (auto v : r.data()) CHECK(v == doctest::Approx(4.25));
  }
  auto g = random_tensor({1, 2, 4, 5}, rng, -1, 1, true);
  CHECK(grad_error([&] { return probe(bilinear_resize(g, 7, 3), 6); }, {g}) <= 1e-4);
}

TEST_CASE("crop and paste") {
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[i] = i;
  Tape<double>::current().reset();
  Tensord x({1, 1, 4, 4}, vals, true);
  CHECK(max_abs_diff(crop(x, 0, 0, 4, 4).data(), x.data()) == 0.0);
  auto c = crop(x, 1, 1, 2, 2);
  CHECK(c[0] == 5);
  CHECK(c[1] == 6);
  CHECK(c[2] == 9);
  CHECK(c[3] == 10);
  backward(sum(c));
  for (std::size_t i = 0; i < 16; ++i) {
    const bool inside = (i == 5 || i == 6 || i == 9 || i == 10);
    CHECK(x.grad()[i] == (inside ? 1.0 : 0.0));
  }
  Tape<double>::current().reset();
  CHECK_THROWS_AS(crop(x, 3, 3, 2, 2), ShapeError);

  std::mt19937_64 rng(31);
  auto base = random_tensor({1, 2, 5, 5}, rng, -1, 1, true);
  auto patch = random_tensor({1, 2, 2, 3}, rng, -1, 1, true);
  auto pasted = paste(base, patch, 1, 2);
  CHECK(pasted[0] == base[0]);
  CHECK(pasted[(0 * 5 + 1) * 5 + 2] == patch[0]);
  CHECK(grad_error([&] { return probe(paste(base, patch, 1, 2), 8); }, {base, patch}) <= 1e-4);
}

TEST_CASE("reductions") {
  CHECK(mean(Tensord({3}, {1, 2, 3})).item() == 2.0);
  auto gap = global_avg_pool(Tensord::full({2, 3, 4, 4}, 1.75));
  CHECK(gap.shape() == Shape{2, 3});
  for (auto v : gap.data()) CHECK(v == 1.75);

  Tensord x({4}, {1, -2, 3, 5}, true);
  Tape<double>::current().reset();
  backward(sum(x));
  for (auto g : x.grad()) CHECK(g == 1.0);
  Tape<double>::current().reset();
}

TEST_CASE("concat, slice, reshape, transpose, gather gradients") {
  std::mt19937_64 rng(37);
  auto a = random_tensor({2, 3, 2}, rng, -1, 1, true);
  auto b = random_tensor({2, 1, 2}, rng, -1, 1, true);
  CHECK(concat<double>({a, b}, 1).shape() == Shape{2, 4, 2});
  CHECK(grad_error([&] { return probe(concat<double>({a, b, a}, 1), 1); }, {a, b}) <= 1e-4);
  CHECK(grad_error([&] { return probe(slice(a, 1, 1, 2), 2); }, {a}) <= 1e-4);
  CHECK(grad_error([&] { return probe(reshape(a, {3, 4}), 3); }, {a}) <= 1e-4);
  auto m = random_tensor({3, 5}, rng, -1, 1, true);
  CHECK(grad_error([&] { return probe(transpose(m), 4); }, {m}) <= 1e-4);
  auto f = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
  std::vector<CellIndex> cells{{0, 1, 2}, {1, 3, 3}, {0, 1, 2}};
  CHECK(grad_error([&] { return probe(gather_cells(f, cells), 5); }, {f}) <= 1e-4);
}

TEST_CASE("backward examples") {
  auto& tape = Tape<double>::current();
  tape.reset();
  Tensord w({2}, {1, 2}, true);
  backward(sum(mul(w, w)));
  CHECK(w.grad()[0] == 2.0);
  CHECK(w.grad()[1] == 4.0);

  // A second backward without reset accumulates into leaves.
  backward(sum(mul(w, w)));
  CHECK(w.grad()[0] == 4.0);
  tape.reset();

  Tensord unused({3}, {1, 2, 3}, true);
  Tensord v({2}, {3, 4}, true);
  backward(sum(v));
  for (auto g : unused.grad()) CHECK(g == 0.0);
  tape.reset();

  CHECK_THROWS_AS(backward(mul(v, v)), ShapeError);
  tape.reset();
}

TEST_CASE("composite conv-relu-mean matches finite differences") {
  std::mt19937_64 rng(41);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto w1 = uniform_init<double>({4, 3, 3, 3}, 27, rng);
  auto b1 = uniform_init<double>({4}, 27, rng);
  auto w2 = uniform_init<double>({2, 4, 3, 3}, 36, rng);
  auto b2 = uniform_init<double>({2}, 36, rng);
  auto f = [&] {
    auto h = relu(conv2d(x, w1, b1, 1, 1));
    return mean(mul(conv2d(h, w2, b2, 2, 1), conv2d(h, w2, b2, 2, 1)));
  };
  CHECK(grad_error(f, {w1, b1, w2, b2}) <= 1e-4);
}

TEST_CASE("every op passes finite differences on 20 random instances") {
  std::mt19937_64 rng(43);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    auto b = random_tensor({4}, rng, 0.5, 1.5, true);
    auto m = random_tensor({4, 3}, rng, -1, 1, true);
    auto w = random_tensor({2, 3, 3, 3}, rng, -1, 1, true);
    const auto seed = static_cast<std::uint64_t>(trial);
    std::vector<std::pair<std::function<Tensord()>, std::vector<Tensord>>> cases = {
        {[&] { return probe(add(a, b), seed); }, {a, b}},
        {[&] { return probe(mul(a, b), seed); }, {a, b}},
        {[&] { return probe(div(a, b), seed); }, {a, b}},
        {[&] { return probe(matmul(reshape(slice(a, 0, 0, 1), {12, 4}), m), seed); },
         {a, m}},
        {[&] { return probe(conv2d(a, w, Tensord{}, 1, 1), seed); }, {a, w}},
        {[&] { return probe(sigmoid(a), seed); }, {a}},
        {[&] { return probe(softplus(a), seed); }, {a}},
        {[&] { return probe(softmax(a, 1), seed); }, {a}},
        {[&] { return probe(bilinear_resize(a, 3, 6), seed); }, {a}},
        {[&] { return probe(crop(a, 1, 0, 2, 3), seed); }, {a}},
        {[&] { return probe(global_avg_pool(a), seed); }, {a}},
        {[&] { return mean(mul(a, a)); }, {a}},
    };
    for (auto& [fn, wrt] : cases) worst = std::max(worst, grad_error(fn, wrt));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto x = random_tensor({1, 2, 6, 6}, rng);
    auto w = uniform_init<double>({3, 2, 3, 3}, 18, rng);
    Tape<double>::current().reset();
    backward(mean(relu(conv2d(x, w, Tensord{}, 2, 1))));
    Tape<double>::current().reset();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("MSGT format") {
  std::ostringstream os;
  const std::vector<float> vals{1.0f, -2.0f};
  write_msgt(os, {2}, vals);
  const std::string bytes = os.str();
  const std::string expected("MSGT\x01\x00\x00\x00\x02\x00\x00\x00\x00\x00\x80\x3f\x00\x00\x00\xc0",
                             20);
  CHECK(bytes == expected);

  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 5; ++trial) {
    auto t = random_tensor<float>({2, 1 + std::size_t(trial), 3}, rng);
    std::stringstream ss;
    write_msgt(ss, t.shape(), t.data());
    Shape s;
    std::vector<float> v;
    read_msgt(ss, s, v);
    CHECK(s == t.shape());
    CHECK(max_abs_diff(std::span<const float>(v), t.data()) == 0.0);
  }
  std::istringstream bad("XXXX");
  Shape s;
  std::vector<float> v;
  CHECK_THROWS(read_msgt(bad, s, v));
}
