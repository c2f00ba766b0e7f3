#include "msgnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace msgnet {

namespace {

template <typename T>
void record_if_tracked(const Tensor<T>& out, std::function<void()> rule) {
  if (out.requires_grad()) Tape<T>::current().record(out.node(), std::move(rule));
}

// Maps each linear index of `a_shape` to the broadcast index into `b_shape`.
std::vector<std::size_t> broadcast_map(const Shape& a_shape, const Shape& b_shape) {
  const std::size_t ra = a_shape.size();
  const std::size_t rb = b_shape.size();
  std::vector<std::size_t> b_stride(ra, 0);
  std::size_t stride = 1;
  for (std::size_t j = rb; j-- > 0;) {
    const std::size_t i = j + (ra - rb);
    b_stride[i] = (b_shape[j] == 1) ? 0 : stride;
    stride *= b_shape[j];
  }
  const std::size_t n = numel(a_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(ra, 0);
  std::size_t b_off = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    map[lin] = b_off;
    for (std::size_t d = ra; d-- > 0;) {
      ++idx[d];
      b_off += b_stride[d];
      if (idx[d] < a_shape[d]) break;
      b_off -= b_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  const std::size_t off = a.size() - b.size();
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (b[j] != 1 && b[j] != a[j + off]) return false;
  }
  return true;
}

void check_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

template <typename T>
T stable_softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void im2col(const T* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj, ++row) {
        T* dst = cols + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                                ix < static_cast<long>(w);
            dst[oy * wo + ox] = inside ? x[(c * h + iy) * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* x) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj, ++row) {
        const T* src = cols + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            x[(c * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t axis = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw ShapeError("elementwise: cannot broadcast " + shape_str(b.shape()) + " into " +
                     shape_str(a.shape()));
  }
  const std::size_t n = a.numel();
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> map;
  if (!same) map = broadcast_map(a.shape(), b.shape());
  auto bi = [&](std::size_t i) { return same ? i : map[i]; };

  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<T> out(n);
  switch (kind) {
    case Elementwise::kAdd:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] + bd[bi(i)];
      break;
    case Elementwise::kSub:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] - bd[bi(i)];
      break;
    case Elementwise::kMul:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[bi(i)];
      break;
    case Elementwise::kDiv:
      for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] / bd[bi(i)];
      break;
  }
  auto result = detail::make_result<T>(a.shape(), std::move(out), {&a, &b});
  record_if_tracked(result, [an = a.node(), bn = b.node(), on = result.node(), kind, same,
                             map = std::move(map)] {
    const auto& g = on->grad;
    const std::size_t n = g.size();
    auto bi = [&](std::size_t i) { return same ? i : map[i]; };
    if (an->requires_grad) {
      auto& ga = an->grad;
      switch (kind) {
        case Elementwise::kAdd:
        case Elementwise::kSub:
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          break;
        case Elementwise::kMul:
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[bi(i)];
          break;
        case Elementwise::kDiv:
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bn->data[bi(i)];
          break;
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad;
      switch (kind) {
        case Elementwise::kAdd:
          for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i];
          break;
        case Elementwise::kSub:
          for (std::size_t i = 0; i < n; ++i) gb[bi(i)] -= g[i];
          break;
        case Elementwise::kMul:
          for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i] * an->data[i];
          break;
        case Elementwise::kDiv:
          for (std::size_t i = 0; i < n; ++i) {
            const T bv = bn->data[bi(i)];
            gb[bi(i)] -= g[i] * an->data[i] / (bv * bv);
          }
          break;
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto result = detail::make_result<T>(x.shape(), std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), factor] {
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor;
  });
  return result;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank(a.shape(), 2, "matmul");
  check_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  auto result = detail::make_result<T>(Shape{m, n}, std::move(out), {&a, &b});
  record_if_tracked(result, [an = a.node(), bn = b.node(), on = result.node(), m, n, k] {
    if (an->requires_grad) {
      detail::gemm_nt(m, k, n, on->grad.data(), bn->data.data(), an->grad.data());
    }
    if (bn->requires_grad) {
      detail::gemm_tn(k, n, m, an->data.data(), on->grad.data(), bn->grad.data());
    }
  });
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  check_rank(x.shape(), 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  auto result = detail::make_result<T>(Shape{c, r}, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), r, c] {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
  });
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto result = detail::make_result<T>(shape, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node()] {
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
  });
  return result;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  check_rank(x.shape(), 4, "conv2d input");
  check_rank(w.shape(), 4, "conv2d weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * pad < kh || wd + 2 * pad < kw) {
    throw ShapeError("conv2d: output extent < 1 for input " + shape_str(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(cout) + " filters");
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t kdim = cin * kh * kw;
  const std::size_t npix = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  std::vector<T> out(batch * cout * npix, T(0));
  std::vector<T> cols(pointwise ? 0 : kdim * npix);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x.data().data() + b * cin * h * wd;
    const T* colp = xb;
    if (!pointwise) {
      im2col(xb, cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    T* ob = out.data() + b * cout * npix;
    if (bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co)
        std::fill(ob + co * npix, ob + (co + 1) * npix, bias.data()[co]);
    }
    detail::gemm_nn(cout, npix, kdim, w.data().data(), colp, ob);
  }

  auto result = detail::make_result<T>(Shape{batch, cout, ho, wo}, std::move(out), {&x, &w, &bias});
  record_if_tracked(result, [xn = x.node(), wn = w.node(), bn = bias.node(), on = result.node(),
                             batch, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, kdim, npix,
                             pointwise] {
    std::vector<T> cols(pointwise ? 0 : kdim * npix);
    std::vector<T> dcols(kdim * npix);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* gb = on->grad.data() + b * cout * npix;
      const T* xb = xn->data.data() + b * cin * h * wd;
      if (bn && bn->requires_grad) {
        for (std::size_t co = 0; co < cout; ++co) {
          T acc = T(0);
          for (std::size_t p = 0; p < npix; ++p) acc += gb[co * npix + p];
          bn->grad[co] += acc;
        }
      }
      if (wn->requires_grad) {
        const T* colp = xb;
        if (!pointwise) {
          im2col(xb, cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
          colp = cols.data();
        }
        detail::gemm_nt(cout, kdim, npix, gb, colp, wn->grad.data());
      }
      if (xn->requires_grad) {
        T* gx = xn->grad.data() + b * cin * h * wd;
        if (pointwise) {
          detail::gemm_tn(kdim, npix, cout, wn->data.data(), gb, gx);
        } else {
          std::fill(dcols.begin(), dcols.end(), T(0));
          detail::gemm_tn(kdim, npix, cout, wn->data.data(), gb, dcols.data());
          col2im(dcols.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, gx);
        }
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const auto& xd = x.data();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(xd[i]);
      break;
    case Activation::kSoftplus:
      for (std::size_t i = 0; i < n; ++i) out[i] = stable_softplus(xd[i]);
      break;
    case Activation::kLog:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::log(xd[i]);
      break;
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), kind] {
    const auto& g = on->grad;
    auto& gx = xn->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Activation::kRelu:
          if (xn->data[i] > T(0)) gx[i] += g[i];
          break;
        case Activation::kSigmoid: {
          const T s = on->data[i];
          gx[i] += g[i] * s * (T(1) - s);
          break;
        }
        case Activation::kSoftplus:
          gx[i] += g[i] * stable_sigmoid(xn->data[i]);
          break;
        case Activation::kLog:
          gx[i] += g[i] / xn->data[i];
          break;
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      T mx = xd[base];
      for (std::size_t a = 1; a < s.axis; ++a) mx = std::max(mx, xd[base + a * s.inner]);
      T total = T(0);
      for (std::size_t a = 0; a < s.axis; ++a) {
        const T e = std::exp(xd[base + a * s.inner] - mx);
        out[base + a * s.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < s.axis; ++a) out[base + a * s.inner] /= total;
    }
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), s] {
    const auto& y = on->data;
    const auto& g = on->grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.axis * s.inner + in;
        T dot = T(0);
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = base + a * s.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t a = 0; a < s.axis; ++a) {
          const std::size_t i = base + a * s.inner;
          xn->grad[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return result;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  check_rank(x.shape(), 4, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = resize_taps(h, out_h);
  auto tx = resize_taps(w, out_w);
  std::vector<T> out(planes * out_h * out_w);
  const auto& xd = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xd.data() + p * h * w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T fy = static_cast<T>(ty[oy].frac);
      const T* r0 = src + ty[oy].i0 * w;
      const T* r1 = src + ty[oy].i1 * w;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T fx = static_cast<T>(tx[ox].frac);
        const T top = r0[tx[ox].i0] * (T(1) - fx) + r0[tx[ox].i1] * fx;
        const T bot = r1[tx[ox].i0] * (T(1) - fx) + r1[tx[ox].i1] * fx;
        dst[oy * out_w + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  auto result =
      detail::make_result<T>(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), planes, h, w, out_h, out_w,
                             ty = std::move(ty), tx = std::move(tx)] {
    for (std::size_t p = 0; p < planes; ++p) {
      T* gsrc = xn->grad.data() + p * h * w;
      const T* g = on->grad.data() + p * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const T fy = static_cast<T>(ty[oy].frac);
        T* r0 = gsrc + ty[oy].i0 * w;
        T* r1 = gsrc + ty[oy].i1 * w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const T fx = static_cast<T>(tx[ox].frac);
          const T gv = g[oy * out_w + ox];
          r0[tx[ox].i0] += gv * (T(1) - fy) * (T(1) - fx);
          r0[tx[ox].i1] += gv * (T(1) - fy) * fx;
          r1[tx[ox].i0] += gv * fy * (T(1) - fx);
          r1[tx[ox].i1] += gv * fy * fx;
        }
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h,
               std::size_t w) {
  check_rank(x.shape(), 4, "crop");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (h == 0 || w == 0 || top + h > H || left + w > W) {
    throw ShapeError("crop: rectangle (" + std::to_string(top) + "," + std::to_string(left) + "," +
                     std::to_string(h) + "," + std::to_string(w) + ") outside " +
                     shape_str(x.shape()));
  }
  std::vector<T> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(x.data().data() + (p * H + top + y) * W + left, w,
                  out.data() + (p * h + y) * w);
  auto result = detail::make_result<T>(Shape{x.dim(0), x.dim(1), h, w}, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), planes, H, W, top, left, h, w] {
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t c = 0; c < w; ++c)
          xn->grad[(p * H + top + y) * W + left + c] += on->grad[(p * h + y) * w + c];
  });
  return result;
}

template <typename T>
Tensor<T> paste(const Tensor<T>& base, const Tensor<T>& patch, std::size_t top,
                std::size_t left) {
  check_rank(base.shape(), 4, "paste base");
  check_rank(patch.shape(), 4, "paste patch");
  const std::size_t H = base.dim(2), W = base.dim(3), h = patch.dim(2), w = patch.dim(3);
  if (base.dim(0) != patch.dim(0) || base.dim(1) != patch.dim(1) || top + h > H ||
      left + w > W) {
    throw ShapeError("paste: patch " + shape_str(patch.shape()) + " at (" + std::to_string(top) +
                     "," + std::to_string(left) + ") does not fit " + shape_str(base.shape()));
  }
  const std::size_t planes = base.dim(0) * base.dim(1);
  std::vector<T> out(base.data().begin(), base.data().end());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(patch.data().data() + (p * h + y) * w, w,
                  out.data() + (p * H + top + y) * W + left);
  auto result = detail::make_result<T>(base.shape(), std::move(out), {&base, &patch});
  record_if_tracked(result, [bn = base.node(), pn = patch.node(), on = result.node(), planes, H,
                             W, h, w, top, left] {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t i = (p * H + y) * W + x;
          const bool inside = y >= top && y < top + h && x >= left && x < left + w;
          if (inside) {
            if (pn->requires_grad) pn->grad[(p * h + y - top) * w + x - left] += on->grad[i];
          } else if (bn->requires_grad) {
            bn->grad[i] += on->grad[i];
          }
        }
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) ok = false;
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const AxisSplit s = split_at(p.shape(), axis);
    const std::size_t chunk = s.axis * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(p.data().data() + o * chunk, chunk,
                  out.data() + o * total.axis * total.inner + off * s.inner);
    off += s.axis;
  }
  auto result = detail::make_result<T>(out_shape, std::move(out), parts);
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  record_if_tracked(result, [nodes = std::move(nodes), offsets = std::move(offsets),
                             on = result.node(), axis, total] {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& n = nodes[k];
      if (!n->requires_grad) continue;
      const AxisSplit s = split_at(n->shape, axis);
      const std::size_t chunk = s.axis * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* g = on->grad.data() + o * total.axis * total.inner + offsets[k] * s.inner;
        T* dst = n->grad.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
      }
    }
  });
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(numel(out_shape));
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data().data() + o * s.axis * s.inner + start * s.inner, chunk,
                out.data() + o * chunk);
  auto result = detail::make_result<T>(out_shape, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), s, start, chunk] {
    for (std::size_t o = 0; o < s.outer; ++o) {
      T* dst = xn->grad.data() + o * s.axis * s.inner + start * s.inner;
      const T* g = on->grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[i];
    }
  });
  return result;
}

template <typename T>
Tensor<T> gather_cells(const Tensor<T>& x, const std::vector<CellIndex>& cells) {
  check_rank(x.shape(), 4, "gather_cells");
  if (cells.empty()) throw ShapeError("gather_cells: no cells");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const auto& c : cells) {
    if (c.batch >= B || c.row >= H || c.col >= W) {
      throw ShapeError("gather_cells: cell outside " + shape_str(x.shape()));
    }
  }
  std::vector<T> out(cells.size() * C);
  for (std::size_t p = 0; p < cells.size(); ++p)
    for (std::size_t ch = 0; ch < C; ++ch)
      out[p * C + ch] = x.data()[((cells[p].batch * C + ch) * H + cells[p].row) * W + cells[p].col];
  auto result = detail::make_result<T>(Shape{cells.size(), C}, std::move(out), {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), cells, C, H, W] {
    for (std::size_t p = 0; p < cells.size(); ++p)
      for (std::size_t ch = 0; ch < C; ++ch)
        xn->grad[((cells[p].batch * C + ch) * H + cells[p].row) * W + cells[p].col] +=
            on->grad[p * C + ch];
  });
  return result;
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, Reduction kind) {
  const auto& xd = x.data();
  if (kind == Reduction::kGlobalAvgPoolSpatial) {
    check_rank(x.shape(), 4, "global_avg_pool");
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(planes);
    for (std::size_t p = 0; p < planes; ++p) {
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += xd[p * hw + i];
      out[p] = acc / static_cast<T>(hw);
    }
    auto result = detail::make_result<T>(Shape{x.dim(0), x.dim(1)}, std::move(out), {&x});
    record_if_tracked(result, [xn = x.node(), on = result.node(), planes, hw] {
      for (std::size_t p = 0; p < planes; ++p) {
        const T g = on->grad[p] / static_cast<T>(hw);
        for (std::size_t i = 0; i < hw; ++i) xn->grad[p * hw + i] += g;
      }
    });
    return result;
  }
  T acc = T(0);
  for (auto v : xd) acc += v;
  const T denom = kind == Reduction::kMean ? static_cast<T>(x.numel()) : T(1);
  auto result = detail::make_result<T>(Shape{1}, std::vector<T>{acc / denom}, {&x});
  record_if_tracked(result, [xn = x.node(), on = result.node(), denom] {
    const T g = on->grad[0] / denom;
    for (auto& v : xn->grad) v += g;
  });
  return result;
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
}

#define MSGNET_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> elementwise(const Tensor<T>&, const Tensor<T>&, Elementwise);             \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> crop(const Tensor<T>&, std::size_t, std::size_t, std::size_t,             \
                          std::size_t);                                                        \
  template Tensor<T> paste(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);      \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> gather_cells(const Tensor<T>&, const std::vector<CellIndex>&);            \
  template Tensor<T> reduce(const Tensor<T>&, Reduction);                                      \
  template Tensor<T> detach(const Tensor<T>&);

MSGNET_INSTANTIATE_OPS(float)
MSGNET_INSTANTIATE_OPS(double)

}  // namespace msgnet
