#pragma once

#include <array>
#include <cmath>

namespace msgnet::detail {

// Forward-mode dual number carrying N partial derivatives.
template <std::size_t N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly

  static Dual variable(double value, std::size_t i) {
    Dual x(value);
    x.d[i] = 1.0;
    return x;
  }
};

template <std::size_t N>
Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v + b.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}

template <std::size_t N>
Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v - b.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}

template <std::size_t N>
Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v * b.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}

template <std::size_t N>
Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r(a.v / b.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
  return r;
}

template <std::size_t N>
Dual<N> atan(const Dual<N>& a) {
  Dual<N> r(std::atan(a.v));
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * s;
  return r;
}

template <std::size_t N>
const Dual<N>& max(const Dual<N>& a, const Dual<N>& b) {
  return b.v > a.v ? b : a;
}

template <std::size_t N>
const Dual<N>& min(const Dual<N>& a, const Dual<N>& b) {
  return b.v < a.v ? b : a;
}

inline double value(double x) { return x; }
template <std::size_t N>
double value(const Dual<N>& x) {
  return x.v;
}

}  // namespace msgnet::detail
