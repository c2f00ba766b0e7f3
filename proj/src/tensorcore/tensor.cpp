#include "msgnet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace msgnet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (msgnet::numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<T>(msgnet::numel(shape), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return Tensor(shape, std::vector<T>(msgnet::numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  node_->requires_grad = value;
  if (value) {
    node_->grad.assign(node_->data.size(), T(0));
  } else {
    node_->grad.clear();
  }
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool value) { g_grad_enabled = value; }

template <typename T>
Tape<T>& Tape<T>::current() {
  thread_local Tape<T> tape;
  return tape;
}

template <typename T>
void Tape<T>::record(NodePtr<T> output, std::function<void()> rule) {
  entries_.push_back({std::move(output), std::move(rule)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a loss that does not require grad");
  }
  // Intermediate gradients are recomputed on every call; leaf gradients
  // accumulate across calls.
  for (auto& e : entries_) {
    std::fill(e.output->grad.begin(), e.output->grad.end(), T(0));
  }
  loss.node()->grad[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->rule();
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto* in : inputs) {
      if (in && in->defined() && in->requires_grad()) track = true;
    }
  }
  if (track) {
    out.set_requires_grad(true);
    out.node()->leaf = false;
  }
  return out;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) track = true;
    }
  }
  if (track) {
    out.set_requires_grad(true);
    out.node()->leaf = false;
  }
  return out;
}

template Tensor<float> make_result(Shape, std::vector<float>,
                                   std::initializer_list<const Tensor<float>*>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    std::initializer_list<const Tensor<double>*>);
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    const std::vector<Tensor<double>>&);

}  // namespace detail

template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng,
                       double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> data(numel(shape));
  for (auto& v : data) {
    // 53 random bits -> [0,1); avoids implementation-defined distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * bound);
  }
  return Tensor<T>(shape, std::move(data), true);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> uniform_init(const Shape&, std::size_t, std::mt19937_64&, double);
template Tensor<double> uniform_init(const Shape&, std::size_t, std::mt19937_64&, double);

}  // namespace msgnet
