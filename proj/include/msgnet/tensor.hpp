#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msgnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized iff requires_grad
  bool requires_grad = false;
  bool leaf = true;
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Handle to a dense row-major buffer. Copies share the underlying node; use
// clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Only valid on leaves that are not referenced by a live tape.
  std::span<T> mutable_data() { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  void set_requires_grad(bool value);
  void zero_grad();

  Tensor clone() const;
  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Thread-local switch for tape recording. Evaluation wraps forward passes in a
// NoGradGuard so no backward closures are retained.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool value);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Append-only record of executed operations. Each thread owns one tape per
// element type; backward() replays the rules in reverse execution order.
template <typename T>
class Tape {
 public:
  struct Entry {
    NodePtr<T> output;
    std::function<void()> rule;
  };

  static Tape& current();

  void record(NodePtr<T> output, std::function<void()> rule);
  void backward(const Tensor<T>& loss);
  void reset() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

namespace detail {

// Allocates an op result. The result tracks gradients iff grad mode is on and
// any input does.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs);

}  // namespace detail

// Uniform in [-gain/sqrt(fan_in), +gain/sqrt(fan_in)]. gain = sqrt(6) is the
// He bound for layers followed by a ReLU.
template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng,
                       double gain = 1.0);

template <typename T, typename U>
Tensor<T> tensor_cast(const Tensor<U>& src, bool requires_grad = false) {
  std::vector<T> out(src.data().begin(), src.data().end());
  return Tensor<T>(src.shape(), std::move(out), requires_grad);
}

}  // namespace msgnet
