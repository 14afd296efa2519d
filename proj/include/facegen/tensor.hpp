#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace facegen {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_to_string(const Shape& s);

class Tape;

// Handle to a node owned by a Tape. Cheap to copy; valid as long as the tape
// lives. A Tensor created on one tape must not be mixed into ops on another.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  const std::vector<double>& values() const;
  bool requires_grad() const;
  std::size_t size() const;
  // Value of a single-element tensor.
  double scalar() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Forward ops append one record each; backward replays the
// records once, in reverse creation order (creation order is topological by
// construction). Double precision throughout; first-order adjoints only.
class Tape {
 public:
  using GradMap = std::unordered_map<std::size_t, std::vector<double>>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Tensor constant(Shape shape, std::vector<double> values) { return leaf(std::move(shape), std::move(values), false); }
  Tensor scalar_leaf(double v, bool requires_grad = false) { return leaf({}, {v}, requires_grad); }
  Tensor zeros(Shape shape, bool requires_grad = false);

  // a (m x k) @ b (k x n) -> (m x n)
  Tensor matmul(const Tensor& a, const Tensor& b);
  // Elementwise; shapes must match exactly (no broadcasting).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);
  Tensor reshape(const Tensor& a, Shape shape);
  // Rank-2 inputs with equal column counts, stacked top to bottom.
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor reduce_sum(const Tensor& a);
  Tensor reduce_mean(const Tensor& a);
  Tensor l2_norm(const Tensor& a);
  // Cosine similarity of two equal-size tensors viewed as flat vectors.
  // Errors on zero input rather than returning NaN.
  Tensor cosine(const Tensor& a, const Tensor& b);
  // Smooth ReLU (softplus): log(1 + exp(x)), numerically stabilized.
  Tensor softplus(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor abs(const Tensor& a);
  // (h, w, ch) -> (k*h, k*w, ch), each pixel replicated into a k x k block.
  Tensor upsample_nn(const Tensor& a, std::size_t factor);

  // Adjoints of `loss` (a single-element tensor) with respect to every grad
  // leaf on the tape, keyed by Tensor::id(). Leaves that do not influence the
  // loss get zero gradients.
  GradMap backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }
  const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }
  const std::vector<double>& values_of(std::size_t id) const { return nodes_[id].values; }
  bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    bool is_leaf = false;
    const char* op = "";
    // Accumulates d(loss)/d(inputs) given d(loss)/d(this node).
    std::function<void(Tape&, const std::vector<double>&)> pull;
  };

  friend class Tensor;

  Tensor emplace(Shape shape, std::vector<double> values, bool requires_grad, const char* op,
                 std::function<void(Tape&, const std::vector<double>&)> pull);
  std::vector<double>& adjoint(std::size_t id, std::size_t n);
  void check_same_shape(const char* op, const Tensor& a, const Tensor& b) const;
  void check_finite(const char* op, const std::vector<double>& values) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
};

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued function built on a fresh tape from x.
// Throws if any intermediate value is non-finite.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const std::vector<double>& x, double h = 1e-6);

}  // namespace facegen
