#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ncood {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles. Rank 1 ([d]) and rank 2 ([rows x cols])
// are the only shapes the library produces; a scalar is shape [1].
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Row count for rank 2; 1 for rank 1 (a vector is treated as one row).
  std::size_t rows() const;
  // Column count for rank 2; the length for rank 1.
  std::size_t cols() const;

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  double item() const;

  // Rows selected by index, in the given order.
  Tensor select_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& shape);

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  // Gradient of the loss passed to Tape::backward. Zero-filled when the node
  // does not participate in the gradient.
  Tensor grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in evaluation order for one reverse-mode pass.
//
// A tape supports a single backward call; calling backward a second time
// raises ContractError. Tapes are not shared between threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends a node computed from `parents`. `backward` receives the gradient
  // flowing into the new node and accumulates into the parents through
  // accumulate_grad. It is only invoked when some parent requires a gradient.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  void backward(Var loss);
  bool consumed() const { return consumed_; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  Tensor grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds `g` into the gradient buffer of `target` when it requires a gradient.
  void accumulate_grad(Var target, std::span<const double> g);
  // Mutable gradient buffer of `target`, or nullptr when it requires none.
  std::span<double> grad_buffer(Var target);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// --- differentiable operations -------------------------------------------

// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);
// [m x k] * [n x k]^T -> [m x n]
Var matmul_nt(Var a, Var b);
// Adds a length-n bias to every row of an [m x n] matrix.
Var add_bias(Var a, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

Var relu(Var a);
// Subgradient at 0 is 0.
Var abs(Var a);
// Elementwise 1 / (a + eps).
Var reciprocal(Var a, double eps);

// Row-wise log-softmax of an [n x C] matrix (a vector is one row).
Var log_softmax(Var logits);

// Row-wise l2 normalization with the exact Jacobian. Rows whose norm is at
// most kNormEpsilon map to zero rows with zero gradient; when `degenerate` is
// given it receives one flag per row.
inline constexpr double kNormEpsilon = 1e-12;
Var l2_normalize(Var a, std::vector<bool>* degenerate = nullptr);

// Euclidean norm of each row: [n x d] -> [n]. Subgradient 0 at the origin.
Var row_norm(Var a);
// All pairwise row distances: [m x d], [c x d] -> [m x c].
Var pairwise_distance(Var a, Var b);

// out[i] = a(i, index[i]) : [n x C] -> [n]
Var pick(Var a, std::span<const int> index);
// Rows of a in the order given by index: [C x d] -> [n x d]
Var gather_rows(Var a, std::span<const int> index);

Var sum(Var a);
Var mean(Var a);

}  // namespace ncood
