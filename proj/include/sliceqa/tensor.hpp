#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sliceqa {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_equal(const Shape& a, const Shape& b);

/// Dense value with flat row-major storage and an optional gradient buffer.
/// Rank is 1 or 2 everywhere in this codebase; rank-1 tensors behave as row
/// vectors under the matrix view. Zero-sized dimensions are allowed.
struct Tensor {
  Shape shape;
  Eigen::VectorXd values;
  Eigen::VectorXd grad;  // size 0 means "no gradient allocated"
  int node_id = -1;

  Tensor() = default;
  Tensor(Shape s, Eigen::VectorXd v);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor column(std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  Index numel() const { return values.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index rows() const;
  Index cols() const;
  bool is_scalar() const { return numel() == 1; }

  MatMap mat();
  ConstMatMap mat() const;
  double& at(Index r, Index c);
  double at(Index r, Index c) const;

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;

  /// Same flat values under a new shape; row-major layout is preserved, so
  /// reshaped(s).at(i,j) equals direct flat indexing of the original buffer.
  Tensor reshaped(Shape s) const;
};

class Tape;

/// Lightweight handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  Index rows() const;
  Index cols() const;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Add,
  Sub,
  Mul,
  Concat,
  Slice,
  Transpose,
  Sum,
  Mean,
  Tanh,
  Sigmoid,
  Relu,
  Exp,
  Log,
  Square,
  MaskedSoftmax,
};

/// Append-only record of one forward computation. Inputs of a node always
/// precede it, so a single reverse sweep implements the chain rule. A tape is
/// single-writer: one forward/backward pass owns it exclusively.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Binds a parameter tensor. Gradients accumulate additively into
  /// param.grad on backward(); repeated binds of the same tensor return the
  /// same node. The parameter must stay alive and unmodified for the tape's
  /// lifetime.
  Var leaf(Tensor& param);

  /// A value that participates in the forward pass but receives no gradient.
  Var constant(Tensor value);
  Var constant_full(Shape s, double value);

  /// Reverse sweep from a scalar loss node. Visits nodes exactly once in
  /// reverse append order; parameter grads accumulate (no implicit zeroing).
  void backward(Var loss);

  const Shape& shape(int id) const { return nodes_[id].shape; }
  const Eigen::VectorXd& values(int id) const;
  ConstMatMap mat(int id) const;
  const Eigen::VectorXd& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar_value(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Op constructors; use the free functions below instead of calling these.
  Var emit_matmul(Var a, Var b);
  Var emit_ew(OpKind op, Var a, Var b);
  Var emit_unary(OpKind op, Var x);
  Var emit_concat(std::span<const Var> parts, int axis);
  Var emit_slice(Var x, int axis, Index start, Index end);
  Var emit_transpose(Var x);
  Var emit_reduce(OpKind op, Var x);
  Var emit_masked_softmax(Var x, std::vector<std::uint8_t> mask);

 private:
  struct Node {
    OpKind op;
    Shape shape;
    std::vector<int> inputs;
    Eigen::VectorXd values;   // unused for Leaf (external holds them)
    Eigen::VectorXd grad;
    Tensor* external = nullptr;
    int axis = 0;
    Index start = 0;
    Index end = 0;
    std::vector<std::uint8_t> mask;
  };

  int push(Node n);
  void check_same_tape(Var v) const;
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<std::pair<Tensor*, int>> leaf_cache_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var x, int axis, Index start, Index end);
Var transpose(Var x);
Var sum(Var x);
Var mean(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var masked_softmax(Var x, std::vector<std::uint8_t> mask);
Var softmax(Var x);  // masked_softmax with an all-true mask

/// x * k with a constant scalar factor.
Var scale(Var x, double k);
/// Sum of a list of same-shape vars (empty list is invalid).
Var add_all(std::span<const Var> parts);

/// Max over all parameter entries of
///   |analytic - central_difference| / max(1e-8, |analytic| + |numeric|)
/// for the scalar loss built by `build_loss`. Rebuilds the tape per probe, so
/// `build_loss` must be deterministic. epsilon must lie in (0, 1e-2].
double grad_check(const std::function<Var(Tape&)>& build_loss,
                  std::span<Tensor* const> params, double epsilon);

}  // namespace sliceqa
