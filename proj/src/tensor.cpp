#include "sliceqa/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sliceqa {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool shape_equal(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, Eigen::VectorXd v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s) {
  Index n = shape_numel(s);
  return Tensor(std::move(s), Eigen::VectorXd::Zero(n));
}

Tensor Tensor::full(Shape s, double v) {
  Index n = shape_numel(s);
  return Tensor(std::move(s), Eigen::VectorXd::Constant(n, v));
}

Tensor Tensor::scalar(double v) { return full({1, 1}, v); }

Tensor Tensor::row(std::vector<double> v) {
  Eigen::VectorXd vals = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  return Tensor({1, static_cast<Index>(v.size())}, std::move(vals));
}

Tensor Tensor::column(std::vector<double> v) {
  Eigen::VectorXd vals = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  return Tensor({static_cast<Index>(v.size()), 1}, std::move(vals));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Index r = static_cast<Index>(rows.size());
  Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  Tensor t = Tensor::zeros({r, c});
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) {
      throw std::invalid_argument("tensor: ragged initializer");
    }
    Index j = 0;
    for (double v : row) t.values[i * c + j++] = v;
    ++i;
  }
  return t;
}

Index Tensor::rows() const {
  if (rank() == 2) return shape[0];
  if (rank() == 1) return 1;
  throw std::invalid_argument("tensor: rank " + std::to_string(rank()) + " has no row count");
}

Index Tensor::cols() const {
  if (rank() == 2) return shape[1];
  if (rank() == 1) return shape[0];
  throw std::invalid_argument("tensor: rank " + std::to_string(rank()) + " has no column count");
}

MatMap Tensor::mat() { return MatMap(values.data(), rows(), cols()); }
ConstMatMap Tensor::mat() const { return ConstMatMap(values.data(), rows(), cols()); }

double& Tensor::at(Index r, Index c) { return values[r * cols() + c]; }
double Tensor::at(Index r, Index c) const { return values[r * cols() + c]; }

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad = Eigen::VectorXd::Zero(values.size());
}

void Tensor::zero_grad() {
  if (grad.size() > 0) grad.setZero();
}

bool Tensor::all_finite() const {
  return values.allFinite() && (grad.size() == 0 || grad.allFinite());
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel()) {
    throw std::invalid_argument("reshape: " + shape_str(shape) + " to " + shape_str(s) +
                                " changes element count");
  }
  Tensor t(std::move(s), values);
  return t;
}

const Shape& Var::shape() const { return tape->shape(id); }
Index Var::rows() const {
  const Shape& s = shape();
  return s.size() == 2 ? s[0] : 1;
}
Index Var::cols() const {
  const Shape& s = shape();
  return s.size() == 2 ? s[1] : s[0];
}

namespace {

Index rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
Index cols_of(const Shape& s) { return s.size() == 2 ? s[1] : (s.empty() ? 0 : s[0]); }

ConstMatMap map_of(const Eigen::VectorXd& v, const Shape& s) {
  return ConstMatMap(v.data(), rows_of(s), cols_of(s));
}

MatMap mut_map_of(Eigen::VectorXd& v, const Shape& s) {
  return MatMap(v.data(), rows_of(s), cols_of(s));
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

void Tape::check_same_tape(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("tape: var does not belong to this tape");
  }
}

const Eigen::VectorXd& Tape::values(int id) const {
  const Node& n = nodes_[id];
  return n.external ? n.external->values : n.values;
}

ConstMatMap Tape::mat(int id) const { return map_of(values(id), nodes_[id].shape); }

double Tape::scalar_value(Var v) const {
  check_same_tape(v);
  if (values(v.id).size() != 1) {
    throw std::invalid_argument("tape: node " + shape_str(shape(v.id)) + " is not scalar");
  }
  return values(v.id)[0];
}

void Tape::clear() {
  nodes_.clear();
  leaf_cache_.clear();
}

Var Tape::leaf(Tensor& param) {
  for (const auto& [ptr, id] : leaf_cache_) {
    if (ptr == &param) return Var{this, id};
  }
  Node n;
  n.op = OpKind::Leaf;
  n.shape = param.shape;
  n.external = &param;
  int id = push(std::move(n));
  leaf_cache_.emplace_back(&param, id);
  return Var{this, id};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = OpKind::Constant;
  n.shape = value.shape;
  n.values = std::move(value.values);
  return Var{this, push(std::move(n))};
}

Var Tape::constant_full(Shape s, double value) { return constant(Tensor::full(std::move(s), value)); }

Var Tape::emit_matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Shape& sa = shape(a.id);
  const Shape& sb = shape(b.id);
  if (sa.size() != 2 || sb.size() != 2) {
    throw std::invalid_argument("matmul: expects rank-2 operands, got " + shape_str(sa) + " and " +
                                shape_str(sb));
  }
  if (sa[1] != sb[0]) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(sa) + " vs " +
                                shape_str(sb));
  }
  Node n;
  n.op = OpKind::MatMul;
  n.shape = {sa[0], sb[1]};
  n.inputs = {a.id, b.id};
  n.values.resize(sa[0] * sb[1]);
  mut_map_of(n.values, n.shape).noalias() = mat(a.id) * mat(b.id);
  return Var{this, push(std::move(n))};
}

Var Tape::emit_ew(OpKind op, Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Shape& sa = shape(a.id);
  const Shape& sb = shape(b.id);
  if (!shape_equal(sa, sb)) {
    throw std::invalid_argument("elementwise op: shapes differ: " + shape_str(sa) + " vs " +
                                shape_str(sb));
  }
  Node n;
  n.op = op;
  n.shape = sa;
  n.inputs = {a.id, b.id};
  switch (op) {
    case OpKind::Add: n.values = values(a.id) + values(b.id); break;
    case OpKind::Sub: n.values = values(a.id) - values(b.id); break;
    case OpKind::Mul: n.values = values(a.id).cwiseProduct(values(b.id)); break;
    default: throw std::logic_error("emit_ew: bad op");
  }
  return Var{this, push(std::move(n))};
}

Var Tape::emit_unary(OpKind op, Var x) {
  check_same_tape(x);
  const Eigen::VectorXd& v = values(x.id);
  Node n;
  n.op = op;
  n.shape = shape(x.id);
  n.inputs = {x.id};
  switch (op) {
    case OpKind::Tanh: n.values = v.array().tanh(); break;
    case OpKind::Sigmoid: n.values = 1.0 / (1.0 + (-v.array()).exp()); break;
    case OpKind::Relu: n.values = v.cwiseMax(0.0); break;
    case OpKind::Exp: n.values = v.array().exp(); break;
    case OpKind::Log:
      if ((v.array() <= 0.0).any()) {
        throw std::domain_error("log: non-positive input");
      }
      n.values = v.array().log();
      break;
    case OpKind::Square: n.values = v.array().square(); break;
    default: throw std::logic_error("emit_unary: bad op");
  }
  return Var{this, push(std::move(n))};
}

Var Tape::emit_concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (Var p : parts) check_same_tape(p);
  const Shape& first = shape(parts[0].id);
  Index rank = static_cast<Index>(first.size());
  if (rank == 1 && axis != 0) throw std::invalid_argument("concat: rank-1 tensors concat on axis 0");
  Index other_axis_dim = rank == 2 ? first[1 - axis] : 0;
  Index along = 0;
  for (Var p : parts) {
    const Shape& sp = shape(p.id);
    if (static_cast<Index>(sp.size()) != rank ||
        (rank == 2 && sp[1 - axis] != other_axis_dim)) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_str(first) + " and " +
                                  shape_str(sp));
    }
    along += rank == 2 ? sp[axis] : sp[0];
  }
  Node n;
  n.op = OpKind::Concat;
  n.axis = axis;
  if (rank == 1) {
    n.shape = {along};
  } else {
    n.shape = axis == 0 ? Shape{along, other_axis_dim} : Shape{other_axis_dim, along};
  }
  for (Var p : parts) n.inputs.push_back(p.id);
  n.values.resize(shape_numel(n.shape));
  MatMap out = mut_map_of(n.values, n.shape);
  Index offset = 0;
  for (Var p : parts) {
    ConstMatMap in = mat(p.id);
    if (axis == 0) {
      out.middleRows(offset, in.rows()) = in;
      offset += in.rows();
    } else {
      out.middleCols(offset, in.cols()) = in;
      offset += in.cols();
    }
  }
  return Var{this, push(std::move(n))};
}

Var Tape::emit_slice(Var x, int axis, Index start, Index end) {
  check_same_tape(x);
  const Shape& s = shape(x.id);
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  Index rank = static_cast<Index>(s.size());
  if (rank == 1 && axis != 0) throw std::invalid_argument("slice: rank-1 tensors slice on axis 0");
  Index dim = rank == 2 ? s[axis] : s[0];
  if (start < 0 || end < start || end > dim) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(end) + ") out of bounds for " + shape_str(s));
  }
  Node n;
  n.op = OpKind::Slice;
  n.axis = axis;
  n.start = start;
  n.end = end;
  n.inputs = {x.id};
  if (rank == 1) {
    n.shape = {end - start};
  } else {
    n.shape = axis == 0 ? Shape{end - start, s[1]} : Shape{s[0], end - start};
  }
  n.values.resize(shape_numel(n.shape));
  ConstMatMap in = mat(x.id);
  if (axis == 0) {
    mut_map_of(n.values, n.shape) = in.middleRows(start, end - start);
  } else {
    mut_map_of(n.values, n.shape) = in.middleCols(start, end - start);
  }
  return Var{this, push(std::move(n))};
}

Var Tape::emit_transpose(Var x) {
  check_same_tape(x);
  const Shape& s = shape(x.id);
  if (s.size() != 2) throw std::invalid_argument("transpose: expects rank-2, got " + shape_str(s));
  Node n;
  n.op = OpKind::Transpose;
  n.shape = {s[1], s[0]};
  n.inputs = {x.id};
  n.values.resize(shape_numel(n.shape));
  mut_map_of(n.values, n.shape) = mat(x.id).transpose();
  return Var{this, push(std::move(n))};
}

Var Tape::emit_reduce(OpKind op, Var x) {
  check_same_tape(x);
  const Eigen::VectorXd& v = values(x.id);
  Node n;
  n.op = op;
  n.shape = {1, 1};
  n.inputs = {x.id};
  n.values.resize(1);
  if (op == OpKind::Sum) {
    n.values[0] = v.sum();
  } else if (op == OpKind::Mean) {
    if (v.size() == 0) throw std::invalid_argument("mean: empty tensor");
    n.values[0] = v.mean();
  } else {
    throw std::logic_error("emit_reduce: bad op");
  }
  return Var{this, push(std::move(n))};
}

Var Tape::emit_masked_softmax(Var x, std::vector<std::uint8_t> mask) {
  check_same_tape(x);
  const Shape& s = shape(x.id);
  Index ncols = cols_of(s);
  if (static_cast<Index>(mask.size()) != ncols) {
    throw std::invalid_argument("masked_softmax: mask length " + std::to_string(mask.size()) +
                                " does not match last axis of " + shape_str(s));
  }
  bool any = false;
  for (std::uint8_t m : mask) any = any || m;
  if (ncols > 0 && !any) throw std::invalid_argument("masked_softmax: empty support");
  Node n;
  n.op = OpKind::MaskedSoftmax;
  n.shape = s;
  n.inputs = {x.id};
  n.mask = std::move(mask);
  n.values.resize(values(x.id).size());
  ConstMatMap in = map_of(values(x.id), s);
  MatMap out = mut_map_of(n.values, s);
  for (Index r = 0; r < in.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < ncols; ++c) {
      if (n.mask[c]) mx = std::max(mx, in(r, c));
    }
    double total = 0.0;
    for (Index c = 0; c < ncols; ++c) {
      double e = n.mask[c] ? std::exp(in(r, c) - mx) : 0.0;
      out(r, c) = e;
      total += e;
    }
    for (Index c = 0; c < ncols; ++c) out(r, c) /= total;
  }
  return Var{this, push(std::move(n))};
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  if (values(loss.id).size() != 1) {
    throw std::invalid_argument("backward: loss node is not scalar, shape " +
                                shape_str(shape(loss.id)));
  }
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
    nodes_[id].grad = Eigen::VectorXd::Zero(values(id).size());
  }
  nodes_[loss.id].grad[0] = 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    backward_node(id);
  }
}

void Tape::backward_node(int id) {
  Node& n = nodes_[id];
  const Eigen::VectorXd& g = n.grad;
  switch (n.op) {
    case OpKind::Leaf: {
      n.external->ensure_grad();
      n.external->grad += g;
      return;
    }
    case OpKind::Constant:
      return;
    case OpKind::MatMul: {
      Node& a = nodes_[n.inputs[0]];
      Node& b = nodes_[n.inputs[1]];
      ConstMatMap gm = map_of(g, n.shape);
      mut_map_of(a.grad, a.shape).noalias() += gm * mat(n.inputs[1]).transpose();
      mut_map_of(b.grad, b.shape).noalias() += mat(n.inputs[0]).transpose() * gm;
      return;
    }
    case OpKind::Add: {
      nodes_[n.inputs[0]].grad += g;
      nodes_[n.inputs[1]].grad += g;
      return;
    }
    case OpKind::Sub: {
      nodes_[n.inputs[0]].grad += g;
      nodes_[n.inputs[1]].grad -= g;
      return;
    }
    case OpKind::Mul: {
      nodes_[n.inputs[0]].grad += g.cwiseProduct(values(n.inputs[1]));
      nodes_[n.inputs[1]].grad += g.cwiseProduct(values(n.inputs[0]));
      return;
    }
    case OpKind::Concat: {
      ConstMatMap gm = map_of(g, n.shape);
      Index offset = 0;
      for (int in_id : n.inputs) {
        Node& p = nodes_[in_id];
        MatMap pg = mut_map_of(p.grad, p.shape);
        if (n.axis == 0) {
          pg += gm.middleRows(offset, pg.rows());
          offset += pg.rows();
        } else {
          pg += gm.middleCols(offset, pg.cols());
          offset += pg.cols();
        }
      }
      return;
    }
    case OpKind::Slice: {
      Node& x = nodes_[n.inputs[0]];
      MatMap xg = mut_map_of(x.grad, x.shape);
      ConstMatMap gm = map_of(g, n.shape);
      if (n.axis == 0) {
        xg.middleRows(n.start, n.end - n.start) += gm;
      } else {
        xg.middleCols(n.start, n.end - n.start) += gm;
      }
      return;
    }
    case OpKind::Transpose: {
      Node& x = nodes_[n.inputs[0]];
      mut_map_of(x.grad, x.shape) += map_of(g, n.shape).transpose();
      return;
    }
    case OpKind::Sum: {
      nodes_[n.inputs[0]].grad.array() += g[0];
      return;
    }
    case OpKind::Mean: {
      Node& x = nodes_[n.inputs[0]];
      x.grad.array() += g[0] / static_cast<double>(x.grad.size());
      return;
    }
    case OpKind::Tanh: {
      nodes_[n.inputs[0]].grad.array() += g.array() * (1.0 - n.values.array().square());
      return;
    }
    case OpKind::Sigmoid: {
      nodes_[n.inputs[0]].grad.array() += g.array() * n.values.array() * (1.0 - n.values.array());
      return;
    }
    case OpKind::Relu: {
      const Eigen::VectorXd& x = values(n.inputs[0]);
      nodes_[n.inputs[0]].grad.array() +=
          g.array() * (x.array() > 0.0).cast<double>();
      return;
    }
    case OpKind::Exp: {
      nodes_[n.inputs[0]].grad.array() += g.array() * n.values.array();
      return;
    }
    case OpKind::Log: {
      nodes_[n.inputs[0]].grad.array() += g.array() / values(n.inputs[0]).array();
      return;
    }
    case OpKind::Square: {
      nodes_[n.inputs[0]].grad.array() += 2.0 * g.array() * values(n.inputs[0]).array();
      return;
    }
    case OpKind::MaskedSoftmax: {
      Node& x = nodes_[n.inputs[0]];
      ConstMatMap y = map_of(n.values, n.shape);
      ConstMatMap gy = map_of(g, n.shape);
      MatMap gx = mut_map_of(x.grad, x.shape);
      for (Index r = 0; r < y.rows(); ++r) {
        double dot = y.row(r).dot(gy.row(r));
        gx.row(r).array() += y.row(r).array() * (gy.row(r).array() - dot);
      }
      return;
    }
  }
  throw std::logic_error("backward: unhandled op");
}

Var matmul(Var a, Var b) { return a.tape->emit_matmul(a, b); }
Var add(Var a, Var b) { return a.tape->emit_ew(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return a.tape->emit_ew(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return a.tape->emit_ew(OpKind::Mul, a, b); }
Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  return parts[0].tape->emit_concat(parts, axis);
}
Var concat(std::initializer_list<Var> parts, int axis) {
  std::vector<Var> v(parts);
  return concat(std::span<const Var>(v), axis);
}
Var slice(Var x, int axis, Index start, Index end) { return x.tape->emit_slice(x, axis, start, end); }
Var transpose(Var x) { return x.tape->emit_transpose(x); }
Var sum(Var x) { return x.tape->emit_reduce(OpKind::Sum, x); }
Var mean(Var x) { return x.tape->emit_reduce(OpKind::Mean, x); }
Var tanh(Var x) { return x.tape->emit_unary(OpKind::Tanh, x); }
Var sigmoid(Var x) { return x.tape->emit_unary(OpKind::Sigmoid, x); }
Var relu(Var x) { return x.tape->emit_unary(OpKind::Relu, x); }
Var exp(Var x) { return x.tape->emit_unary(OpKind::Exp, x); }
Var log(Var x) { return x.tape->emit_unary(OpKind::Log, x); }
Var square(Var x) { return x.tape->emit_unary(OpKind::Square, x); }
Var masked_softmax(Var x, std::vector<std::uint8_t> mask) {
  return x.tape->emit_masked_softmax(x, std::move(mask));
}
Var softmax(Var x) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(x.cols()), 1);
  return masked_softmax(x, std::move(mask));
}

Var scale(Var x, double k) { return mul(x, x.tape->constant_full(x.shape(), k)); }

Var add_all(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("add_all: no parts");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

double grad_check(const std::function<Var(Tape&)>& build_loss,
                  std::span<Tensor* const> params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
    throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-2]");
  }
  auto eval = [&]() {
    Tape tape;
    Var loss = build_loss(tape);
    double v = tape.scalar_value(loss);
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };

  for (Tensor* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build_loss(tape);
    if (!std::isfinite(tape.scalar_value(loss))) {
      throw std::runtime_error("grad_check: non-finite loss");
    }
    tape.backward(loss);
  }
  std::vector<Eigen::VectorXd> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    for (Index i = 0; i < p->numel(); ++i) {
      double saved = p->values[i];
      p->values[i] = saved + epsilon;
      double up = eval();
      p->values[i] = saved - epsilon;
      double down = eval();
      p->values[i] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace sliceqa
