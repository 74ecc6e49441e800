#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dmf/tensor.hpp"

namespace dmf {

/// A primal value paired with a tangent of the same shape. Every op below
/// pushes the tangent forward with the op's Jacobian at the primal point, so
/// the output tangent is a directional derivative (forward-mode JVP).
struct DualTensor {
  Tensor primal;
  Tensor tangent;

  DualTensor() = default;
  DualTensor(Tensor p, Tensor t) : primal(std::move(p)), tangent(std::move(t)) {
    if (primal.shape() != tangent.shape()) {
      throw ShapeError("dual: primal " + shape_str(primal.shape()) + " vs tangent " +
                       shape_str(tangent.shape()));
    }
  }

  static DualTensor constant(Tensor p) {
    Tensor t(p.shape());
    return {std::move(p), std::move(t)};
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }

/// d/dx [x sigmoid(x)].
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline Tensor silu(const Tensor& x) { return map(x, [](double v) { return silu(v); }); }

/// x W + b with x (B x in), W (in x out), b [out].
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

namespace dual {

inline DualTensor add(const DualTensor& a, const DualTensor& b) {
  return {dmf::add(a.primal, b.primal), dmf::add(a.tangent, b.tangent)};
}

inline DualTensor sub(const DualTensor& a, const DualTensor& b) {
  return {dmf::sub(a.primal, b.primal), dmf::sub(a.tangent, b.tangent)};
}

inline DualTensor mul(const DualTensor& a, const DualTensor& b) {
  if (a.primal.shape() != b.primal.shape()) {
    throw ShapeError("dual mul: shape mismatch " + shape_str(a.primal.shape()) + " vs " +
                     shape_str(b.primal.shape()));
  }
  return {dmf::mul(a.primal, b.primal),
          dmf::add(dmf::mul(a.tangent, b.primal), dmf::mul(a.primal, b.tangent))};
}

inline DualTensor neg(const DualTensor& a) { return {dmf::neg(a.primal), dmf::neg(a.tangent)}; }

inline DualTensor matmul(const DualTensor& a, const DualTensor& b) {
  return {dmf::matmul(a.primal, b.primal),
          dmf::add(dmf::matmul(a.tangent, b.primal), dmf::matmul(a.primal, b.tangent))};
}

/// Affine map with constant parameters: only the input carries a tangent.
inline DualTensor affine(const DualTensor& x, const Tensor& w, const Tensor& b) {
  return {dmf::affine(x.primal, w, b), dmf::matmul(x.tangent, w)};
}

inline DualTensor silu(const DualTensor& x) {
  Tensor t(x.primal.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = silu_grad(x.primal[i]) * x.tangent[i];
  return {dmf::silu(x.primal), std::move(t)};
}

}  // namespace dual

/// A straight-line program over the supported primitives. Nodes may only
/// reference earlier nodes; the last node added is the output.
class Graph {
 public:
  using Node = std::size_t;
  using Opaque = std::function<Tensor(const Tensor&)>;

  Node input() { return push(Input{}); }
  Node constant(Tensor value) { return push(Constant{std::move(value)}); }
  Node add(Node a, Node b) { return push(Binary{Kind::Add, check(a), check(b)}); }
  Node sub(Node a, Node b) { return push(Binary{Kind::Sub, check(a), check(b)}); }
  Node mul(Node a, Node b) { return push(Binary{Kind::Mul, check(a), check(b)}); }
  Node matmul(Node a, Node b) { return push(Binary{Kind::MatMul, check(a), check(b)}); }
  Node neg(Node a) { return push(Unary{Kind::Neg, check(a)}); }
  Node silu(Node a) { return push(Unary{Kind::Silu, check(a)}); }
  Node affine(Node x, Tensor w, Tensor b) { return push(Affine{check(x), std::move(w), std::move(b)}); }

  /// An arbitrary function with no registered tangent rule. It evaluates
  /// but makes the graph ineligible for dual_forward.
  Node opaque(std::string name, Opaque fn, Node a) { return push(OpaqueOp{std::move(name), std::move(fn), check(a)}); }

  std::size_t size() const { return nodes_.size(); }

  Tensor evaluate(const Tensor& x) const {
    std::vector<Tensor> vals;
    vals.reserve(nodes_.size());
    for (const auto& node : nodes_) {
      vals.push_back(std::visit([&](const auto& n) { return eval(n, x, vals); }, node));
    }
    if (vals.empty()) throw Error("graph: empty");
    return vals.back();
  }

  DualTensor evaluate_dual(const Tensor& x, const Tensor& v) const {
    std::vector<DualTensor> vals;
    vals.reserve(nodes_.size());
    const DualTensor in(x, v);
    for (const auto& node : nodes_) {
      vals.push_back(std::visit([&](const auto& n) { return push_forward(n, in, vals); }, node));
    }
    if (vals.empty()) throw Error("graph: empty");
    return vals.back();
  }

 private:
  enum class Kind { Add, Sub, Mul, MatMul, Neg, Silu };
  struct Input {};
  struct Constant {
    Tensor value;
  };
  struct Binary {
    Kind kind;
    Node a, b;
  };
  struct Unary {
    Kind kind;
    Node a;
  };
  struct Affine {
    Node x;
    Tensor w, b;
  };
  struct OpaqueOp {
    std::string name;
    Opaque fn;
    Node a;
  };
  using Op = std::variant<Input, Constant, Binary, Unary, Affine, OpaqueOp>;

  Node push(Op op) {
    nodes_.push_back(std::move(op));
    return nodes_.size() - 1;
  }

  Node check(Node n) const {
    if (n >= nodes_.size()) throw Error("graph: reference to undefined node " + std::to_string(n));
    return n;
  }

  static Tensor eval(const Input&, const Tensor& x, const std::vector<Tensor>&) { return x; }
  static Tensor eval(const Constant& c, const Tensor&, const std::vector<Tensor>&) { return c.value; }
  static Tensor eval(const Binary& op, const Tensor&, const std::vector<Tensor>& v) {
    switch (op.kind) {
      case Kind::Add:
        return dmf::add(v[op.a], v[op.b]);
      case Kind::Sub:
        return dmf::sub(v[op.a], v[op.b]);
      case Kind::Mul:
        return dmf::mul(v[op.a], v[op.b]);
      default:
        return dmf::matmul(v[op.a], v[op.b]);
    }
  }
  static Tensor eval(const Unary& op, const Tensor&, const std::vector<Tensor>& v) {
    return op.kind == Kind::Neg ? dmf::neg(v[op.a]) : dmf::silu(v[op.a]);
  }
  static Tensor eval(const Affine& op, const Tensor&, const std::vector<Tensor>& v) {
    return dmf::affine(v[op.x], op.w, op.b);
  }
  static Tensor eval(const OpaqueOp& op, const Tensor&, const std::vector<Tensor>& v) { return op.fn(v[op.a]); }

  static DualTensor push_forward(const Input&, const DualTensor& in, const std::vector<DualTensor>&) { return in; }
  static DualTensor push_forward(const Constant& c, const DualTensor&, const std::vector<DualTensor>&) {
    return DualTensor::constant(c.value);
  }
  static DualTensor push_forward(const Binary& op, const DualTensor&, const std::vector<DualTensor>& v) {
    switch (op.kind) {
      case Kind::Add:
        return dual::add(v[op.a], v[op.b]);
      case Kind::Sub:
        return dual::sub(v[op.a], v[op.b]);
      case Kind::Mul:
        return dual::mul(v[op.a], v[op.b]);
      default:
        return dual::matmul(v[op.a], v[op.b]);
    }
  }
  static DualTensor push_forward(const Unary& op, const DualTensor&, const std::vector<DualTensor>& v) {
    return op.kind == Kind::Neg ? dual::neg(v[op.a]) : dual::silu(v[op.a]);
  }
  static DualTensor push_forward(const Affine& op, const DualTensor&, const std::vector<DualTensor>& v) {
    return dual::affine(v[op.x], op.w, op.b);
  }
  static DualTensor push_forward(const OpaqueOp& op, const DualTensor&, const std::vector<DualTensor>&) {
    throw Error("dual_forward: unsupported primitive '" + op.name + "' has no tangent rule");
  }

  std::vector<Op> nodes_;
};

/// Evaluates `f` at `primal_in` and pushes `tangent_in` through it.
inline DualTensor dual_forward(const Graph& f, const Tensor& primal_in, const Tensor& tangent_in) {
  return f.evaluate_dual(primal_in, tangent_in);
}

}  // namespace dmf
