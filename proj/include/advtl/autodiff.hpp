#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "advtl/errors.hpp"
#include "advtl/tensor.hpp"

namespace advtl {

// Handle to a node on a Tape. Ids increase in creation order.
struct Var {
  std::size_t id = 0;
};

// Gradients of a scalar root with respect to every tracked leaf that precedes it.
template <typename Scalar>
class Gradients {
 public:
  using Matrix = MatrixX<Scalar>;

  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Matrix>> by_node) : by_node_(std::move(by_node)) {}

  bool contains(Var v) const { return v.id < by_node_.size() && by_node_[v.id].has_value(); }

  const Matrix* find(Var v) const { return contains(v) ? &*by_node_[v.id] : nullptr; }

  const Matrix& at(Var v) const {
    if (!contains(v)) {
      throw ContractError(fmt::format("no gradient recorded for node {}", v.id));
    }
    return *by_node_[v.id];
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& g : by_node_) n += g.has_value() ? 1 : 0;
    return n;
  }

 private:
  std::vector<std::optional<Matrix>> by_node_;
};

// Append-only record of a computation over dense matrices. Forward values are
// computed eagerly as nodes are added; backward() walks the tape in reverse.
//
// Leaves created with `leaf_ref` alias caller-owned storage, which must outlive
// the tape and stay unmodified while the tape is in use.
template <typename Scalar>
class Tape {
 public:
  using Matrix = MatrixX<Scalar>;

  Var leaf(Matrix value, bool requires_grad = true) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  Var leaf_ref(const Matrix& value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.external = &value;
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    Node n = binary(Op::MatMul, a, b);
    n.value = advtl::matmul(av, bv);
    return push(std::move(n));
  }

  // x[n x m] + bias[1 x m] broadcast over rows.
  Var add_bias(Var x, Var bias) {
    const Matrix& xv = value(x);
    const Matrix& bv = value(bias);
    if (bv.rows() != 1 || bv.cols() != xv.cols()) {
      throw DimensionError(fmt::format("add_bias: bias {} does not broadcast over {}",
                                       shape_string(bv), shape_string(xv)));
    }
    Node n = binary(Op::AddBias, x, bias);
    n.value = xv.rowwise() + bv.row(0);
    return push(std::move(n));
  }

  Var add(Var a, Var b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
      throw DimensionError(
          fmt::format("add: shapes differ, {} and {}", shape_string(av), shape_string(bv)));
    }
    Node n = binary(Op::Add, a, b);
    n.value = av + bv;
    return push(std::move(n));
  }

  Var scale(Var x, Scalar factor) {
    Node n = unary(Op::Scale, x);
    n.factor = factor;
    n.value = value(x) * factor;
    return push(std::move(n));
  }

  Var relu(Var x) {
    Node n = unary(Op::Relu, x);
    n.value = value(x).cwiseMax(Scalar(0));
    return push(std::move(n));
  }

  Var sum(Var x) {
    Node n = unary(Op::Sum, x);
    n.value = Matrix::Constant(1, 1, value(x).sum());
    return push(std::move(n));
  }

  // Mean over rows of -log softmax(logits)[row, label[row]], computed with
  // max-subtraction so confident logits do not overflow.
  Var softmax_xent(Var logits, std::span<const int> labels) {
    const Matrix& z = value(logits);
    if (static_cast<std::size_t>(z.rows()) != labels.size()) {
      throw DimensionError(fmt::format("softmax_xent: {} logit rows but {} labels", z.rows(),
                                       labels.size()));
    }
    if (z.rows() == 0) throw ValidationError("softmax_xent: empty batch");
    const auto classes = z.cols();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= classes) {
        throw ValidationError(fmt::format("softmax_xent: label {} at row {} outside [0, {})",
                                          labels[i], i, classes));
      }
    }
    Node n = unary(Op::SoftmaxXent, logits);
    n.labels.assign(labels.begin(), labels.end());
    n.cache.resize(z.rows(), classes);
    Scalar total = 0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const Scalar m = z.row(i).maxCoeff();
      auto shifted = (z.row(i).array() - m).exp();
      const Scalar denom = shifted.sum();
      n.cache.row(i) = shifted / denom;
      total += (m + std::log(denom)) - z(i, labels[i]);
    }
    n.value = Matrix::Constant(1, 1, total / static_cast<Scalar>(z.rows()));
    return push(std::move(n));
  }

  const Matrix& value(Var v) const {
    const Node& n = node(v);
    return n.external != nullptr ? *n.external : n.value;
  }

  Scalar scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) {
      throw ContractError(fmt::format("node {} is {} not a scalar", v.id, shape_string(m)));
    }
    return m(0, 0);
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // d root / d leaf for every tracked leaf created before `root`. Leaves that
  // do not influence the root receive zeros. The tape itself is not modified.
  Gradients<Scalar> backward(Var root) const {
    if (value(root).size() != 1) {
      throw ContractError(
          fmt::format("backward: root {} is {}, expected a scalar", root.id,
                      shape_string(value(root))));
    }
    std::vector<Matrix> adj(root.id + 1);
    adj[root.id] = Matrix::Ones(1, 1);

    auto accumulate = [&](std::size_t id, Matrix&& g) {
      if (!nodes_[id].requires_grad) return;
      if (adj[id].size() == 0) {
        adj[id] = std::move(g);
      } else {
        adj[id] += g;
      }
    };

    for (std::size_t id = root.id + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!n.requires_grad || adj[id].size() == 0 || n.op == Op::Leaf) continue;
      const Matrix& up = adj[id];
      const std::size_t a = n.inputs[0];
      const std::size_t b = n.inputs[1];
      switch (n.op) {
        case Op::MatMul: {
          const Matrix& av = value(Var{a});
          const Matrix& bv = value(Var{b});
          if (nodes_[a].requires_grad) accumulate(a, up * bv.transpose());
          if (nodes_[b].requires_grad) accumulate(b, av.transpose() * up);
          break;
        }
        case Op::AddBias:
          if (nodes_[a].requires_grad) accumulate(a, Matrix(up));
          if (nodes_[b].requires_grad) accumulate(b, Matrix(up.colwise().sum()));
          break;
        case Op::Add:
          if (nodes_[a].requires_grad) accumulate(a, Matrix(up));
          if (nodes_[b].requires_grad) accumulate(b, Matrix(up));
          break;
        case Op::Scale:
          accumulate(a, Matrix(up * n.factor));
          break;
        case Op::Relu: {
          const Matrix& x = value(Var{a});
          accumulate(a, Matrix((x.array() > Scalar(0)).select(up.array(), Scalar(0))));
          break;
        }
        case Op::Sum: {
          const Matrix& x = value(Var{a});
          accumulate(a, Matrix::Constant(x.rows(), x.cols(), up(0, 0)));
          break;
        }
        case Op::SoftmaxXent: {
          Matrix g = n.cache;
          for (std::size_t i = 0; i < n.labels.size(); ++i) {
            g(static_cast<Eigen::Index>(i), n.labels[i]) -= Scalar(1);
          }
          g *= up(0, 0) / static_cast<Scalar>(n.labels.size());
          accumulate(a, std::move(g));
          break;
        }
        case Op::Leaf:
          break;
      }
    }

    std::vector<std::optional<Matrix>> grads(root.id + 1);
    for (std::size_t id = 0; id <= root.id; ++id) {
      const Node& n = nodes_[id];
      if (n.op != Op::Leaf || !n.requires_grad) continue;
      if (adj[id].size() == 0) {
        const Matrix& v = value(Var{id});
        grads[id] = Matrix::Zero(v.rows(), v.cols());
      } else {
        grads[id] = std::move(adj[id]);
      }
    }
    return Gradients<Scalar>(std::move(grads));
  }

 private:
  enum class Op : std::uint8_t { Leaf, MatMul, AddBias, Add, Scale, Relu, Sum, SoftmaxXent };

  struct Node {
    Op op = Op::Leaf;
    std::size_t inputs[2] = {0, 0};
    bool requires_grad = false;
    Matrix value;
    const Matrix* external = nullptr;
    Matrix cache;  // softmax probabilities
    std::vector<int> labels;
    Scalar factor = Scalar(1);
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) {
      throw ContractError(fmt::format("node {} is not on this tape", v.id));
    }
    return nodes_[v.id];
  }

  Node unary(Op op, Var x) const {
    Node n;
    n.op = op;
    n.inputs[0] = x.id;
    n.requires_grad = node(x).requires_grad;
    return n;
  }

  Node binary(Op op, Var a, Var b) const {
    Node n;
    n.op = op;
    n.inputs[0] = a.id;
    n.inputs[1] = b.id;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return n;
  }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace advtl
