// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on an explicit tape. Operations
// evaluate eagerly through the shared kernels in tensor.hpp and record one
// node each; backward() walks the tape once in exact reverse creation order
// and accumulates adjoints. There is no implicit broadcasting: elementwise
// operations require identical shapes and any reshaping is explicit.
#pragma once

#include <cstdint>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  matmul,
  concat,
  sigmoid,
  tanh,
  log,
  exp,
  min_const,
  max_const,
  sum,
  mean,
  embedding,
  softmax,
  log_softmax,
  reshape,
};

class Tape {
 public:
  // Creates a differentiable leaf; its gradient is available after backward().
  NodeId leaf(Tensor value);
  // Creates a non-differentiable leaf; no gradient is tracked through it.
  NodeId constant(Tensor value);
  NodeId constant(double value) { return constant(Tensor::scalar(value)); }

  // Elementwise; operands must have identical shapes.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);

  // Matrix product with rank-1 promotion: a rank-1 left operand acts as a
  // 1 x k row, a rank-1 right operand as a k x 1 column, and promoted axes
  // are squeezed from the result (so vector . vector yields a scalar).
  NodeId matmul(NodeId a, NodeId b);

  // Concatenation of two rank-1 vectors.
  NodeId concat(NodeId a, NodeId b);

  NodeId sigmoid(NodeId x);
  NodeId tanh(NodeId x);
  NodeId log(NodeId x);
  NodeId exp(NodeId x);

  // Elementwise min/max against a compile-time constant. The subgradient is
  // 1 on the active branch including the boundary point, 0 elsewhere.
  NodeId min_const(NodeId x, double c);
  NodeId max_const(NodeId x, double c);

  NodeId sum(NodeId x);
  NodeId mean(NodeId x);

  // Row lookup into a rank-2 table; gradients scatter-add into the row.
  NodeId embedding(NodeId table, std::size_t row);

  // Rank-1 softmax / log-softmax (max-shifted for stability).
  NodeId softmax(NodeId x);
  NodeId log_softmax(NodeId x);

  // Same element count, new shape; value and gradient are reinterpreted.
  NodeId reshape(NodeId x, std::vector<std::size_t> shape);

  // Convenience: affine transforms against scalar constants, built from the
  // primitive ops above.
  NodeId scale(NodeId x, double factor);
  NodeId shift(NodeId x, double offset);

  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
  const Tensor& grad(NodeId id) const;

  // Accumulates d(root)/d(node) into every gradient-tracking node at or
  // below root. The root must be a scalar.
  void backward(NodeId root);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Op op = Op::leaf;
    NodeId in0 = -1;
    NodeId in1 = -1;
    double aux = 0.0;        // constant for min_const / max_const
    std::size_t row = 0;     // row for embedding
    bool needs_grad = false;
    bool has_grad = false;
    Tensor value;
    Tensor grad;
  };

  NodeId push(Node node);
  NodeId check(NodeId id) const;
  void accumulate(NodeId target, const double* g, std::size_t n);

  std::vector<Node> nodes_;
};

}  // namespace gatelab
