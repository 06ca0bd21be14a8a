// SPDX-License-Identifier: Apache-2.0

#include "gatelab/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gatelab {

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw std::invalid_argument("Tape: " + what);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
         shape_str(b.shape));
  }
}

}  // namespace

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::check(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    fail("node id " + std::to_string(id) + " out of range");
  }
  return id;
}

NodeId Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::leaf;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::leaf;
  n.needs_grad = false;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape("add", va, vb);
  Node n;
  n.op = Op::add;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.value = Tensor(va.shape, std::vector<double>(va.size()));
  kernels::add(va.data.data(), vb.data.data(), n.value.data.data(), va.size());
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape("sub", va, vb);
  Node n;
  n.op = Op::sub;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.value = Tensor(va.shape, std::vector<double>(va.size()));
  kernels::sub(va.data.data(), vb.data.data(), n.value.data.data(), va.size());
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape("mul", va, vb);
  Node n;
  n.op = Op::mul;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.value = Tensor(va.shape, std::vector<double>(va.size()));
  kernels::mul(va.data.data(), vb.data.data(), n.value.data.data(), va.size());
  return push(std::move(n));
}

namespace {

// Resolves the effective (m, k, n) for matmul with rank-1 promotion.
struct MatmulDims {
  std::size_t m, k, n;
  bool squeeze_left, squeeze_right;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  MatmulDims d{};
  if (a.rank() == 1) {
    d.m = 1;
    d.k = a.shape[0];
    d.squeeze_left = true;
  } else if (a.rank() == 2) {
    d.m = a.shape[0];
    d.k = a.shape[1];
    d.squeeze_left = false;
  } else {
    fail("matmul: left operand must be rank 1 or 2, got " +
         shape_str(a.shape));
  }
  std::size_t bk;
  if (b.rank() == 1) {
    bk = b.shape[0];
    d.n = 1;
    d.squeeze_right = true;
  } else if (b.rank() == 2) {
    bk = b.shape[0];
    d.n = b.shape[1];
    d.squeeze_right = false;
  } else {
    fail("matmul: right operand must be rank 1 or 2, got " +
         shape_str(b.shape));
  }
  if (d.k != bk) {
    fail("matmul: inner dimensions disagree, " + shape_str(a.shape) + " vs " +
         shape_str(b.shape));
  }
  return d;
}

}  // namespace

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  const MatmulDims d = matmul_dims(va, vb);
  std::vector<std::size_t> out_shape;
  if (!d.squeeze_left) out_shape.push_back(d.m);
  if (!d.squeeze_right) out_shape.push_back(d.n);
  Node n;
  n.op = Op::matmul;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.value = Tensor(std::move(out_shape), std::vector<double>(d.m * d.n));
  kernels::matmul(va.data.data(), vb.data.data(), n.value.data.data(), d.m,
                  d.k, d.n);
  return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.rank() != 1 || vb.rank() != 1) {
    fail("concat: both operands must be rank 1, got " + shape_str(va.shape) +
         " and " + shape_str(vb.shape));
  }
  Node n;
  n.op = Op::concat;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  std::vector<double> out(va.size() + vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va.data[i];
  for (std::size_t i = 0; i < vb.size(); ++i) out[va.size() + i] = vb.data[i];
  const std::size_t total = out.size();
  n.value = Tensor({total}, std::move(out));
  return push(std::move(n));
}

namespace {

template <typename Kernel>
Tensor apply_elementwise(const Tensor& x, Kernel&& kernel) {
  Tensor out(x.shape, std::vector<double>(x.size()));
  kernel(x.data.data(), out.data.data(), x.size());
  return out;
}

}  // namespace

NodeId Tape::sigmoid(NodeId x) {
  Node n;
  n.op = Op::sigmoid;
  n.in0 = x;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(value(x), [](const double* in, double* out,
                                           std::size_t c) {
    kernels::sigmoid(in, out, c);
  });
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
  Node n;
  n.op = Op::tanh;
  n.in0 = x;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(
      value(x),
      [](const double* in, double* out, std::size_t c) {
        kernels::tanh(in, out, c);
      });
  return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
  Node n;
  n.op = Op::log;
  n.in0 = x;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(
      value(x),
      [](const double* in, double* out, std::size_t c) {
        kernels::log(in, out, c);
      });
  return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
  Node n;
  n.op = Op::exp;
  n.in0 = x;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(
      value(x),
      [](const double* in, double* out, std::size_t c) {
        kernels::exp(in, out, c);
      });
  return push(std::move(n));
}

NodeId Tape::min_const(NodeId x, double c) {
  Node n;
  n.op = Op::min_const;
  n.in0 = x;
  n.aux = c;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(
      value(x), [c](const double* in, double* out, std::size_t count) {
        kernels::min_const(in, c, out, count);
      });
  return push(std::move(n));
}

NodeId Tape::max_const(NodeId x, double c) {
  Node n;
  n.op = Op::max_const;
  n.in0 = x;
  n.aux = c;
  n.needs_grad = nodes_[check(x)].needs_grad;
  n.value = apply_elementwise(
      value(x), [c](const double* in, double* out, std::size_t count) {
        kernels::max_const(in, c, out, count);
      });
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  const Tensor& vx = value(x);
  Node n;
  n.op = Op::sum;
  n.in0 = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.value = Tensor::scalar(kernels::sum(vx.data.data(), vx.size()));
  return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
  const Tensor& vx = value(x);
  if (vx.size() == 0) fail("mean: empty tensor");
  Node n;
  n.op = Op::mean;
  n.in0 = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.value = Tensor::scalar(kernels::sum(vx.data.data(), vx.size()) /
                           static_cast<double>(vx.size()));
  return push(std::move(n));
}

NodeId Tape::embedding(NodeId table, std::size_t row) {
  const Tensor& vt = value(table);
  if (vt.rank() != 2) {
    fail("embedding: table must be rank 2, got " + shape_str(vt.shape));
  }
  if (row >= vt.shape[0]) {
    fail("embedding: row " + std::to_string(row) + " out of range for table " +
         shape_str(vt.shape));
  }
  Node n;
  n.op = Op::embedding;
  n.in0 = table;
  n.row = row;
  n.needs_grad = nodes_[table].needs_grad;
  const std::size_t cols = vt.shape[1];
  std::vector<double> out(cols);
  for (std::size_t j = 0; j < cols; ++j) out[j] = vt.data[row * cols + j];
  n.value = Tensor({cols}, std::move(out));
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId x) {
  const Tensor& vx = value(x);
  if (vx.rank() != 1) {
    fail("softmax: operand must be rank 1, got " + shape_str(vx.shape));
  }
  Node n;
  n.op = Op::softmax;
  n.in0 = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.value = Tensor(vx.shape, std::vector<double>(vx.size()));
  kernels::softmax(vx.data.data(), n.value.data.data(), vx.size());
  return push(std::move(n));
}

NodeId Tape::log_softmax(NodeId x) {
  const Tensor& vx = value(x);
  if (vx.rank() != 1) {
    fail("log_softmax: operand must be rank 1, got " + shape_str(vx.shape));
  }
  Node n;
  n.op = Op::log_softmax;
  n.in0 = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.value = Tensor(vx.shape, std::vector<double>(vx.size()));
  kernels::log_softmax(vx.data.data(), n.value.data.data(), vx.size());
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId x, std::vector<std::size_t> shape) {
  const Tensor& vx = value(x);
  if (shape_size(shape) != vx.size()) {
    fail("reshape: cannot view " + shape_str(vx.shape) + " as " +
         shape_str(shape));
  }
  Node n;
  n.op = Op::reshape;
  n.in0 = x;
  n.needs_grad = nodes_[x].needs_grad;
  n.value = Tensor(std::move(shape), vx.data);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double factor) {
  return mul(x, constant(Tensor::full(value(x).shape, factor)));
}

NodeId Tape::shift(NodeId x, double offset) {
  return add(x, constant(Tensor::full(value(x).shape, offset)));
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = nodes_[check(id)];
  if (!n.has_grad) {
    fail("grad: node " + std::to_string(id) +
         " has no gradient (backward not run, or node does not track one)");
  }
  return n.grad;
}

void Tape::accumulate(NodeId target, const double* g, std::size_t n) {
  Node& t = nodes_[target];
  if (!t.needs_grad) return;
  for (std::size_t i = 0; i < n; ++i) t.grad.data[i] += g[i];
}

void Tape::backward(NodeId root) {
  check(root);
  if (!nodes_[root].value.is_scalar()) {
    fail("backward: root must be a scalar, got " +
         shape_str(nodes_[root].value.shape));
  }
  if (!nodes_[root].needs_grad) {
    fail("backward: root does not depend on any differentiable leaf");
  }
  // Allocate (or zero-extend) adjoint buffers for every tracking node at or
  // below the root.
  for (NodeId id = 0; id <= root; ++id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) continue;
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape);
      n.has_grad = true;
    }
  }
  nodes_[root].grad.data[0] += 1.0;

  // Exact reverse creation order; nodes above the root hold zero adjoints.
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.op == Op::leaf) continue;
    const double* g = n.grad.data.data();
    const std::size_t count = n.value.size();
    const Tensor& out = n.value;
    switch (n.op) {
      case Op::add: {
        accumulate(n.in0, g, count);
        accumulate(n.in1, g, count);
        break;
      }
      case Op::sub: {
        accumulate(n.in0, g, count);
        Node& b = nodes_[n.in1];
        if (b.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) b.grad.data[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const Tensor& va = nodes_[n.in0].value;
        const Tensor& vb = nodes_[n.in1].value;
        if (nodes_[n.in0].needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            nodes_[n.in0].grad.data[i] += g[i] * vb.data[i];
          }
        }
        if (nodes_[n.in1].needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            nodes_[n.in1].grad.data[i] += g[i] * va.data[i];
          }
        }
        break;
      }
      case Op::matmul: {
        const Tensor& va = nodes_[n.in0].value;
        const Tensor& vb = nodes_[n.in1].value;
        const MatmulDims d = matmul_dims(va, vb);
        // dA[i,p] += sum_j G[i,j] * B[p,j];  dB[p,j] += sum_i A[i,p] * G[i,j]
        if (nodes_[n.in0].needs_grad) {
          double* da = nodes_[n.in0].grad.data.data();
          for (std::size_t i = 0; i < d.m; ++i) {
            for (std::size_t p = 0; p < d.k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < d.n; ++j) {
                acc += g[i * d.n + j] * vb.data[p * d.n + j];
              }
              da[i * d.k + p] += acc;
            }
          }
        }
        if (nodes_[n.in1].needs_grad) {
          double* db = nodes_[n.in1].grad.data.data();
          for (std::size_t p = 0; p < d.k; ++p) {
            for (std::size_t j = 0; j < d.n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < d.m; ++i) {
                acc += va.data[i * d.k + p] * g[i * d.n + j];
              }
              db[p * d.n + j] += acc;
            }
          }
        }
        break;
      }
      case Op::concat: {
        const std::size_t left = nodes_[n.in0].value.size();
        accumulate(n.in0, g, left);
        accumulate(n.in1, g + left, count - left);
        break;
      }
      case Op::sigmoid: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            const double y = out.data[i];
            a.grad.data[i] += g[i] * y * (1.0 - y);
          }
        }
        break;
      }
      case Op::tanh: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            const double y = out.data[i];
            a.grad.data[i] += g[i] * (1.0 - y * y);
          }
        }
        break;
      }
      case Op::log: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            a.grad.data[i] += g[i] / a.value.data[i];
          }
        }
        break;
      }
      case Op::exp: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            a.grad.data[i] += g[i] * out.data[i];
          }
        }
        break;
      }
      case Op::min_const: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            if (a.value.data[i] <= n.aux) a.grad.data[i] += g[i];
          }
        }
        break;
      }
      case Op::max_const: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < count; ++i) {
            if (a.value.data[i] >= n.aux) a.grad.data[i] += g[i];
          }
        }
        break;
      }
      case Op::sum: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          for (std::size_t i = 0; i < a.value.size(); ++i) {
            a.grad.data[i] += g[0];
          }
        }
        break;
      }
      case Op::mean: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          const double share = g[0] / static_cast<double>(a.value.size());
          for (std::size_t i = 0; i < a.value.size(); ++i) {
            a.grad.data[i] += share;
          }
        }
        break;
      }
      case Op::embedding: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          const std::size_t cols = a.value.shape[1];
          for (std::size_t j = 0; j < cols; ++j) {
            a.grad.data[n.row * cols + j] += g[j];
          }
        }
        break;
      }
      case Op::softmax: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          double dot = 0.0;
          for (std::size_t i = 0; i < count; ++i) dot += g[i] * out.data[i];
          for (std::size_t i = 0; i < count; ++i) {
            a.grad.data[i] += out.data[i] * (g[i] - dot);
          }
        }
        break;
      }
      case Op::log_softmax: {
        Node& a = nodes_[n.in0];
        if (a.needs_grad) {
          double total = 0.0;
          for (std::size_t i = 0; i < count; ++i) total += g[i];
          for (std::size_t i = 0; i < count; ++i) {
            a.grad.data[i] += g[i] - std::exp(out.data[i]) * total;
          }
        }
        break;
      }
      case Op::reshape: {
        accumulate(n.in0, g, count);
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

}  // namespace gatelab
