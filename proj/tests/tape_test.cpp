// SPDX-License-Identifier: Apache-2.0
#include "gatelab/tape.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "gatelab/rng.hpp"
#include "test_util.hpp"

using namespace gatelab;
using gatelab::testing::check_gradient;
using gatelab::testing::random_tensor;

namespace {

// Reduces any node to a scalar through a fixed random projection so every
// output component influences the loss.
NodeId project(Tape& tape, NodeId x, std::uint64_t seed = 11) {
  const Tensor& v = tape.value(x);
  Rng rng(seed);
  Tensor w = random_tensor(rng, v.shape);
  if (v.is_scalar()) return tape.mul(x, tape.constant(std::move(w)));
  return tape.sum(tape.mul(x, tape.constant(std::move(w))));
}

}  // namespace

TEST_CASE("values propagate eagerly and constants reject gradients [tape]") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor::from_vector({1.0, 2.0}));
  const NodeId c = tape.constant(Tensor::from_vector({3.0, 5.0}));
  const NodeId s = tape.add(a, c);
  CHECK(tape.value(s).data == std::vector<double>{4.0, 7.0});
  tape.backward(tape.sum(s));
  CHECK(tape.grad(a).data == std::vector<double>{1.0, 1.0});
  CHECK_THROWS_AS((void)tape.grad(c), std::invalid_argument);
}

TEST_CASE("backward requires a differentiable scalar root [tape]") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor::from_vector({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);  // not scalar
  const NodeId c = tape.constant(2.0);
  CHECK_THROWS_AS(tape.backward(c), std::invalid_argument);  // no grad path
}

TEST_CASE("shape mismatches are rejected with both shapes named [tape]") {
  Tape tape;
  const NodeId a = tape.leaf(Tensor::zeros({2}));
  const NodeId b = tape.leaf(Tensor::zeros({3}));
  CHECK_THROWS_AS((void)tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.reshape(a, {4}), std::invalid_argument);
}

TEST_CASE("elementwise op gradients match finite differences [tape]") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor(rng, {4});
    const Tensor y = random_tensor(rng, {4});
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      const NodeId other = t.constant(y);
      return project(t, t.add(t.mul(leaf, other), t.sub(leaf, other)));
    });
  }
}

TEST_CASE("unary op gradients match finite differences [tape]") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor(rng, {5});
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.sigmoid(leaf), 1);
    });
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.tanh(leaf), 2);
    });
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.exp(t.scale(leaf, 0.5)), 3);
    });
    // keep log's argument positive: exp first
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.log(t.shift(t.exp(leaf), 0.5)), 4);
    });
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.scale(t.shift(leaf, -1.25), 3.0), 5);
    });
  }
}

TEST_CASE("matmul gradients match finite differences in all ranks [tape]") {
  Rng rng(23);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {4, 2});
  const Tensor v = random_tensor(rng, {4});
  const Tensor u = random_tensor(rng, {3});

  // matrix * matrix, gradient wrt left and right
  check_gradient(a, [&](Tape& t, NodeId leaf) {
    return project(t, t.matmul(leaf, t.constant(b)), 6);
  });
  check_gradient(b, [&](Tape& t, NodeId leaf) {
    return project(t, t.matmul(t.constant(a), leaf), 7);
  });
  // vector * matrix and matrix * vector (rank-1 promotion)
  check_gradient(u, [&](Tape& t, NodeId leaf) {
    return project(t, t.matmul(leaf, t.constant(a)), 8);
  });
  check_gradient(v, [&](Tape& t, NodeId leaf) {
    return project(t, t.matmul(t.constant(a), leaf), 9);
  });
  // vector * vector -> scalar
  check_gradient(v, [&](Tape& t, NodeId leaf) {
    return t.matmul(leaf, t.constant(v));
  });
}

TEST_CASE("matmul rank-1 promotion produces squeezed shapes [tape]") {
  Tape tape;
  const NodeId m = tape.constant(Tensor::zeros({3, 4}));
  const NodeId u = tape.constant(Tensor::zeros({3}));
  const NodeId v = tape.constant(Tensor::zeros({4}));
  CHECK(tape.value(tape.matmul(u, m)).shape == std::vector<std::size_t>{4});
  CHECK(tape.value(tape.matmul(m, v)).shape == std::vector<std::size_t>{3});
  CHECK(tape.value(tape.matmul(v, v)).is_scalar());
}

TEST_CASE("concat routes gradients to both halves [tape]") {
  Rng rng(24);
  const Tensor x = random_tensor(rng, {3});
  const Tensor y = random_tensor(rng, {2});
  check_gradient(x, [&](Tape& t, NodeId leaf) {
    return project(t, t.concat(leaf, t.constant(y)), 10);
  });
  check_gradient(y, [&](Tape& t, NodeId leaf) {
    return project(t, t.concat(t.constant(x), leaf), 11);
  });
}

TEST_CASE("reductions and reshape propagate gradients [tape]") {
  Rng rng(25);
  const Tensor x = random_tensor(rng, {6});
  check_gradient(x, [&](Tape& t, NodeId leaf) { return t.sum(leaf); });
  check_gradient(x, [&](Tape& t, NodeId leaf) { return t.mean(leaf); });
  check_gradient(x, [&](Tape& t, NodeId leaf) {
    return project(t, t.reshape(leaf, {2, 3}), 12);
  });
}

TEST_CASE("softmax and log_softmax gradients match finite differences [tape]") {
  Rng rng(26);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor(rng, {4}, 2.0);
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.softmax(leaf), 13);
    });
    check_gradient(x, [&](Tape& t, NodeId leaf) {
      return project(t, t.log_softmax(leaf), 14);
    });
  }
}

TEST_CASE("clamp gradients: active branch passes, clamped side blocks [tape]") {
  Rng rng(27);
  // keep inputs away from the kink so finite differences are valid
  Tensor x = random_tensor(rng, {6});
  for (double& v : x.data) {
    if (std::abs(v - 0.5) < 0.05) v += 0.2;
    if (std::abs(v + 0.5) < 0.05) v -= 0.2;
  }
  check_gradient(x, [&](Tape& t, NodeId leaf) {
    return project(t, t.min_const(leaf, 0.5), 15);
  });
  check_gradient(x, [&](Tape& t, NodeId leaf) {
    return project(t, t.max_const(leaf, -0.5), 16);
  });

  // boundary convention: at x == c the gradient passes through (subgradient
  // of the identity branch)
  Tape tape;
  const NodeId leaf = tape.leaf(Tensor::from_vector({0.5}));
  tape.backward(tape.sum(tape.min_const(leaf, 0.5)));
  CHECK(tape.grad(leaf).data[0] == 1.0);
  Tape tape2;
  const NodeId leaf2 = tape2.leaf(Tensor::from_vector({0.5}));
  tape2.backward(tape2.sum(tape2.max_const(leaf2, 0.5)));
  CHECK(tape2.grad(leaf2).data[0] == 1.0);
}

TEST_CASE("embedding accumulates gradients over repeated lookups [tape]") {
  Rng rng(28);
  const Tensor table = random_tensor(rng, {5, 3});
  check_gradient(table, [&](Tape& t, NodeId leaf) {
    // rows 2 and 2 again: scatter-add must accumulate
    const NodeId row_a = t.embedding(leaf, 2);
    const NodeId row_b = t.embedding(leaf, 2);
    const NodeId row_c = t.embedding(leaf, 4);
    return project(t, t.add(t.add(row_a, row_b), row_c), 17);
  });

  Tape tape;
  const NodeId table_node = tape.leaf(table);
  CHECK_THROWS_AS((void)tape.embedding(table_node, 5), std::invalid_argument);
}

TEST_CASE("gradients accumulate across reuse of a node [tape]") {
  Rng rng(29);
  const Tensor x = random_tensor(rng, {3});
  check_gradient(x, [&](Tape& t, NodeId leaf) {
    const NodeId y = t.sigmoid(leaf);
    return project(t, t.mul(y, y), 18);  // same node used twice
  });
}
