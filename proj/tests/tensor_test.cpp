// SPDX-License-Identifier: Apache-2.0
#include "gatelab/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "test_util.hpp"

using namespace gatelab;

TEST_CASE("tensor constructors validate shape against data [tensor]") {
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2}), std::invalid_argument);

  const Tensor s = Tensor::scalar(4.5);
  CHECK(s.is_scalar());
  CHECK(s.size() == 1);
  CHECK(s.data[0] == 4.5);

  const Tensor z = Tensor::zeros({3});
  CHECK(z.size() == 3);
  CHECK(z.data == std::vector<double>{0, 0, 0});

  const Tensor f = Tensor::full({2}, 7.0);
  CHECK(f.data == std::vector<double>{7, 7});

  CHECK(shape_str({2, 3}) == "(2, 3)");
  CHECK(shape_str({}) == "()");
}

TEST_CASE("all_finite flags nan and inf [tensor]") {
  Tensor t = Tensor::zeros({2});
  CHECK(t.all_finite());
  t.data[1] = std::nan("");
  CHECK(!t.all_finite());
  t.data[1] = HUGE_VAL;
  CHECK(!t.all_finite());
}

TEST_CASE("matmul matches a hand-computed product [tensor]") {
  // (2x3) * (3x2)
  const double a[] = {1, 2, 3, 4, 5, 6};
  const double b[] = {7, 8, 9, 10, 11, 12};
  double out[4];
  kernels::matmul(a, b, out, 2, 3, 2);
  CHECK(out[0] == doctest::Approx(58).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(64).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(139).epsilon(1e-12));
  CHECK(out[3] == doctest::Approx(154).epsilon(1e-12));
}

TEST_CASE("elementwise kernels compute what they say [tensor]") {
  const double a[] = {1.0, -2.0, 3.0};
  const double b[] = {0.5, 4.0, -1.0};
  double out[3];
  kernels::add(a, b, out, 3);
  CHECK(out[1] == 2.0);
  kernels::sub(a, b, out, 3);
  CHECK(out[2] == 4.0);
  kernels::mul(a, b, out, 3);
  CHECK(out[0] == 0.5);
  kernels::min_const(a, 0.5, out, 3);
  CHECK(out[0] == 0.5);
  CHECK(out[1] == -2.0);
  kernels::max_const(a, 0.0, out, 3);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 3.0);
  CHECK(kernels::sum(a, 3) == 2.0);
}

TEST_CASE("sigmoid is stable at extreme arguments [tensor]") {
  CHECK(kernels::sigmoid(0.0) == 0.5);
  CHECK(kernels::sigmoid(800.0) == 1.0);
  CHECK(kernels::sigmoid(-800.0) == 0.0);
  CHECK(std::isfinite(kernels::sigmoid(-36.0)));
  CHECK(kernels::sigmoid(-36.0) > 0.0);
  // symmetric: sigmoid(-x) = 1 - sigmoid(x)
  for (double x : {0.1, 1.0, 3.5, 10.0}) {
    CHECK(kernels::sigmoid(-x) ==
          doctest::Approx(1.0 - kernels::sigmoid(x)).epsilon(1e-12));
  }
}

TEST_CASE("softmax normalizes and log_softmax matches its log [tensor]") {
  const double x[] = {1.0, 2.0, 3.0};
  double sm[3], lsm[3];
  kernels::softmax(x, sm, 3);
  kernels::log_softmax(x, lsm, 3);
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    total += sm[i];
    CHECK(std::log(sm[i]) == doctest::Approx(lsm[i]).epsilon(1e-12));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  // max-shift keeps huge logits finite
  const double big[] = {1000.0, 1001.0};
  kernels::softmax(big, sm, 2);
  CHECK(std::isfinite(sm[0]));
  CHECK(sm[0] + sm[1] == doctest::Approx(1.0).epsilon(1e-12));
  kernels::log_softmax(big, lsm, 2);
  CHECK(std::isfinite(lsm[0]));
}
