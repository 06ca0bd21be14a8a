// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of 64-bit floats, plus the flat numeric kernels
// shared by the differentiation tape and the plain inference paths. Every
// forward computation in the library funnels through these kernels so that
// a value computed during training is bit-identical to the same value
// computed without a tape.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace gatelab {

struct Tensor {
  std::vector<std::size_t> shape;  // empty shape means scalar
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // Element access for rank-2 tensors.
  double& at(std::size_t row, std::size_t col);
  double at(std::size_t row, std::size_t col) const;

  bool all_finite() const;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Flat kernels. All loops run in a fixed order (row index outer, column index
// inner, accumulation in ascending index order) so results are reproducible
// bit for bit wherever they are reused.
// ---------------------------------------------------------------------------
namespace kernels {

// out[m x n] = a[m x k] * b[k x n]; out must not alias a or b.
void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n);

void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);

// Numerically stable logistic sigmoid, evaluated elementwise.
void sigmoid(const double* x, double* out, std::size_t n);
double sigmoid(double x);

void tanh(const double* x, double* out, std::size_t n);
void log(const double* x, double* out, std::size_t n);
void exp(const double* x, double* out, std::size_t n);
void min_const(const double* x, double c, double* out, std::size_t n);
void max_const(const double* x, double c, double* out, std::size_t n);

double sum(const double* x, std::size_t n);

// Max-shifted softmax / log-softmax over a single vector.
void softmax(const double* x, double* out, std::size_t n);
void log_softmax(const double* x, double* out, std::size_t n);

}  // namespace kernels

}  // namespace gatelab
