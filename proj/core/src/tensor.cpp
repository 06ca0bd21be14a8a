// SPDX-License-Identifier: Apache-2.0

#include "gatelab/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace gatelab {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_size(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(data.size()) + " elements");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t;
  t.data.assign(shape_size(shape), value);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.shape = {};
  t.data = {value};
  return t;
}

Tensor Tensor::from_vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

double& Tensor::at(std::size_t row, std::size_t col) {
  return data[row * shape[1] + col];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return data[row * shape[1] + col];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

namespace kernels {

void matmul(const double* a, const double* b, double* out, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      out[i * n + j] = acc;
    }
  }
}

void add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void sigmoid(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(x[i]);
}

void tanh(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

void log(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(x[i]);
}

void exp(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void min_const(const double* x, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] < c ? x[i] : c;
}

void max_const(const double* x, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > c ? x[i] : c;
}

double sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void softmax(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

void log_softmax(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
  const double log_z = std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - mx - log_z;
}

}  // namespace kernels

}  // namespace gatelab
