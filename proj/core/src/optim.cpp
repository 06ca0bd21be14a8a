// SPDX-License-Identifier: Apache-2.0

#include "gatelab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gatelab {

Adam::Adam(std::size_t count, double lr, double beta1, double beta2,
           double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(count, 0.0),
      v_(count, 0.0) {}

void Adam::step(double* params, const double* grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

std::size_t FlatParams::count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors_) n += t->size();
  return n;
}

void FlatParams::gather(std::vector<double>& out) const {
  out.clear();
  out.reserve(count());
  for (const Tensor* t : tensors_) {
    out.insert(out.end(), t->data.begin(), t->data.end());
  }
}

void FlatParams::scatter(const std::vector<double>& in) const {
  if (in.size() != count()) {
    throw std::invalid_argument("FlatParams::scatter: size mismatch");
  }
  std::size_t pos = 0;
  for (Tensor* t : tensors_) {
    for (double& v : t->data) v = in[pos++];
  }
}

}  // namespace gatelab
