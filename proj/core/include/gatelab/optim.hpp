// SPDX-License-Identifier: Apache-2.0
//
// First-order optimizers over flat parameter buffers. Training code gathers
// its tensors into a fixed-order flat view once and reuses it every step, so
// optimizer state lines up with parameters by index.
#pragma once

#include <cstddef>
#include <vector>

#include "gatelab/tensor.hpp"

namespace gatelab {

class Adam {
 public:
  Adam(std::size_t count, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  // In-place descent step on `params` given `grads` (both of length count()).
  void step(double* params, const double* grads);

  std::size_t count() const { return m_.size(); }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

// A fixed-order view over the tensors being optimized. Gather copies tensor
// contents into one flat buffer; scatter writes the buffer back.
class FlatParams {
 public:
  void add(Tensor* t) { tensors_.push_back(t); }
  std::size_t count() const;
  void gather(std::vector<double>& out) const;
  void scatter(const std::vector<double>& in) const;

  const std::vector<Tensor*>& tensors() const { return tensors_; }

 private:
  std::vector<Tensor*> tensors_;
};

}  // namespace gatelab
