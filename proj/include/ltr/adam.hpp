#pragma once

#include <cstdint>

#include "ltr/autodiff.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-tensor Adam moments. `t` counts completed steps.
template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t t = 0;
  AdamOptions opts;

  AdamState() = default;
  AdamState(const Shape& shape, AdamOptions o) : m(shape), v(shape), opts(o) {}
};

// Bias-corrected Adam update of `value` in place using `grad`. The gradient
// is not modified. With lr == 0 the value is left bit-identical.
template <typename T>
void adam_step(Tensor<T>& value, const Tensor<T>& grad, AdamState<T>& state);

template <typename T>
void adam_step(Parameter<T>& p, AdamState<T>& state) {
  adam_step(p.value, p.grad, state);
}

extern template void adam_step<float>(Tensor<float>&, const Tensor<float>&,
                                      AdamState<float>&);
extern template void adam_step<double>(Tensor<double>&, const Tensor<double>&,
                                       AdamState<double>&);

}  // namespace ltr
