#include "ltr/adam.hpp"

#include <cmath>

namespace ltr {

template <typename T>
void adam_step(Tensor<T>& value, const Tensor<T>& grad, AdamState<T>& s) {
  require_same_shape(value.shape(), grad.shape(), "adam_step(grad)");
  require_same_shape(value.shape(), s.m.shape(), "adam_step(state)");
  require_same_shape(value.shape(), s.v.shape(), "adam_step(state)");
  s.t += 1;
  const double b1 = s.opts.beta1, b2 = s.opts.beta2;
  const double c1 = 1.0 - std::pow(b1, double(s.t));
  const double c2 = 1.0 - std::pow(b2, double(s.t));
  const double step = s.opts.lr / c1;
  const double eps = s.opts.eps;
  const bool frozen = s.opts.lr == 0.0;
  auto x = value.mutable_data();
  auto g = grad.data();
  auto m = s.m.mutable_data();
  auto v = s.v.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gi = g[i];
    m[i] = T(b1 * m[i] + (1.0 - b1) * gi);
    v[i] = T(b2 * v[i] + (1.0 - b2) * gi * gi);
    if (!frozen) {
      x[i] = T(x[i] - step * m[i] / (std::sqrt(v[i] / c2) + eps));
    }
  }
}

template void adam_step<float>(Tensor<float>&, const Tensor<float>&, AdamState<float>&);
template void adam_step<double>(Tensor<double>&, const Tensor<double>&,
                                AdamState<double>&);

}  // namespace ltr
