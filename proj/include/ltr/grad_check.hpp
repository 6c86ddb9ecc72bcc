#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ltr/autodiff.hpp"
#include "ltr/rng.hpp"

namespace ltr {

// Largest discrepancy between reverse-mode and central-difference gradients.
// Per element: |analytic - numeric| / max(|analytic|, |numeric|, kGradScaleFloor).
struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t n_checked = 0;

  bool ok(double tol) const { return max_rel_err <= tol; }
  void merge(const GradCheckReport& other);
};

inline constexpr double kGradScaleFloor = 1e-3;

double grad_rel_err(double analytic, double numeric);

// f builds a scalar from leaf variables bound to `inputs` (in order).
using ScalarFn = std::function<Var(Graph<double>&, std::span<const Var>)>;

GradCheckReport grad_check(const std::string& name, const ScalarFn& f,
                           const std::vector<Tensor<double>>& inputs,
                           const std::vector<std::string>& input_names,
                           double h = 1e-5);

// Same, for parameters the function binds itself via Graph::param. At most
// `max_per_param` elements of each parameter are probed (chosen by `rng`);
// 0 probes all of them.
using ParamFn = std::function<Var(Graph<double>&)>;

GradCheckReport grad_check_params(const std::string& name, const ParamFn& f,
                                  std::span<Parameter<double>* const> params,
                                  std::size_t max_per_param, Rng rng,
                                  double h = 1e-5);

}  // namespace ltr
