#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ltr/grad_check.hpp"

namespace ltr {

inline constexpr double kOpGradTol = 1e-5;
inline constexpr double kElboGradTol = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct OpCheck {
  std::string name;
  double tol = kOpGradTol;
  std::function<GradCheckReport(Rng)> run;
};

// Every differentiable op on random inputs (non-scalar outputs contracted
// with a fixed random tensor), the model building blocks, and the ELBO with
// respect to (mu, log_var) at fixed noise.
const std::vector<OpCheck>& op_check_registry();

struct OpCheckResult {
  GradCheckReport report;
  double tol = 0;
  bool ok() const { return report.ok(tol); }
};

// `which` is "all" or one registered name; unknown names throw
// std::invalid_argument. A `tol` > 0 overrides the op tolerances (not the
// ELBO one).
std::vector<OpCheckResult> run_op_checks(std::string_view which, std::uint64_t seed,
                                         double tol = 0);

}  // namespace ltr
