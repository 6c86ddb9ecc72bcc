#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ltr/model.hpp"

namespace ltr {

class PhaseIsolationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct PhaseGuardStats {
  std::uint64_t checks = 0;
  std::uint64_t violations = 0;
};

// Process-wide counters over every ThetaGuard::check().
PhaseGuardStats phase_guard_stats();
void reset_phase_guard_stats();

// Snapshot of the parameter hash taken on entry to an inference-only
// operation; check() throws PhaseIsolationError if the parameters changed.
template <typename T>
class ThetaGuard {
 public:
  ThetaGuard(const ModelParams<T>& p, std::string_view op, bool enabled = true);
  void check() const;
  std::uint64_t hash() const { return hash_; }

 private:
  const ModelParams<T>& p_;
  std::string op_;
  bool enabled_;
  std::uint64_t hash_ = 0;
};

extern template class ThetaGuard<float>;
extern template class ThetaGuard<double>;

}  // namespace ltr
