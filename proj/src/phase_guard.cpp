#include "ltr/phase_guard.hpp"

#include <atomic>

namespace ltr {

namespace {
std::atomic<std::uint64_t> g_checks{0};
std::atomic<std::uint64_t> g_violations{0};
}  // namespace

PhaseGuardStats phase_guard_stats() { return {g_checks.load(), g_violations.load()}; }

void reset_phase_guard_stats() {
  g_checks = 0;
  g_violations = 0;
}

template <typename T>
ThetaGuard<T>::ThetaGuard(const ModelParams<T>& p, std::string_view op, bool enabled)
    : p_(p), op_(op), enabled_(enabled) {
  if (enabled_) hash_ = theta_hash(p_);
}

template <typename T>
void ThetaGuard<T>::check() const {
  if (!enabled_) return;
  ++g_checks;
  if (theta_hash(p_) != hash_) {
    ++g_violations;
    throw PhaseIsolationError("model parameters changed during " + op_);
  }
}

template class ThetaGuard<float>;
template class ThetaGuard<double>;

}  // namespace ltr
