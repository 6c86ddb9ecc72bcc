#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ltr/autodiff.hpp"
#include "ltr/model.hpp"
#include "ltr/rng.hpp"

namespace ltr {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian q(z0) = N(mu, diag(exp(log_var))).
template <typename T>
struct VariationalPosterior {
  Tensor<T> mu;
  Tensor<T> log_var;

  static VariationalPosterior prior(std::size_t K, std::size_t d) {
    return {Tensor<T>({K, d}), Tensor<T>({K, d})};
  }
  void clamp_log_var();
  friend bool operator==(const VariationalPosterior&, const VariationalPosterior&) = default;
};

extern template struct VariationalPosterior<float>;
extern template struct VariationalPosterior<double>;

struct ElboEstimate {
  double recon = 0;
  double kl = 0;
  double elbo = 0;
  int n_samples = 0;
};

struct FastInferConfig {
  int T_fast = 16;
  double lr = 0.3;
  int n_samples = 1;

  void validate() const;
};

// 0.5 * sum(mu^2 + exp(lv) - 1 - lv)
template <typename T>
double kl_standard_normal(const VariationalPosterior<T>& q);
template <typename T>
Var kl_standard_normal(Graph<T>& g, Var mu, Var log_var);

// z0 = mu + exp(log_var / 2) * eps
template <typename T>
Tensor<T> reparameterize(const VariationalPosterior<T>& q, const Tensor<T>& eps);
template <typename T>
Var reparameterize(Graph<T>& g, Var mu, Var log_var, Var eps);

struct KlMonteCarlo {
  double mean = 0;
  double std_error = 0;
};

// Sample mean of log q(z) - log p(z) over n draws z ~ q.
KlMonteCarlo kl_monte_carlo(const VariationalPosterior<double>& q, std::size_t n, Rng rng);

struct ElboVars {
  Var elbo, recon, kl;
};

// ELBO with the given noise draws (one [K x d] tensor per sample).
template <typename T>
ElboVars elbo(Graph<T>& g, const ModelParams<T>& p, std::span<const Var> theta,
              std::span<const TokenId> x, Var mu, Var log_var,
              std::span<const Tensor<T>> eps, std::size_t score_from);

template <typename T>
ElboEstimate elbo(const ModelParams<T>& p, std::span<const TokenId> x,
                  const VariationalPosterior<T>& q, int n_samples, Rng rng,
                  std::size_t score_from);

template <typename T>
struct FastResult {
  VariationalPosterior<T> q;
  // ELBO estimate before each Adam step, then one at q when evaluated.
  std::vector<ElboEstimate> trajectory;
};

// T_fast Adam steps on (mu, log_var) with fresh optimizer state. Model
// parameters are read-only. With eval_final the ELBO of the returned
// posterior is appended to the trajectory.
template <typename T>
FastResult<T> fast_optimize(const ModelParams<T>& p, std::span<const TokenId> x,
                            const VariationalPosterior<T>& q_init, const FastInferConfig& cfg,
                            Rng rng, std::size_t score_from, bool eval_final = true);

// Fresh noise for one ELBO evaluation.
template <typename T>
std::vector<Tensor<T>> draw_noise(std::size_t K, std::size_t d, int n_samples, Rng& rng);

}  // namespace ltr
