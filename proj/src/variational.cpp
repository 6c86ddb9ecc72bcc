#include "ltr/variational.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ltr/adam.hpp"

namespace ltr {

template <typename T>
void VariationalPosterior<T>::clamp_log_var() {
  for (T& v : log_var.mutable_data()) v = std::clamp(v, T(kLogVarMin), T(kLogVarMax));
}

template struct VariationalPosterior<float>;
template struct VariationalPosterior<double>;

void FastInferConfig::validate() const {
  if (T_fast < 0) throw std::invalid_argument("fast config: T_fast must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("fast config: lr must be positive");
  if (n_samples < 1) throw std::invalid_argument("fast config: n_samples must be >= 1");
}

template <typename T>
double kl_standard_normal(const VariationalPosterior<T>& q) {
  require_same_shape(q.mu.shape(), q.log_var.shape(), "kl_standard_normal");
  double s = 0;
  for (std::size_t i = 0; i < q.mu.numel(); ++i) {
    const double m = q.mu[i], lv = q.log_var[i];
    s += m * m + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * s;
}

template <typename T>
Var kl_standard_normal(Graph<T>& g, Var mu, Var log_var) {
  const std::size_t n = g.value(mu).numel();
  Var s = add(g, sum(g, mul(g, mu, mu)), sum(g, sub(g, exp(g, log_var), log_var)));
  return scale(g, add_scalar(g, s, -T(n)), T(0.5));
}

template <typename T>
Tensor<T> reparameterize(const VariationalPosterior<T>& q, const Tensor<T>& eps) {
  require_same_shape(q.mu.shape(), eps.shape(), "reparameterize");
  require_same_shape(q.mu.shape(), q.log_var.shape(), "reparameterize");
  Tensor<T> z(q.mu.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    z[i] = q.mu[i] + std::exp(q.log_var[i] / T(2)) * eps[i];
  }
  return z;
}

template <typename T>
Var reparameterize(Graph<T>& g, Var mu, Var log_var, Var eps) {
  return add(g, mu, mul(g, exp(g, scale(g, log_var, T(0.5))), eps));
}

KlMonteCarlo kl_monte_carlo(const VariationalPosterior<double>& q, std::size_t n, Rng rng) {
  const std::size_t k = q.mu.numel();
  double mean = 0, m2 = 0;
  for (std::size_t s = 0; s < n; ++s) {
    double lr = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double e = rng.normal();
      const double z = q.mu[i] + std::exp(0.5 * q.log_var[i]) * e;
      // log q(z) - log p(z); the 2*pi terms cancel
      lr += -0.5 * (q.log_var[i] + e * e) + 0.5 * z * z;
    }
    const double delta = lr - mean;
    mean += delta / double(s + 1);
    m2 += delta * (lr - mean);
  }
  const double var = n > 1 ? m2 / double(n - 1) : 0.0;
  return {mean, std::sqrt(var / double(n))};
}

template <typename T>
std::vector<Tensor<T>> draw_noise(std::size_t K, std::size_t d, int n_samples, Rng& rng) {
  std::vector<Tensor<T>> out;
  for (int s = 0; s < n_samples; ++s) {
    Tensor<T> e({K, d});
    rng.fill_normal(e.mutable_data());
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
ElboVars elbo(Graph<T>& g, const ModelParams<T>& p, std::span<const Var> theta,
              std::span<const TokenId> x, Var mu, Var log_var,
              std::span<const Tensor<T>> eps, std::size_t score_from) {
  if (eps.empty()) throw std::invalid_argument("elbo: need at least one noise sample");
  Var recon;
  for (const Tensor<T>& e : eps) {
    const Var z0 = reparameterize(g, mu, log_var, g.view(e));
    const Var z = encode_prior(g, p, theta, z0);
    const Var ll = decoder_log_likelihood(g, p, theta, x, z, score_from).total;
    recon = recon.valid() ? add(g, recon, ll) : ll;
  }
  if (eps.size() > 1) recon = scale(g, recon, T(1) / T(eps.size()));
  const Var kl = kl_standard_normal(g, mu, log_var);
  return {sub(g, recon, kl), recon, kl};
}

namespace {

template <typename T>
ElboEstimate read(const Graph<T>& g, const ElboVars& v, int n) {
  ElboEstimate e;
  e.recon = g.value(v.recon).item();
  e.kl = g.value(v.kl).item();
  e.elbo = e.recon - e.kl;
  e.n_samples = n;
  return e;
}

}  // namespace

template <typename T>
ElboEstimate elbo(const ModelParams<T>& p, std::span<const TokenId> x,
                  const VariationalPosterior<T>& q, int n_samples, Rng rng,
                  std::size_t score_from) {
  const auto& cfg = p.config();
  const auto eps = draw_noise<T>(cfg.K, cfg.latent_dim(), n_samples, rng);
  Graph<T> g;
  const auto th = bind_frozen(g, p);
  const auto v = elbo(g, p, th, x, g.view(q.mu), g.view(q.log_var), std::span(eps), score_from);
  return read(g, v, n_samples);
}

template <typename T>
FastResult<T> fast_optimize(const ModelParams<T>& p, std::span<const TokenId> x,
                            const VariationalPosterior<T>& q_init, const FastInferConfig& cfg,
                            Rng rng, std::size_t score_from, bool eval_final) {
  cfg.validate();
  const auto& mc = p.config();
  FastResult<T> out{q_init, {}};
  const AdamOptions opts{cfg.lr};
  AdamState<T> s_mu(q_init.mu.shape(), opts), s_lv(q_init.log_var.shape(), opts);
  for (int step = 0; step < cfg.T_fast; ++step) {
    const auto eps = draw_noise<T>(mc.K, mc.latent_dim(), cfg.n_samples, rng);
    Graph<T> g;
    const auto th = bind_frozen(g, p);
    const Var mu = g.leaf(out.q.mu, true);
    const Var lv = g.leaf(out.q.log_var, true);
    const auto v = elbo(g, p, th, x, mu, lv, std::span(eps), score_from);
    out.trajectory.push_back(read(g, v, cfg.n_samples));
    g.backward(scale(g, v.elbo, T(-1)));
    adam_step(out.q.mu, g.grad(mu), s_mu);
    adam_step(out.q.log_var, g.grad(lv), s_lv);
    out.q.clamp_log_var();
  }
  if (eval_final) {
    const auto eps = draw_noise<T>(mc.K, mc.latent_dim(), cfg.n_samples, rng);
    Graph<T> g;
    const auto th = bind_frozen(g, p);
    const auto v = elbo(g, p, th, x, g.view(out.q.mu), g.view(out.q.log_var), std::span(eps),
                        score_from);
    out.trajectory.push_back(read(g, v, cfg.n_samples));
  }
  return out;
}

#define LTR_INSTANTIATE_VI(T)                                                             \
  template double kl_standard_normal(const VariationalPosterior<T>&);                     \
  template Var kl_standard_normal(Graph<T>&, Var, Var);                                   \
  template Tensor<T> reparameterize(const VariationalPosterior<T>&, const Tensor<T>&);    \
  template Var reparameterize(Graph<T>&, Var, Var, Var);                                  \
  template std::vector<Tensor<T>> draw_noise<T>(std::size_t, std::size_t, int, Rng&);     \
  template ElboVars elbo(Graph<T>&, const ModelParams<T>&, std::span<const Var>,          \
                         std::span<const TokenId>, Var, Var, std::span<const Tensor<T>>,  \
                         std::size_t);                                                    \
  template ElboEstimate elbo(const ModelParams<T>&, std::span<const TokenId>,             \
                             const VariationalPosterior<T>&, int, Rng, std::size_t);      \
  template FastResult<T> fast_optimize(const ModelParams<T>&, std::span<const TokenId>,   \
                                       const VariationalPosterior<T>&,                    \
                                       const FastInferConfig&, Rng, std::size_t, bool);

LTR_INSTANTIATE_VI(float)
LTR_INSTANTIATE_VI(double)

#undef LTR_INSTANTIATE_VI

}  // namespace ltr
