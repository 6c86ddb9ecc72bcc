#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ltr/rng.hpp"

namespace ltr::exact {

using Trace = std::vector<int>;

struct TinyModelConfig {
  int V = 3;
  int L = 2;
  // Latent dimension, 1 or 2.
  int m = 1;
  // Length of the fixed question prefix.
  int Lq = 2;
  int hidden = 8;
  double weight_scale = 1.5;
  // Zero the latent input weights.
  bool z_independent = false;
  // Score the question tokens too, so the marginal is log p(x_q). Otherwise
  // only the trace is scored and the marginal is the grid mass.
  bool include_question = true;

  void validate() const;
};

// Random affine + tanh network producing next-token logits from
// (z, position, previous token, question summary).
class TinyModel {
 public:
  static TinyModel random(const TinyModelConfig& cfg, Rng rng);

  const TinyModelConfig& config() const { return cfg_; }
  const Trace& question() const { return question_; }

  // Logits over V for position `pos` of the joined sequence given the token
  // before it (-1 at the start).
  std::vector<double> logits(const double* z, int pos, int prev) const;
  // log p(trace | z, question), trace tokens only.
  double trace_log_prob(const Trace& trace, const double* z) const;
  // log p(question | z); 0 unless include_question.
  double question_log_prob(const double* z) const;
  // trace_log_prob + question_log_prob
  double log_likelihood(const Trace& trace, const double* z) const;

 private:
  TinyModelConfig cfg_;
  Trace question_;
  std::vector<double> w_z, w_pos, w_prev, w_q, b1, w_out, b_out;
};

// Tensor-product trapezoid grid on [-4, 4]^m; weights are trapezoid weights
// times the standard normal density, so they are an unnormalized discrete
// prior.
struct QuadratureGrid {
  int m = 1;
  int G = 41;
  double lo = -4.0, hi = 4.0;
  std::vector<double> nodes;    // n x m
  std::vector<double> weights;  // n

  static QuadratureGrid make(int m, int G = 41);
  std::size_t size() const { return weights.size(); }
  const double* node(std::size_t i) const { return nodes.data() + i * std::size_t(m); }
  double total_weight() const;
};

// Standard normal mass of [lo, hi]^m.
double gaussian_box_mass(int m, double lo, double hi);

// All V^L sequences in lexicographic order.
std::vector<Trace> enumerate_traces(int V, int L);

// log p(x_q, trace_t | node_i), precomputed for every (t, i).
struct LikelihoodTable {
  std::size_t n_traces = 0, n_nodes = 0;
  std::vector<double> ll;  // n_traces x n_nodes
  std::vector<double> log_prior;

  static LikelihoodTable build(const TinyModel& model, const QuadratureGrid& grid,
                               const std::vector<Trace>& traces);
  double at(std::size_t t, std::size_t i) const { return ll[t * n_nodes + i]; }
};

struct FactoredPosterior {
  std::vector<double> q1;  // over traces
  std::vector<double> q2;  // over grid nodes
};

std::vector<double> exact_q1_update(const std::vector<double>& q2, const LikelihoodTable& tab);
std::vector<double> exact_q2_update(const std::vector<double>& q1, const LikelihoodTable& tab);
// E[log p] - KL(q2 || discretized prior) + H[q1]
double joint_elbo(const FactoredPosterior& q, const LikelihoodTable& tab);
double log_marginal(const LikelihoodTable& tab);
// KL(q1 q2 || joint posterior on traces x nodes)
double kl_to_joint_posterior(const FactoredPosterior& q, const LikelihoodTable& tab);
double entropy(const std::vector<double>& p);

struct AscentStep {
  // 0 = initial, 1 = after q1 update, 2 = after q2 update
  int half = 0;
  double elbo = 0;
};

struct AscentResult {
  FactoredPosterior q;
  std::vector<AscentStep> trajectory;
};

// Uniform q1 and normalized prior q2.
FactoredPosterior default_init(const LikelihoodTable& tab);
FactoredPosterior random_init(const LikelihoodTable& tab, Rng& rng);

AscentResult coordinate_ascent(const LikelihoodTable& tab, int iters, FactoredPosterior init);

struct DeltaStep {
  std::size_t trace = 0;
  std::size_t node = 0;
  // log p(trace | node) + log w(node): the ELBO at the point-mass pair
  double elbo = 0;
  // log p(trace | node the trace was generated under)
  double trace_log_prob = 0;
  double best_trace_log_prob = 0;
};

// q1 collapsed to one trace drawn under the current node (argmax when
// `greedy`), q2 collapsed to the grid argmax of likelihood x prior.
std::vector<DeltaStep> delta_ablation(const TinyModel& model, const QuadratureGrid& grid,
                                      const std::vector<Trace>& traces,
                                      const LikelihoodTable& tab, int iters, Rng rng,
                                      bool greedy);

struct TheoryReport {
  std::uint64_t seed = 0;
  int n_models = 0;
  int iters = 0;
  double prop1_q1_max_err = 0;
  double prop1_q2_max_err = 0;
  double prop1_max_err = 0;
  double prop2_min_increment = 0;
  double elbo_marginal_gap_max = 0;
  double identity_residual_max = 0;
  double convergence_max_change = 0;
  double quadrature_drift = 0;
  int delta_ablation_wins = 0;
  bool delta_keep_best_monotone = true;
  double seconds = 0;

  bool prop1_ok() const;
  bool prop2_ok() const;
  bool ok() const;
  // Stable JSON (sorted keys, no wall time).
  std::string to_json() const;
};

inline constexpr double kProp1Q1Tol = 1e-12;
inline constexpr double kProp1Q2Tol = 1e-10;
inline constexpr double kProp2StepTol = 1e-9;
inline constexpr double kBoundTol = 1e-8;
inline constexpr double kIdentityTol = 1e-8;
inline constexpr double kQuadratureTol = 1e-4;

// The full theory check over `n_models` seeded random tiny models.
TheoryReport verify_theory(std::uint64_t seed, int n_models, int iters,
                           const TinyModelConfig& base = {}, int G = 41);

}  // namespace ltr::exact
