#include "ltr/exact_verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

namespace ltr::exact {

namespace {

double logsumexp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::vector<double> softmax(const std::vector<double>& v) {
  const double lse = logsumexp(v);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] - lse);
  return out;
}

std::vector<double> normal_vec(std::size_t n, double scale, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

// ---- model ------------------------------------------------------------------

void TinyModelConfig::validate() const {
  if (V < 1 || V > 4) throw std::invalid_argument("tiny model: V must be in 1..4");
  if (L < 1 || L > 3) throw std::invalid_argument("tiny model: L must be in 1..3");
  if (m < 1 || m > 2) throw std::invalid_argument("tiny model: m must be 1 or 2");
  if (Lq < 0) throw std::invalid_argument("tiny model: Lq must be >= 0");
  if (hidden < 1) throw std::invalid_argument("tiny model: hidden must be >= 1");
}

TinyModel TinyModel::random(const TinyModelConfig& cfg, Rng rng) {
  cfg.validate();
  TinyModel t;
  t.cfg_ = cfg;
  const auto H = std::size_t(cfg.hidden), V = std::size_t(cfg.V);
  const double s = cfg.weight_scale;
  Rng r = rng.split("question");
  for (int i = 0; i < cfg.Lq; ++i) t.question_.push_back(int(r.uniform_int(0, cfg.V - 1)));
  r = rng.split("weights");
  t.w_z = normal_vec(H * std::size_t(cfg.m), s, r);
  if (cfg.z_independent) std::fill(t.w_z.begin(), t.w_z.end(), 0.0);
  t.w_pos = normal_vec(H * std::size_t(cfg.Lq + cfg.L), s, r);
  t.w_prev = normal_vec(H * (V + 1), s, r);
  t.w_q = normal_vec(H * V, s, r);
  t.b1 = normal_vec(H, s, r);
  t.w_out = normal_vec(V * H, s, r);
  t.b_out = normal_vec(V, s, r);
  return t;
}

std::vector<double> TinyModel::logits(const double* z, int pos, int prev) const {
  const auto H = std::size_t(cfg_.hidden), V = std::size_t(cfg_.V);
  std::vector<double> qfeat(V, 0.0);
  for (int tok : question_) qfeat[std::size_t(tok)] += 1.0 / double(question_.size());
  std::vector<double> h(H);
  const std::size_t prev_row = prev < 0 ? V : std::size_t(prev);
  for (std::size_t j = 0; j < H; ++j) {
    double a = b1[j] + w_pos[std::size_t(pos) * H + j] + w_prev[prev_row * H + j];
    for (int k = 0; k < cfg_.m; ++k) a += w_z[std::size_t(k) * H + j] * z[k];
    for (std::size_t v = 0; v < V; ++v) a += w_q[v * H + j] * qfeat[v];
    h[j] = std::tanh(a);
  }
  std::vector<double> out(V);
  for (std::size_t v = 0; v < V; ++v) {
    double a = b_out[v];
    for (std::size_t j = 0; j < H; ++j) a += w_out[v * H + j] * h[j];
    out[v] = a;
  }
  return out;
}

double TinyModel::question_log_prob(const double* z) const {
  if (!cfg_.include_question) return 0.0;
  double s = 0;
  int prev = -1;
  for (int i = 0; i < cfg_.Lq; ++i) {
    const auto lg = logits(z, i, prev);
    s += lg[std::size_t(question_[std::size_t(i)])] - logsumexp(lg);
    prev = question_[std::size_t(i)];
  }
  return s;
}

double TinyModel::trace_log_prob(const Trace& trace, const double* z) const {
  if (int(trace.size()) != cfg_.L) throw std::invalid_argument("tiny model: trace length");
  double s = 0;
  int prev = question_.empty() ? -1 : question_.back();
  for (int i = 0; i < cfg_.L; ++i) {
    const auto lg = logits(z, cfg_.Lq + i, prev);
    s += lg[std::size_t(trace[std::size_t(i)])] - logsumexp(lg);
    prev = trace[std::size_t(i)];
  }
  return s;
}

double TinyModel::log_likelihood(const Trace& trace, const double* z) const {
  return question_log_prob(z) + trace_log_prob(trace, z);
}

// ---- grid -------------------------------------------------------------------

QuadratureGrid QuadratureGrid::make(int m, int G) {
  if (m < 1 || m > 2) throw std::invalid_argument("grid: m must be 1 or 2");
  if (G < 2) throw std::invalid_argument("grid: G must be >= 2");
  QuadratureGrid g;
  g.m = m;
  g.G = G;
  const double h = (g.hi - g.lo) / double(G - 1);
  const auto n = static_cast<std::size_t>(G);
  std::vector<double> x(n), w(n);
  for (int i = 0; i < G; ++i) {
    // symmetric construction so nodes mirror exactly about 0
    x[std::size_t(i)] = h * (double(i) - 0.5 * double(G - 1));
    const double trap = (i == 0 || i == G - 1) ? 0.5 * h : h;
    const double xi = x[std::size_t(i)];
    w[std::size_t(i)] = trap * std::exp(-0.5 * xi * xi) / std::sqrt(2 * std::numbers::pi);
  }
  if (m == 1) {
    g.nodes = x;
    g.weights = w;
  } else {
    for (int i = 0; i < G; ++i) {
      for (int j = 0; j < G; ++j) {
        g.nodes.push_back(x[std::size_t(i)]);
        g.nodes.push_back(x[std::size_t(j)]);
        g.weights.push_back(w[std::size_t(i)] * w[std::size_t(j)]);
      }
    }
  }
  return g;
}

double QuadratureGrid::total_weight() const {
  double s = 0;
  for (double w : weights) s += w;
  return s;
}

double gaussian_box_mass(int m, double lo, double hi) {
  const double one = 0.5 * (std::erf(hi / std::sqrt(2.0)) - std::erf(lo / std::sqrt(2.0)));
  return std::pow(one, m);
}

std::vector<Trace> enumerate_traces(int V, int L) {
  if (V < 1 || L < 0) throw std::invalid_argument("enumerate_traces: bad V or L");
  double count = std::pow(double(V), double(L));
  if (count > 4096) {
    throw std::invalid_argument("enumerate_traces: V^L = " + std::to_string(std::size_t(count)) +
                                " exceeds the budget of 4096");
  }
  std::vector<Trace> out;
  Trace cur(std::size_t(L), 0);
  for (std::size_t n = 0; n < std::size_t(count); ++n) {
    out.push_back(cur);
    for (int k = L - 1; k >= 0; --k) {
      if (++cur[std::size_t(k)] < V) break;
      cur[std::size_t(k)] = 0;
    }
  }
  return out;
}

LikelihoodTable LikelihoodTable::build(const TinyModel& model, const QuadratureGrid& grid,
                                       const std::vector<Trace>& traces) {
  LikelihoodTable t;
  t.n_traces = traces.size();
  t.n_nodes = grid.size();
  t.ll.resize(t.n_traces * t.n_nodes);
  for (std::size_t i = 0; i < t.n_nodes; ++i) {
    const double qlp = model.question_log_prob(grid.node(i));
    for (std::size_t k = 0; k < t.n_traces; ++k) {
      t.ll[k * t.n_nodes + i] = qlp + model.trace_log_prob(traces[k], grid.node(i));
    }
  }
  for (double w : grid.weights) t.log_prior.push_back(std::log(w));
  return t;
}

// ---- updates ----------------------------------------------------------------

std::vector<double> exact_q1_update(const std::vector<double>& q2, const LikelihoodTable& tab) {
  std::vector<double> s(tab.n_traces, 0.0);
  for (std::size_t k = 0; k < tab.n_traces; ++k) {
    double acc = 0;
    for (std::size_t i = 0; i < tab.n_nodes; ++i) {
      if (q2[i] > 0) acc += q2[i] * tab.at(k, i);
    }
    s[k] = acc;
  }
  return softmax(s);
}

std::vector<double> exact_q2_update(const std::vector<double>& q1, const LikelihoodTable& tab) {
  std::vector<double> r(tab.n_nodes, 0.0);
  for (std::size_t i = 0; i < tab.n_nodes; ++i) {
    double acc = tab.log_prior[i];
    for (std::size_t k = 0; k < tab.n_traces; ++k) {
      if (q1[k] > 0) acc += q1[k] * tab.at(k, i);
    }
    r[i] = acc;
  }
  return softmax(r);
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

double joint_elbo(const FactoredPosterior& q, const LikelihoodTable& tab) {
  double e = 0;
  for (std::size_t k = 0; k < tab.n_traces; ++k) {
    if (q.q1[k] == 0) continue;
    double inner = 0;
    for (std::size_t i = 0; i < tab.n_nodes; ++i) {
      if (q.q2[i] > 0) inner += q.q2[i] * tab.at(k, i);
    }
    e += q.q1[k] * inner;
  }
  double kl = 0;
  for (std::size_t i = 0; i < tab.n_nodes; ++i) {
    if (q.q2[i] > 0) kl += q.q2[i] * (std::log(q.q2[i]) - tab.log_prior[i]);
  }
  return e - kl + entropy(q.q1);
}

double log_marginal(const LikelihoodTable& tab) {
  std::vector<double> terms;
  terms.reserve(tab.ll.size());
  for (std::size_t k = 0; k < tab.n_traces; ++k) {
    for (std::size_t i = 0; i < tab.n_nodes; ++i) terms.push_back(tab.at(k, i) + tab.log_prior[i]);
  }
  return logsumexp(terms);
}

double kl_to_joint_posterior(const FactoredPosterior& q, const LikelihoodTable& tab) {
  const double lm = log_marginal(tab);
  double kl = 0;
  for (std::size_t k = 0; k < tab.n_traces; ++k) {
    if (q.q1[k] == 0) continue;
    for (std::size_t i = 0; i < tab.n_nodes; ++i) {
      if (q.q2[i] == 0) continue;
      const double log_post = tab.at(k, i) + tab.log_prior[i] - lm;
      kl += q.q1[k] * q.q2[i] * (std::log(q.q1[k]) + std::log(q.q2[i]) - log_post);
    }
  }
  return kl;
}

FactoredPosterior default_init(const LikelihoodTable& tab) {
  FactoredPosterior q;
  q.q1.assign(tab.n_traces, 1.0 / double(tab.n_traces));
  q.q2 = softmax(tab.log_prior);
  return q;
}

FactoredPosterior random_init(const LikelihoodTable& tab, Rng& rng) {
  FactoredPosterior q;
  q.q1 = softmax(normal_vec(tab.n_traces, 2.0, rng));
  q.q2 = softmax(normal_vec(tab.n_nodes, 2.0, rng));
  return q;
}

AscentResult coordinate_ascent(const LikelihoodTable& tab, int iters, FactoredPosterior init) {
  if (iters < 1) throw std::invalid_argument("coordinate_ascent: iters must be >= 1");
  AscentResult r{std::move(init), {}};
  r.trajectory.push_back({0, joint_elbo(r.q, tab)});
  for (int it = 0; it < iters; ++it) {
    r.q.q1 = exact_q1_update(r.q.q2, tab);
    r.trajectory.push_back({1, joint_elbo(r.q, tab)});
    r.q.q2 = exact_q2_update(r.q.q1, tab);
    r.trajectory.push_back({2, joint_elbo(r.q, tab)});
  }
  return r;
}

std::vector<DeltaStep> delta_ablation(const TinyModel& model, const QuadratureGrid& grid,
                                      const std::vector<Trace>& traces,
                                      const LikelihoodTable& tab, int iters, Rng rng,
                                      bool greedy) {
  if (iters < 1) throw std::invalid_argument("delta_ablation: iters must be >= 1");
  const int V = model.config().V;
  // start at the prior mode
  std::size_t node = std::size_t(std::max_element(tab.log_prior.begin(), tab.log_prior.end()) -
                                 tab.log_prior.begin());
  std::vector<DeltaStep> out;
  double best = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    // generate a trace token by token under the current node
    Trace tr;
    int prev = model.question().empty() ? -1 : model.question().back();
    for (int pos = 0; pos < model.config().L; ++pos) {
      const auto p = softmax(model.logits(grid.node(node), model.config().Lq + pos, prev));
      int pick = 0;
      if (greedy) {
        for (int v = 1; v < V; ++v) {
          if (p[std::size_t(v)] > p[std::size_t(pick)]) pick = v;
        }
      } else {
        double u = rng.uniform();
        pick = V - 1;
        for (int v = 0; v < V; ++v) {
          if (u < p[std::size_t(v)]) {
            pick = v;
            break;
          }
          u -= p[std::size_t(v)];
        }
      }
      tr.push_back(pick);
      prev = pick;
    }
    const auto k = std::size_t(std::find(traces.begin(), traces.end(), tr) - traces.begin());
    DeltaStep s;
    s.trace = k;
    s.trace_log_prob = model.trace_log_prob(tr, grid.node(node));
    best = std::max(best, s.trace_log_prob);
    s.best_trace_log_prob = best;
    // reflect: the node maximizing likelihood x prior for that trace
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tab.n_nodes; ++i) {
      const double v = tab.at(k, i) + tab.log_prior[i];
      if (v > top) {
        top = v;
        node = i;
      }
    }
    s.node = node;
    s.elbo = top;
    out.push_back(s);
  }
  return out;
}

// ---- report -----------------------------------------------------------------

bool TheoryReport::prop1_ok() const {
  return prop1_q1_max_err <= kProp1Q1Tol && prop1_q2_max_err <= kProp1Q2Tol;
}

bool TheoryReport::prop2_ok() const {
  return prop2_min_increment >= -kProp2StepTol && elbo_marginal_gap_max <= kBoundTol &&
         identity_residual_max <= kIdentityTol;
}

bool TheoryReport::ok() const {
  return prop1_ok() && prop2_ok() && quadrature_drift <= kQuadratureTol &&
         delta_keep_best_monotone;
}

std::string TheoryReport::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["n_models"] = n_models;
  j["iters"] = iters;
  j["prop1_q1_max_err"] = prop1_q1_max_err;
  j["prop1_q2_max_err"] = prop1_q2_max_err;
  j["prop1_max_err"] = prop1_max_err;
  j["prop2_min_increment"] = prop2_min_increment;
  j["elbo_marginal_gap_max"] = elbo_marginal_gap_max;
  j["identity_residual_max"] = identity_residual_max;
  j["convergence_max_change"] = convergence_max_change;
  j["quadrature_drift"] = quadrature_drift;
  j["delta_ablation_wins"] = delta_ablation_wins;
  j["delta_keep_best_monotone"] = delta_keep_best_monotone;
  j["prop1_ok"] = prop1_ok();
  j["prop2_ok"] = prop2_ok();
  j["ok"] = ok();
  return j.dump(2) + "\n";
}

TheoryReport verify_theory(std::uint64_t seed, int n_models, int iters,
                           const TinyModelConfig& base, int G) {
  const auto t0 = std::chrono::steady_clock::now();
  TheoryReport rep;
  rep.seed = seed;
  rep.n_models = n_models;
  rep.iters = iters;
  rep.prop2_min_increment = std::numeric_limits<double>::infinity();
  rep.elbo_marginal_gap_max = -std::numeric_limits<double>::infinity();
  const QuadratureGrid grid = QuadratureGrid::make(base.m, G);
  rep.quadrature_drift = std::abs(grid.total_weight() - gaussian_box_mass(base.m, grid.lo, grid.hi));
  const auto traces = enumerate_traces(base.V, base.L);
  const Rng root = Rng(seed).split("tiny-models");

  for (int k = 0; k < n_models; ++k) {
    const Rng mr = root.split(std::uint64_t(k));
    const TinyModel model = TinyModel::random(base, mr.split("model"));
    const auto tab = LikelihoodTable::build(model, grid, traces);
    const double lm = log_marginal(tab);

    // delta q2 at every node: q1* is the trace conditional
    for (std::size_t i = 0; i < tab.n_nodes; ++i) {
      std::vector<double> q2(tab.n_nodes, 0.0);
      q2[i] = 1.0;
      const auto q1 = exact_q1_update(q2, tab);
      for (std::size_t t = 0; t < traces.size(); ++t) {
        const double direct = std::exp(model.trace_log_prob(traces[t], grid.node(i)));
        rep.prop1_q1_max_err = std::max(rep.prop1_q1_max_err, std::abs(q1[t] - direct));
      }
    }
    // delta q1 at every trace: q2* is likelihood x prior, evaluated pointwise
    for (std::size_t t = 0; t < traces.size(); ++t) {
      std::vector<double> q1(traces.size(), 0.0);
      q1[t] = 1.0;
      const auto q2 = exact_q2_update(q1, tab);
      std::vector<double> direct(tab.n_nodes);
      double z = 0;
      for (std::size_t i = 0; i < tab.n_nodes; ++i) {
        direct[i] = std::exp(model.log_likelihood(traces[t], grid.node(i))) * grid.weights[i];
        z += direct[i];
      }
      for (std::size_t i = 0; i < tab.n_nodes; ++i) {
        rep.prop1_q2_max_err = std::max(rep.prop1_q2_max_err, std::abs(q2[i] - direct[i] / z));
      }
    }

    // coordinate ascent from a random start
    Rng init_rng = mr.split("init");
    const auto ca = coordinate_ascent(tab, iters, random_init(tab, init_rng));
    for (std::size_t s = 1; s < ca.trajectory.size(); ++s) {
      rep.prop2_min_increment = std::min(rep.prop2_min_increment,
                                         ca.trajectory[s].elbo - ca.trajectory[s - 1].elbo);
    }
    for (const auto& s : ca.trajectory) {
      rep.elbo_marginal_gap_max = std::max(rep.elbo_marginal_gap_max, s.elbo - lm);
    }
    const auto& tr = ca.trajectory;
    rep.convergence_max_change =
        std::max(rep.convergence_max_change, std::abs(tr.back().elbo - tr[tr.size() - 3].elbo));
    // identity at the final point and at a few random points
    auto residual = [&](const FactoredPosterior& q) {
      return std::abs(joint_elbo(q, tab) - (lm - kl_to_joint_posterior(q, tab)));
    };
    rep.identity_residual_max = std::max(rep.identity_residual_max, residual(ca.q));
    for (int r = 0; r < 3; ++r) {
      const auto q = random_init(tab, init_rng);
      rep.identity_residual_max = std::max(rep.identity_residual_max, residual(q));
      rep.elbo_marginal_gap_max = std::max(rep.elbo_marginal_gap_max, joint_elbo(q, tab) - lm);
    }

    const auto delta = delta_ablation(model, grid, traces, tab, iters, mr.split("delta"), false);
    for (std::size_t s = 1; s < delta.size(); ++s) {
      if (delta[s].best_trace_log_prob < delta[s - 1].best_trace_log_prob) {
        rep.delta_keep_best_monotone = false;
      }
    }
    if (tr.back().elbo >= delta.back().elbo) ++rep.delta_ablation_wins;
  }
  rep.prop1_max_err = std::max(rep.prop1_q1_max_err, rep.prop1_q2_max_err);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace ltr::exact
