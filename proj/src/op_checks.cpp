#include "ltr/op_checks.hpp"

#include <stdexcept>

#include "ltr/model.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/variational.hpp"

namespace ltr {

namespace {

using G = Graph<double>;
using Vars = std::span<const Var>;

Tensor<double> rnd(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  rng.fill_normal(t.mutable_data());
  for (double& v : t.mutable_data()) v *= scale;
  return t;
}

// <out, R> for a fixed R drawn from `seed`, so every output entry matters.
Var project(G& g, Var out, std::uint64_t seed) {
  Tensor<double> r(g.value(out).shape());
  Rng(seed).fill_normal(r.mutable_data());
  return sum(g, mul(g, out, g.constant(std::move(r))));
}

OpCheck check(std::string name, std::function<Var(G&, Vars)> f,
              std::function<std::vector<Tensor<double>>(Rng&)> make_inputs,
              std::vector<std::string> names, double tol = kOpGradTol) {
  OpCheck c;
  c.name = name;
  c.tol = tol;
  c.run = [name, f, make_inputs, names](Rng rng) {
    const auto inputs = make_inputs(rng);
    const std::uint64_t proj = rng.split("projection").key();
    return grad_check(
        name, [&](G& g, Vars v) { return project(g, f(g, v), proj); }, inputs, names,
        kGradCheckStep);
  };
  return c;
}

ModelConfig check_model_config() {
  ModelConfig c;
  c.vocab_size = Vocabulary::standard().size();
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.K = 2;
  c.window = 4;
  c.max_seq_len = 48;
  c.ffn_mult = 2;
  c.init_std = 0.3;
  return c;
}

Tokens check_sequence() {
  return Vocabulary::standard().encode_example("ann has 3 pens. how many?", "<<3=3>> #### 3");
}

std::vector<OpCheck> build() {
  std::vector<OpCheck> r;
  const std::vector<std::int32_t> ids = {3, 0, 4, 3, 1};
  const std::vector<std::int32_t> targets = {1, 5, -1, 0};

  r.push_back(check("matmul", [](G& g, Vars v) { return matmul(g, v[0], v[1]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q), rnd({4, 5}, q)}; },
                    {"a", "b"}));
  r.push_back(check("add", [](G& g, Vars v) { return add(g, v[0], v[1]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q), rnd({3, 4}, q)}; },
                    {"a", "b"}));
  r.push_back(check("sub", [](G& g, Vars v) { return sub(g, v[0], v[1]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q), rnd({3, 4}, q)}; },
                    {"a", "b"}));
  r.push_back(check("mul", [](G& g, Vars v) { return mul(g, v[0], v[1]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q), rnd({3, 4}, q)}; },
                    {"a", "b"}));
  r.push_back(check("scale", [](G& g, Vars v) { return scale(g, v[0], -1.7); },
                    [](Rng& q) { return std::vector{rnd({2, 5}, q)}; }, {"a"}));
  r.push_back(check("add_scalar", [](G& g, Vars v) { return add_scalar(g, v[0], 0.4); },
                    [](Rng& q) { return std::vector{rnd({2, 5}, q)}; }, {"a"}));
  r.push_back(check("exp", [](G& g, Vars v) { return exp(g, v[0]); },
                    [](Rng& q) { return std::vector{rnd({3, 3}, q)}; }, {"a"}));
  r.push_back(check("silu", [](G& g, Vars v) { return silu(g, v[0]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q, 2.0)}; }, {"a"}));
  r.push_back(check("sum", [](G& g, Vars v) { return sum(g, v[0]); },
                    [](Rng& q) { return std::vector{rnd({3, 4}, q)}; }, {"a"}));
  r.push_back(check("rms_norm", [](G& g, Vars v) { return rms_norm(g, v[0], v[1], 1e-6); },
                    [](Rng& q) { return std::vector{rnd({3, 6}, q), rnd({6}, q)}; },
                    {"x", "gain"}));
  r.push_back(check("softmax_rows", [](G& g, Vars v) { return softmax_rows(g, v[0]); },
                    [](Rng& q) { return std::vector{rnd({3, 5}, q, 2.0)}; }, {"x"}));
  r.push_back(check(
      "cross_entropy_rows",
      [targets](G& g, Vars v) {
        return cross_entropy_rows(g, v[0], std::span<const std::int32_t>(targets));
      },
      [](Rng& q) { return std::vector{rnd({4, 6}, q, 2.0)}; }, {"logits"}));
  r.push_back(check(
      "embedding",
      [ids](G& g, Vars v) { return embedding(g, v[0], std::span<const std::int32_t>(ids)); },
      [](Rng& q) { return std::vector{rnd({6, 4}, q)}; }, {"table"}));
  r.push_back(check(
      "attention_full",
      [](G& g, Vars v) { return attention(g, v[0], v[1], v[2], 2, AttentionSpan::full()); },
      [](Rng& q) { return std::vector{rnd({3, 4}, q), rnd({5, 4}, q), rnd({5, 4}, q)}; },
      {"q", "k", "v"}));
  r.push_back(check(
      "attention_causal_window",
      [](G& g, Vars v) {
        return attention(g, v[0], v[1], v[2], 2, AttentionSpan::causal_window(2));
      },
      [](Rng& q) { return std::vector{rnd({6, 4}, q), rnd({6, 4}, q), rnd({6, 4}, q)}; },
      {"q", "k", "v"}));
  r.push_back(check("slice_rows", [](G& g, Vars v) { return slice_rows(g, v[0], 1, 3); },
                    [](Rng& q) { return std::vector{rnd({4, 3}, q)}; }, {"x"}));
  r.push_back(check(
      "kl_standard_normal",
      [](G& g, Vars v) { return kl_standard_normal(g, v[0], v[1]); },
      [](Rng& q) { return std::vector{rnd({2, 3}, q), rnd({2, 3}, q, 0.5)}; },
      {"mu", "log_var"}));
  r.push_back(check(
      "reparameterize",
      [](G& g, Vars v) { return reparameterize(g, v[0], v[1], v[2]); },
      [](Rng& q) { return std::vector{rnd({2, 3}, q), rnd({2, 3}, q, 0.5), rnd({2, 3}, q)}; },
      {"mu", "log_var", "eps"}));

  // model blocks, with fixed random parameters
  r.push_back({"encode_prior", kOpGradTol, [](Rng rng) {
                 const auto p = ModelParams<double>::init(check_model_config(), rng.split("p"));
                 const auto z0 = rnd({2, 8}, rng);
                 const std::uint64_t proj = rng.split("projection").key();
                 return grad_check(
                     "encode_prior",
                     [&](G& g, Vars v) {
                       const auto th = bind_frozen(g, p);
                       return project(g, encode_prior(g, p, th, v[0]), proj);
                     },
                     {z0}, {"z0"}, kGradCheckStep);
               }});
  r.push_back({"decoder_log_likelihood", kOpGradTol, [](Rng rng) {
                 const auto p = ModelParams<double>::init(check_model_config(), rng.split("p"));
                 const auto z = rnd({2, 8}, rng);
                 const Tokens x = check_sequence();
                 return grad_check(
                     "decoder_log_likelihood",
                     [&](G& g, Vars v) {
                       const auto th = bind_frozen(g, p);
                       return decoder_log_likelihood(g, p, th, x, v[0], 1).total;
                     },
                     {z}, {"z"}, kGradCheckStep);
               }});
  r.push_back({"decoder_log_likelihood_params", kOpGradTol, [](Rng rng) {
                 auto p = ModelParams<double>::init(check_model_config(), rng.split("p"));
                 const auto z = rnd({2, 8}, rng);
                 const Tokens x = check_sequence();
                 std::vector<Parameter<double>*> ps;
                 for (auto& q : p.params()) ps.push_back(&q);
                 return grad_check_params(
                     "decoder_log_likelihood_params",
                     [&](G& g) {
                       const auto th = bind_trainable(g, p);
                       const Var zz = encode_prior(g, p, th, g.view(z));
                       return decoder_log_likelihood(g, p, th, x, zz, 1).total;
                     },
                     std::span<Parameter<double>* const>(ps), 6, rng.split("probe"),
                     kGradCheckStep);
               }});

  // end to end: ELBO w.r.t. the variational parameters at fixed noise
  r.push_back({"elbo_end_to_end", kElboGradTol, [](Rng rng) {
                 const auto p = ModelParams<double>::init(check_model_config(), rng.split("p"));
                 const Tokens x = check_sequence();
                 const auto mu = rnd({2, 8}, rng, 0.5);
                 const auto lv = rnd({2, 8}, rng, 0.3);
                 Rng nr = rng.split("noise");
                 const auto eps = draw_noise<double>(2, 8, 2, nr);
                 return grad_check(
                     "elbo_end_to_end",
                     [&](G& g, Vars v) {
                       const auto th = bind_frozen(g, p);
                       return elbo(g, p, th, x, v[0], v[1], std::span(eps), 1).elbo;
                     },
                     {mu, lv}, {"mu", "log_var"}, kGradCheckStep);
               }});
  return r;
}

}  // namespace

const std::vector<OpCheck>& op_check_registry() {
  static const std::vector<OpCheck> registry = build();
  return registry;
}

std::vector<OpCheckResult> run_op_checks(std::string_view which, std::uint64_t seed, double tol) {
  std::vector<OpCheckResult> out;
  const Rng root(seed);
  for (const auto& c : op_check_registry()) {
    if (which != "all" && which != c.name) continue;
    OpCheckResult r;
    r.report = c.run(root.split(c.name));
    r.tol = (tol > 0 && c.tol == kOpGradTol) ? tol : c.tol;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw std::invalid_argument("unknown op '" + std::string(which) + "'");
  return out;
}

}  // namespace ltr
