#include "ltr/rethinking.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

#include "ltr/phase_guard.hpp"

namespace ltr {

void RethinkConfig::validate() const {
  if (T_rethink < 1) throw std::invalid_argument("rethink config: T_rethink must be >= 1");
  fast.validate();
  if (decode.temperature < 0) {
    throw std::invalid_argument("rethink config: temperature must be >= 0");
  }
  if (decode.max_new_tokens < 1) {
    throw std::invalid_argument("rethink config: max_new_tokens must be >= 1");
  }
}

const RethinkRound& RethinkResult::best_within(std::size_t t) const {
  if (t < 1 || t > rounds.size()) throw std::out_of_range("best_within: round out of range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < t; ++i) {
    if (rounds[i].score > rounds[best].score) best = i;
  }
  return rounds[best];
}

std::optional<Rational> RethinkResult::answer_within(std::size_t t) const {
  return extract_answer(best_within(t).trace_text);
}

template <typename T>
VariationalPosterior<T> init_thought(const ModelParams<T>& p, std::span<const TokenId> prompt,
                                     const FastInferConfig& fast, Rng rng, bool check_theta) {
  if (prompt.size() < 2) throw std::invalid_argument("init_thought: empty question");
  const ThetaGuard<T> guard(p, "init_thought", check_theta);
  const auto& c = p.config();
  auto prior = VariationalPosterior<T>::prior(c.K, c.latent_dim());
  auto r = fast_optimize(p, prompt, prior, fast, rng, 1, false);
  guard.check();
  return std::move(r.q);
}

template <typename T>
Generation<T> generate_step(const ModelParams<T>& p, const VariationalPosterior<T>& q,
                            std::span<const TokenId> prompt, const DecodeConfig& decode,
                            Rng& rng, bool check_theta) {
  const ThetaGuard<T> guard(p, "generate_step", check_theta);
  const Tensor<T> z = encode_prior(p, q.mu);
  Generation<T> g;
  g.trace = sample_trace(p, prompt, z, decode, rng);
  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), g.trace.tokens.begin(), g.trace.tokens.end());
  if (!g.trace.tokens.empty()) {
    g.log_likelihood = decoder_log_likelihood(p, std::span<const TokenId>(seq), z, prompt.size()).total;
  }
  guard.check();
  return g;
}

template <typename T>
FastResult<T> reflect_step(const ModelParams<T>& p, std::span<const TokenId> prompt,
                           std::span<const TokenId> trace, const VariationalPosterior<T>& q_prev,
                           const RethinkConfig& cfg, Rng rng) {
  if (trace.empty()) throw std::invalid_argument("reflect_step: empty trace");
  const ThetaGuard<T> guard(p, "reflect_step", cfg.check_theta);
  const auto& c = p.config();
  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), trace.begin(), trace.end());
  const auto init =
      cfg.warm_start ? q_prev : VariationalPosterior<T>::prior(c.K, c.latent_dim());
  const std::size_t from = cfg.reflect_trace_only ? prompt.size() : 1;
  auto r = fast_optimize(p, std::span<const TokenId>(seq), init, cfg.fast, rng, from, true);
  guard.check();
  return r;
}

template <typename T>
RethinkResult rethink(const ModelParams<T>& p, std::span<const TokenId> prompt,
                      const RethinkConfig& cfg, Rng rng) {
  cfg.validate();
  if (prompt.size() >= p.config().max_seq_len) {
    throw std::invalid_argument("rethink: question fills the context");
  }
  const ThetaGuard<T> guard(p, "rethink", cfg.check_theta);
  const auto& vocab = Vocabulary::standard();
  RethinkResult res;
  auto q = init_thought(p, prompt, cfg.fast, rng.split("init"), cfg.check_theta);
  for (int t = 1; t <= cfg.T_rethink; ++t) {
    DecodeConfig dc = cfg.decode;
    if (t == 1 && cfg.first_round_greedy) dc.temperature = 0.0;
    Rng gen_rng = rng.split("generate").split(std::uint64_t(t));
    auto g = generate_step(p, q, prompt, dc, gen_rng, cfg.check_theta);

    RethinkRound round;
    round.t = t;
    round.trace = g.trace.tokens;
    round.trace_text = vocab.detokenize(round.trace);
    round.log_likelihood = g.log_likelihood;
    round.score = cfg.length_normalize && !round.trace.empty()
                      ? g.log_likelihood / double(round.trace.size())
                      : g.log_likelihood;
    round.truncated = g.trace.truncated;
    if (!round.trace.empty()) {
      auto r = reflect_step(p, prompt, std::span<const TokenId>(round.trace), q, cfg,
                            rng.split("reflect").split(std::uint64_t(t)));
      round.elbo_after_reflect = r.trajectory.back().elbo;
      q = std::move(r.q);
    }
    res.rounds.push_back(std::move(round));
    const auto& last = res.rounds.back();
    if (res.rounds.size() == 1 || last.score > res.rounds[res.best_round].score) {
      res.best_round = res.rounds.size() - 1;
    }
    res.best_so_far.push_back(res.rounds[res.best_round].score);
  }
  for (std::size_t i = 1; i < res.best_so_far.size(); ++i) {
    if (res.best_so_far[i] < res.best_so_far[i - 1]) {
      throw std::logic_error("rethink: keep-best score decreased");
    }
  }
  res.answer = extract_answer(res.best().trace_text);
  guard.check();
  return res;
}

std::string transcript_jsonl(std::int64_t question_id, const RethinkResult& r) {
  std::string out;
  for (const auto& round : r.rounds) {
    nlohmann::json j;
    j["question_id"] = question_id;
    j["t"] = round.t;
    j["trace_text"] = round.trace_text;
    j["log_likelihood"] = round.log_likelihood;
    j["elbo_after_reflect"] = round.elbo_after_reflect;
    j["truncated"] = round.truncated;
    out += j.dump() + "\n";
  }
  return out;
}

#define LTR_INSTANTIATE_RETHINK(T)                                                          \
  template VariationalPosterior<T> init_thought(const ModelParams<T>&,                      \
                                                std::span<const TokenId>,                   \
                                                const FastInferConfig&, Rng, bool);         \
  template Generation<T> generate_step(const ModelParams<T>&, const VariationalPosterior<T>&, \
                                       std::span<const TokenId>, const DecodeConfig&, Rng&, \
                                       bool);                                               \
  template FastResult<T> reflect_step(const ModelParams<T>&, std::span<const TokenId>,      \
                                      std::span<const TokenId>,                             \
                                      const VariationalPosterior<T>&, const RethinkConfig&, \
                                      Rng);                                                 \
  template RethinkResult rethink(const ModelParams<T>&, std::span<const TokenId>,           \
                                 const RethinkConfig&, Rng);

LTR_INSTANTIATE_RETHINK(float)
LTR_INSTANTIATE_RETHINK(double)

#undef LTR_INSTANTIATE_RETHINK

}  // namespace ltr
