#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ltr/model.hpp"
#include "ltr/rational.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/variational.hpp"

namespace ltr {

struct RethinkConfig {
  int T_rethink = 30;
  FastInferConfig fast;
  DecodeConfig decode{1.0, 96};
  // Round 1 decodes greedily, so a T-round run starts with the Rethink-1
  // answer and later rounds sample at decode.temperature.
  bool first_round_greedy = true;
  bool warm_start = true;
  // Reflect on the trace tokens only instead of (question, trace).
  bool reflect_trace_only = false;
  // Keep-best on mean per-token log-likelihood instead of the total.
  bool length_normalize = false;
  bool check_theta = true;

  void validate() const;
};

struct RethinkRound {
  int t = 0;
  Tokens trace;
  std::string trace_text;
  // log p(trace | z(t), question), total over the generated tokens.
  double log_likelihood = 0;
  // The keep-best criterion (total or per-token).
  double score = 0;
  double elbo_after_reflect = 0;
  bool truncated = false;
};

struct RethinkResult {
  std::vector<RethinkRound> rounds;
  std::size_t best_round = 0;
  // best score over rounds 1..t, one entry per round
  std::vector<double> best_so_far;
  std::optional<Rational> answer;

  const RethinkRound& best() const { return rounds.at(best_round); }
  // Best trace and its answer considering only the first `t` rounds.
  const RethinkRound& best_within(std::size_t t) const;
  std::optional<Rational> answer_within(std::size_t t) const;
};

// Fast inference on <bos> question <sep> alone, from the prior.
template <typename T>
VariationalPosterior<T> init_thought(const ModelParams<T>& p, std::span<const TokenId> prompt,
                                     const FastInferConfig& fast, Rng rng,
                                     bool check_theta = true);

template <typename T>
struct Generation {
  SampledTrace trace;
  double log_likelihood = 0;
};

// Decodes under z = U(mu) and scores the produced tokens under the same z.
template <typename T>
Generation<T> generate_step(const ModelParams<T>& p, const VariationalPosterior<T>& q,
                            std::span<const TokenId> prompt, const DecodeConfig& decode,
                            Rng& rng, bool check_theta = true);

// Fast inference on (question, trace), from q_prev when warm_start.
template <typename T>
FastResult<T> reflect_step(const ModelParams<T>& p, std::span<const TokenId> prompt,
                           std::span<const TokenId> trace, const VariationalPosterior<T>& q_prev,
                           const RethinkConfig& cfg, Rng rng);

template <typename T>
RethinkResult rethink(const ModelParams<T>& p, std::span<const TokenId> prompt,
                      const RethinkConfig& cfg, Rng rng);

// One JSON line per round.
std::string transcript_jsonl(std::int64_t question_id, const RethinkResult& r);

}  // namespace ltr
