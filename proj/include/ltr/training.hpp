#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltr/adam.hpp"
#include "ltr/model.hpp"
#include "ltr/rethinking.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/variational.hpp"

namespace ltr {

struct TrainConfig {
  std::size_t batch_size = 16;
  int epochs = 3;
  double lr_slow = 4e-4;
  FastInferConfig fast;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  // 0 disables periodic checkpoints (a final one is always written).
  std::size_t checkpoint_every = 500;
  // 0 disables periodic held-out evaluation.
  std::size_t eval_every = 0;
  std::size_t eval_size = 200;
  // Stop after this many slow steps (0 = no limit).
  std::size_t max_steps = 0;
  // Stop once the run has used this much wall time (0 = no limit).
  double time_budget_s = 0;
  // Workers for the fast phase; forced to 1 in deterministic mode.
  std::size_t threads = 1;
  // Single-threaded, and wall-clock fields in the metrics log are zeroed.
  bool deterministic = false;
  bool check_theta = true;

  void validate() const;
};

struct TrainMetrics {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double mean_elbo = 0;
  double mean_recon = 0;
  double mean_kl = 0;
  double slow_grad_norm = 0;
  double wall_ms = 0;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct SlowOptimizer {
  std::vector<AdamState<T>> states;

  static SlowOptimizer make(const ModelParams<T>& p, double lr);
  std::uint64_t steps() const { return states.empty() ? 0 : states.front().t; }
};

// One dual-rate update: per-instance fast inference from the prior with the
// parameters frozen, then one clipped Adam step on the batch-mean negative
// ELBO at the optimized posteriors. `indices` only labels diagnostics.
template <typename T>
TrainMetrics train_step(ModelParams<T>& p, std::span<const Tokens> batch,
                        SlowOptimizer<T>& opt, const TrainConfig& cfg, Rng rng,
                        std::span<const std::size_t> indices = {});

// Fixed slot order for the metrics log.
std::string metrics_json(const TrainMetrics& m, std::uint64_t seed, bool deterministic);

enum class EvalMode { single_pass, rethink };

struct EvalRecord {
  std::int64_t id = 0;
  Rational answer;
  RethinkResult result;
  bool correct = false;
};

struct EvalResult {
  std::vector<EvalRecord> records;
  double accuracy = 0;

  // Accuracy when keep-best only sees the first t rounds.
  double accuracy_at(std::size_t t) const;
  std::string records_jsonl() const;
};

struct EvalOptions {
  EvalMode mode = EvalMode::single_pass;
  RethinkConfig rethink;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

// single_pass runs rethink with T_rethink = 1.
template <typename T>
EvalResult evaluate(const std::vector<Problem>& problems, const ModelParams<T>& p,
                    const EvalOptions& opts);

struct TrainRunResult {
  ModelParams<float> params;
  std::vector<TrainMetrics> metrics;
  std::uint64_t steps = 0;
  // "completed", "max_steps" or "time_budget"
  std::string stop_reason;
  double seconds = 0;
};

struct TrainRunOptions {
  ModelConfig model;
  TrainConfig train;
  // Used for periodic evaluation; may be empty.
  std::vector<Problem> eval_set;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  // Stored in checkpoints so evaluation uses the run's rethinking settings.
  RethinkConfig rethink;
  // Serialized into checkpoints alongside the model and train sections.
  std::string version = "";
};

// Writes metrics.jsonl, eval.jsonl (when evaluating), checkpoints under
// out_dir/checkpoints and out_dir/final.ltrc.
TrainRunResult train(const std::vector<Problem>& train_set, const TrainRunOptions& opts);

}  // namespace ltr
