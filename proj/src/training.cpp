#include "ltr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "ltr/checkpoint.hpp"
#include "ltr/config.hpp"
#include "ltr/parallel.hpp"
#include "ltr/phase_guard.hpp"

namespace ltr {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (!(lr_slow >= 0)) throw std::invalid_argument("train config: lr_slow must be >= 0");
  fast.validate();
  if (!(grad_clip > 0)) throw std::invalid_argument("train config: grad_clip must be positive");
  if (!(time_budget_s >= 0)) {
    throw std::invalid_argument("train config: time_budget_s must be >= 0");
  }
  if (threads < 1) throw std::invalid_argument("train config: threads must be >= 1");
}

template <typename T>
SlowOptimizer<T> SlowOptimizer<T>::make(const ModelParams<T>& p, double lr) {
  SlowOptimizer<T> o;
  for (const auto& q : p.params()) o.states.emplace_back(q.value.shape(), AdamOptions{lr});
  return o;
}

template <typename T>
TrainMetrics train_step(ModelParams<T>& p, std::span<const Tokens> batch, SlowOptimizer<T>& opt,
                        const TrainConfig& cfg, Rng rng, std::span<const std::size_t> indices) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (opt.states.size() != p.params().size()) {
    throw std::invalid_argument("train_step: optimizer does not match the parameters");
  }
  const auto& mc = p.config();
  const std::size_t B = batch.size();
  const auto prior = VariationalPosterior<T>::prior(mc.K, mc.latent_dim());

  // phase A: per-instance posteriors, parameters read-only
  std::vector<VariationalPosterior<T>> post(B);
  {
    const ThetaGuard<T> guard(p, "fast phase", cfg.check_theta);
    const Rng fast_rng = rng.split("fast");
    parallel_for(B, cfg.deterministic ? 1 : cfg.threads, [&](std::size_t i) {
      post[i] = fast_optimize(p, batch[i], prior, cfg.fast, fast_rng.split(std::uint64_t(i)), 1,
                              false)
                    .q;
    });
    guard.check();
  }

  // phase B: gradient of the batch-mean negative ELBO w.r.t. theta
  p.zero_grad();
  double recon = 0, kl = 0;
  const Rng slow_rng = rng.split("slow");
  auto label = [&](std::size_t i) {
    return std::to_string(i < indices.size() ? indices[i] : i);
  };
  for (std::size_t i = 0; i < B; ++i) {
    Rng r = slow_rng.split(std::uint64_t(i));
    const auto eps = draw_noise<T>(mc.K, mc.latent_dim(), cfg.fast.n_samples, r);
    Graph<T> g;
    const auto th = bind_trainable(g, p);
    const auto v = elbo(g, p, th, batch[i], g.view(post[i].mu), g.view(post[i].log_var),
                        std::span(eps), 1);
    const double ri = g.value(v.recon).item(), ki = g.value(v.kl).item();
    if (!std::isfinite(ri) || !std::isfinite(ki)) {
      throw NonFiniteLossError("non-finite ELBO for instance " + label(i) +
                               " (recon " + std::to_string(ri) + ", kl " + std::to_string(ki) +
                               ")");
    }
    recon += ri;
    kl += ki;
    g.backward(scale(g, v.elbo, T(-1) / T(B)));
  }

  double sq = 0;
  for (const auto& q : p.params()) {
    for (T v : q.grad.data()) sq += double(v) * double(v);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    std::ostringstream msg;
    msg << "non-finite slow gradient; batch indices [";
    for (std::size_t i = 0; i < B; ++i) msg << (i ? "," : "") << label(i);
    msg << "]; per-parameter norms:";
    for (const auto& q : p.params()) {
      double s = 0;
      for (T v : q.grad.data()) s += double(v) * double(v);
      msg << " " << q.name << "=" << std::sqrt(s);
    }
    throw NonFiniteLossError(msg.str());
  }
  if (norm > cfg.grad_clip) {
    const T c = T(cfg.grad_clip / norm);
    for (auto& q : p.params()) {
      for (T& v : q.grad.mutable_data()) v *= c;
    }
  }
  for (std::size_t k = 0; k < p.params().size(); ++k) {
    opt.states[k].opts.lr = cfg.lr_slow;
    adam_step(p.params()[k], opt.states[k]);
  }
  p.zero_grad();

  TrainMetrics m;
  m.mean_recon = recon / double(B);
  m.mean_kl = kl / double(B);
  m.mean_elbo = m.mean_recon - m.mean_kl;
  m.slow_grad_norm = norm;
  return m;
}

namespace {

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

std::string metrics_json(const TrainMetrics& m, std::uint64_t seed, bool deterministic) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["mean_elbo"] = m.mean_elbo;
  j["mean_recon"] = m.mean_recon;
  j["mean_kl"] = m.mean_kl;
  j["slow_grad_norm"] = m.slow_grad_norm;
  j["wall_ms"] = deterministic ? 0.0 : m.wall_ms;
  j["timestamp"] = deterministic ? "1970-01-01T00:00:00Z" : iso_now();
  j["seed"] = seed;
  return j.dump();
}

// ---- evaluation -------------------------------------------------------------

double EvalResult::accuracy_at(std::size_t t) const {
  if (records.empty()) return 0;
  std::size_t ok = 0;
  for (const auto& r : records) {
    const std::size_t k = std::min(t, r.result.rounds.size());
    if (r.result.answer_within(k) == r.answer) ++ok;
  }
  return double(ok) / double(records.size());
}

std::string EvalResult::records_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["answer"] = r.answer.to_string();
    j["predicted"] = r.result.answer ? nlohmann::ordered_json(r.result.answer->to_string())
                                     : nlohmann::ordered_json(nullptr);
    j["correct"] = r.correct;
    j["best_round"] = r.result.best().t;
    auto rounds = nlohmann::ordered_json::array();
    for (const auto& rd : r.result.rounds) {
      nlohmann::ordered_json x;
      x["t"] = rd.t;
      x["trace_text"] = rd.trace_text;
      x["log_likelihood"] = rd.log_likelihood;
      x["elbo_after_reflect"] = rd.elbo_after_reflect;
      x["truncated"] = rd.truncated;
      rounds.push_back(std::move(x));
    }
    j["rounds"] = std::move(rounds);
    out += j.dump() + "\n";
  }
  return out;
}

template <typename T>
EvalResult evaluate(const std::vector<Problem>& problems, const ModelParams<T>& p,
                    const EvalOptions& opts) {
  RethinkConfig rc = opts.rethink;
  if (opts.mode == EvalMode::single_pass) rc.T_rethink = 1;
  rc.validate();
  const auto& vocab = Vocabulary::standard();
  const Rng root = Rng(opts.seed).split("eval");
  EvalResult res;
  res.records.resize(problems.size());
  parallel_for(problems.size(), opts.threads, [&](std::size_t i) {
    const Problem& pr = problems[i];
    EvalRecord& rec = res.records[i];
    rec.id = pr.id;
    rec.answer = pr.answer;
    const Tokens prompt = vocab.encode_question(pr.question);
    rec.result = rethink(p, std::span<const TokenId>(prompt), rc, root.split(std::uint64_t(pr.id)));
    rec.correct = rec.result.answer == pr.answer;
  });
  std::size_t ok = 0;
  for (const auto& r : res.records) ok += r.correct;
  res.accuracy = problems.empty() ? 0.0 : double(ok) / double(problems.size());
  return res;
}

// ---- training loop ----------------------------------------------------------

namespace {

constexpr const char* kOptM = "opt.m.";
constexpr const char* kOptV = "opt.v.";

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng r = Rng(seed).split("order").split(std::uint64_t(epoch));
  // Fisher-Yates with our own draws so the order is library-independent
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::size_t(r.uniform_int(0, std::int64_t(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct LoopState {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t cursor = 0;
};

Checkpoint make_checkpoint(const ModelParams<float>& p, const SlowOptimizer<float>& opt,
                           const TrainRunOptions& o, const LoopState& s) {
  Checkpoint ck;
  put_model(ck, p);
  ck.config["train"] = to_json(o.train);
  ck.config["rethink"] = to_json(o.rethink);
  ck.config["state"] = {{"step", s.step}, {"epoch", s.epoch}, {"cursor", s.cursor}};
  ck.config["version"] = o.version;
  const Rng r(o.train.seed);
  ck.rng_key = r.key();
  ck.rng_counter = s.step;
  for (std::size_t k = 0; k < p.params().size(); ++k) {
    ck.add(kOptM + p.params()[k].name, opt.states[k].m);
    ck.add(kOptV + p.params()[k].name, opt.states[k].v);
  }
  return ck;
}

}  // namespace

TrainRunResult train(const std::vector<Problem>& train_set, const TrainRunOptions& o) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  o.train.validate();
  o.model.validate();
  const TrainConfig& tc = o.train;
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(o.out_dir);

  const auto& vocab = Vocabulary::standard();
  std::vector<Tokens> seqs;
  seqs.reserve(train_set.size());
  for (const auto& pr : train_set) {
    seqs.push_back(vocab.encode_example(pr.question, pr.trace));
    if (seqs.back().size() > o.model.max_seq_len) {
      throw std::invalid_argument("train: problem " + std::to_string(pr.id) + " has " +
                                  std::to_string(seqs.back().size()) +
                                  " tokens, above max_seq_len");
    }
  }

  TrainRunResult res;
  res.params = ModelParams<float>::init(o.model, Rng(tc.seed).split("init"));
  auto opt = SlowOptimizer<float>::make(res.params, tc.lr_slow);
  LoopState st;
  if (o.resume_from) {
    const auto ck = Checkpoint::load(*o.resume_from);
    res.params = get_model<float>(ck);
    if (res.params.config().latent_dim() != o.model.latent_dim() ||
        to_json(res.params.config()) != to_json(o.model)) {
      throw std::invalid_argument("train: resume checkpoint has a different model config");
    }
    const auto& saved = ck.config.at("train");
    if (saved.at("seed") != tc.seed || saved.at("batch_size") != tc.batch_size) {
      throw std::invalid_argument("train: resume checkpoint has a different seed or batch size");
    }
    const auto& s = ck.config.at("state");
    st.step = s.at("step").get<std::uint64_t>();
    st.epoch = s.at("epoch").get<std::size_t>();
    st.cursor = s.at("cursor").get<std::size_t>();
    for (std::size_t k = 0; k < res.params.params().size(); ++k) {
      const auto& name = res.params.params()[k].name;
      opt.states[k].m = ck.get<float>(kOptM + name);
      opt.states[k].v = ck.get<float>(kOptV + name);
      opt.states[k].t = st.step;
    }
  }

  const auto metrics_path = o.out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, o.resume_from ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  std::ofstream eval_log;
  const bool do_eval = tc.eval_every > 0 && !o.eval_set.empty();
  if (do_eval) {
    const auto path = o.out_dir / "eval.jsonl";
    eval_log.open(path, o.resume_from ? std::ios::app : std::ios::trunc);
    if (!eval_log) throw std::runtime_error("cannot write " + path.string());
  }
  std::vector<Problem> eval_subset(
      o.eval_set.begin(),
      o.eval_set.begin() + std::ptrdiff_t(std::min(tc.eval_size, o.eval_set.size())));

  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  res.stop_reason = "completed";
  bool stop = false;
  for (; st.epoch < std::size_t(tc.epochs) && !stop; ++st.epoch, st.cursor = 0) {
    const auto order = epoch_order(seqs.size(), tc.seed, st.epoch);
    while (st.cursor < order.size()) {
      if (tc.max_steps > 0 && st.step >= tc.max_steps) {
        res.stop_reason = "max_steps";
        stop = true;
        break;
      }
      if (tc.time_budget_s > 0 && elapsed() >= tc.time_budget_s) {
        res.stop_reason = "time_budget";
        stop = true;
        break;
      }
      const std::size_t end = std::min(order.size(), st.cursor + tc.batch_size);
      std::vector<Tokens> batch;
      std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(st.cursor),
                                   order.begin() + std::ptrdiff_t(end));
      for (std::size_t i : idx) batch.push_back(seqs[i]);
      const auto s0 = std::chrono::steady_clock::now();
      auto m = train_step(res.params, std::span<const Tokens>(batch), opt, tc,
                          Rng(tc.seed).split("step").split(st.step), idx);
      m.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0).count();
      st.cursor = end;
      ++st.step;
      m.step = st.step;
      m.epoch = st.epoch;
      metrics << metrics_json(m, tc.seed, tc.deterministic) << "\n" << std::flush;
      res.metrics.push_back(m);

      if (tc.checkpoint_every > 0 && st.step % tc.checkpoint_every == 0) {
        LoopState snap = st;
        if (snap.cursor >= order.size()) {
          ++snap.epoch;
          snap.cursor = 0;
        }
        make_checkpoint(res.params, opt, o, snap)
            .save(o.out_dir / "checkpoints" / ("step_" + std::to_string(st.step) + ".ltrc"));
      }
      if (do_eval && st.step % tc.eval_every == 0) {
        EvalOptions eo;
        eo.seed = tc.seed;
        eo.threads = tc.deterministic ? 1 : tc.threads;
        const auto er = evaluate(eval_subset, res.params, eo);
        nlohmann::ordered_json j;
        j["step"] = st.step;
        j["accuracy"] = er.accuracy;
        j["n"] = eval_subset.size();
        j["seed"] = tc.seed;
        eval_log << j.dump() << "\n" << std::flush;
      }
    }
    if (stop) break;
  }
  make_checkpoint(res.params, opt, o, st).save(o.out_dir / "final.ltrc");
  res.steps = st.step;
  res.seconds = elapsed();
  return res;
}

template struct SlowOptimizer<float>;
template struct SlowOptimizer<double>;
template TrainMetrics train_step(ModelParams<float>&, std::span<const Tokens>,
                                 SlowOptimizer<float>&, const TrainConfig&, Rng,
                                 std::span<const std::size_t>);
template TrainMetrics train_step(ModelParams<double>&, std::span<const Tokens>,
                                 SlowOptimizer<double>&, const TrainConfig&, Rng,
                                 std::span<const std::size_t>);
template EvalResult evaluate(const std::vector<Problem>&, const ModelParams<float>&,
                             const EvalOptions&);
template EvalResult evaluate(const std::vector<Problem>&, const ModelParams<double>&,
                             const EvalOptions&);

}  // namespace ltr
