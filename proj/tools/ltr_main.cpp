// ltr: data generation, training, evaluation, rethinking and checks.
// Exit codes: 0 success, 2 validation failure, 1 other errors.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ltr/checkpoint.hpp"
#include "ltr/config.hpp"
#include "ltr/exact_verify.hpp"
#include "ltr/op_checks.hpp"
#include "ltr/rethinking.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/training.hpp"
#include "ltr/version.hpp"

namespace fs = std::filesystem;
using namespace ltr;

namespace {

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kInvalid = 2;

// Signals a failed check rather than a crash.
struct ValidationFailure {
  int code = kInvalid;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Resolved config, version and seed next to every run's outputs.
void write_run_meta(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.json", dump_run_config(cfg));
  write_text(dir / "version.txt", std::string(version()) + "\n");
}

RunConfig load_or_default(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  c.validate();
  return c;
}

RethinkConfig rethink_from_checkpoint_or(const Checkpoint& ck, const RunConfig* cfg) {
  if (cfg) return cfg->rethink;
  if (ck.config.contains("rethink")) return rethink_config_from_json(ck.config.at("rethink"));
  return RethinkConfig{};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-thought model with inference-time rethinking"};
  app.set_version_flag("--version", std::string(version()));
  app.require_subcommand(1);

  // gen-data
  std::string gd_config, gd_out = "data";
  std::optional<std::uint64_t> gd_seed;
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic arithmetic problems");
  gen->add_option("--config", gd_config, "Run config JSON (data section)");
  gen->add_option("--out", gd_out, "Output directory")->capture_default_str();
  gen->add_option("--seed", gd_seed, "Overrides data.seed");

  // train
  std::string tr_config, tr_data, tr_out, tr_resume;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_max_steps, tr_threads;
  std::optional<double> tr_budget;
  bool tr_det = false;
  auto* trn = app.add_subcommand("train", "Dual-rate training");
  trn->add_option("--config", tr_config, "Run config JSON");
  trn->add_option("--data", tr_data, "Directory with train.jsonl and val.jsonl");
  trn->add_option("--out", tr_out, "Run directory (default paths.out_dir)");
  trn->add_option("--seed", tr_seed, "Overrides train.seed");
  trn->add_option("--resume", tr_resume, "Checkpoint to resume from");
  trn->add_option("--max-steps", tr_max_steps, "Overrides train.max_steps");
  trn->add_option("--time-budget", tr_budget, "Overrides train.time_budget_s");
  trn->add_option("--threads", tr_threads, "Overrides train.threads");
  trn->add_flag("--deterministic", tr_det, "Single-threaded with stable logs");

  // eval
  std::string ev_ck, ev_data, ev_mode = "single", ev_out, ev_config;
  int ev_T = 8;
  std::uint64_t ev_seed = 1;
  std::size_t ev_limit = 0, ev_threads = 1;
  bool ev_det = false;
  auto* ev = app.add_subcommand("eval", "Accuracy on a problem file");
  ev->add_option("--checkpoint", ev_ck, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Problems JSONL")->required();
  ev->add_option("--mode", ev_mode, "single or rethink")
      ->check(CLI::IsMember({"single", "rethink"}))
      ->capture_default_str();
  ev->add_option("--T", ev_T, "Rethinking rounds")->capture_default_str();
  ev->add_option("--out", ev_out, "Per-problem records JSONL");
  ev->add_option("--config", ev_config, "Run config JSON (rethink section)");
  ev->add_option("--seed", ev_seed, "Evaluation seed")->capture_default_str();
  ev->add_option("--limit", ev_limit, "Use only the first N problems (0 = all)");
  ev->add_option("--threads", ev_threads, "Workers across questions")->capture_default_str();
  ev->add_flag("--deterministic", ev_det, "Single-threaded");

  // rethink
  std::string rt_ck, rt_q, rt_transcript, rt_config;
  int rt_T = 8;
  std::uint64_t rt_seed = 1;
  auto* rt = app.add_subcommand("rethink", "Rethink one question and print every round");
  rt->add_option("--checkpoint", rt_ck, "Model checkpoint")->required();
  rt->add_option("--question", rt_q, "Question text")->required();
  rt->add_option("--T", rt_T, "Rethinking rounds")->capture_default_str();
  rt->add_option("--seed", rt_seed, "Seed")->capture_default_str();
  rt->add_option("--transcript", rt_transcript, "Write the JSONL transcript here");
  rt->add_option("--config", rt_config, "Run config JSON (rethink section)");

  // verify-theory
  std::uint64_t vt_seed = 7;
  int vt_models = 20, vt_iters = 50;
  std::string vt_out;
  auto* vt = app.add_subcommand("verify-theory", "Exact checks on tiny enumerable models");
  vt->add_option("--seed", vt_seed, "Seed")->capture_default_str();
  vt->add_option("--models", vt_models, "Number of random models")->capture_default_str();
  vt->add_option("--iters", vt_iters, "Coordinate-ascent iterations")->capture_default_str();
  vt->add_option("--out", vt_out, "Report JSON path");

  // grad-check
  std::string gc_ops = "all";
  double gc_tol = 0;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--ops", gc_ops, "all or one op name")->capture_default_str();
  gc->add_option("--tol", gc_tol, "Override the per-op tolerance (0 = defaults)");
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_flag_callback("--list", [] {
    for (const auto& c : op_check_registry()) std::cout << c.name << "\n";
    throw CLI::Success();
  }, "List registered ops");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) {
      RunConfig cfg = load_or_default(gd_config);
      if (gd_seed) cfg.data.seed = *gd_seed;
      cfg.data.validate();
      const auto ds = generate_problems(cfg.data);
      const fs::path out(gd_out);
      fs::create_directories(out);
      write_jsonl(out / "train.jsonl", ds.train);
      write_jsonl(out / "val.jsonl", ds.val);
      write_jsonl(out / "test.jsonl", ds.test);
      write_jsonl(out / "extrap.jsonl", ds.extrap);
      cfg.paths.data_dir = out.string();
      write_run_meta(out, cfg);
      std::cout << "wrote " << ds.train.size() << " train, " << ds.val.size() << " val, "
                << ds.test.size() << " test, " << ds.extrap.size() << " extrapolation problems to "
                << out.string() << "\n";
      return kOk;
    }

    if (*trn) {
      RunConfig cfg = load_or_default(tr_config);
      if (tr_seed) cfg.train.seed = *tr_seed;
      if (tr_max_steps) cfg.train.max_steps = *tr_max_steps;
      if (tr_budget) cfg.train.time_budget_s = *tr_budget;
      if (tr_threads) cfg.train.threads = *tr_threads;
      if (tr_det) cfg.train.deterministic = true;
      if (!tr_data.empty()) cfg.paths.data_dir = tr_data;
      if (!tr_out.empty()) cfg.paths.out_dir = tr_out;
      cfg.validate();
      const fs::path data(cfg.paths.data_dir), out(cfg.paths.out_dir);
      const auto train_set = load_jsonl(data / "train.jsonl");
      std::vector<Problem> val;
      if (fs::exists(data / "val.jsonl")) val = load_jsonl(data / "val.jsonl");
      write_run_meta(out, cfg);
      TrainRunOptions o;
      o.model = cfg.model;
      o.train = cfg.train;
      o.rethink = cfg.rethink;
      o.eval_set = std::move(val);
      o.out_dir = out;
      o.version = version();
      if (!tr_resume.empty()) o.resume_from = fs::path(tr_resume);
      std::cout << "training on " << train_set.size() << " problems, "
                << ModelParams<float>::init(cfg.model, Rng(0)).parameter_count()
                << " parameters\n";
      const auto r = train(train_set, o);
      const auto& last = r.metrics.empty() ? TrainMetrics{} : r.metrics.back();
      std::printf("stopped (%s) after %llu steps in %.1f s; last mean ELBO %.4f\n",
                  r.stop_reason.c_str(), static_cast<unsigned long long>(r.steps), r.seconds,
                  last.mean_elbo);
      std::cout << "checkpoint: " << (out / "final.ltrc").string() << "\n";
      return kOk;
    }

    if (*ev) {
      const auto ck = Checkpoint::load(ev_ck);
      const auto params = get_model<float>(ck);
      std::optional<RunConfig> cfg;
      if (!ev_config.empty()) cfg = load_or_default(ev_config);
      EvalOptions eo;
      eo.rethink = rethink_from_checkpoint_or(ck, cfg ? &*cfg : nullptr);
      eo.mode = ev_mode == "single" ? EvalMode::single_pass : EvalMode::rethink;
      eo.rethink.T_rethink = ev_T;
      eo.seed = ev_seed;
      eo.threads = ev_det ? 1 : ev_threads;
      auto problems = load_jsonl(ev_data);
      if (ev_limit > 0 && problems.size() > ev_limit) problems.resize(ev_limit);
      const auto r = evaluate(problems, params, eo);
      std::printf("accuracy %.4f on %zu problems (%s", r.accuracy, problems.size(),
                  ev_mode.c_str());
      if (eo.mode == EvalMode::rethink) {
        std::printf(", T=%d; Rethink-1 %.4f", ev_T, r.accuracy_at(1));
      }
      std::printf(")\n");
      if (!ev_out.empty()) {
        write_text(ev_out, r.records_jsonl());
        RunConfig meta = cfg.value_or(RunConfig{});
        meta.rethink = eo.rethink;
        write_run_meta(fs::path(ev_out).parent_path().empty() ? fs::path(".")
                                                              : fs::path(ev_out).parent_path(),
                       meta);
      }
      return kOk;
    }

    if (*rt) {
      const auto ck = Checkpoint::load(rt_ck);
      const auto params = get_model<float>(ck);
      std::optional<RunConfig> cfg;
      if (!rt_config.empty()) cfg = load_or_default(rt_config);
      RethinkConfig rc = rethink_from_checkpoint_or(ck, cfg ? &*cfg : nullptr);
      rc.T_rethink = rt_T;
      const Tokens prompt = Vocabulary::standard().encode_question(rt_q);
      const auto r = rethink(params, std::span<const TokenId>(prompt), rc,
                             Rng(rt_seed).split("rethink"));
      for (const auto& round : r.rounds) {
        std::printf("t=%-3d ll=%10.4f best=%10.4f%s  %s\n", round.t, round.log_likelihood,
                    r.best_so_far[std::size_t(round.t - 1)], round.truncated ? " [trunc]" : "",
                    round.trace_text.c_str());
      }
      std::printf("retained round %d: %s\nanswer: %s\n", r.best().t, r.best().trace_text.c_str(),
                  r.answer ? r.answer->to_string().c_str() : "(none)");
      if (!rt_transcript.empty()) write_text(rt_transcript, transcript_jsonl(0, r));
      return kOk;
    }

    if (*vt) {
      const auto rep = exact::verify_theory(vt_seed, vt_models, vt_iters);
      const std::string json = rep.to_json();
      if (!vt_out.empty()) write_text(vt_out, json);
      std::cout << json;
      std::printf("prop1 %s, prop2 %s, delta ablation wins %d/%d (%.2f s)\n",
                  rep.prop1_ok() ? "ok" : "VIOLATED", rep.prop2_ok() ? "ok" : "VIOLATED",
                  rep.delta_ablation_wins, rep.n_models, rep.seconds);
      if (!rep.ok()) throw ValidationFailure{};
      return kOk;
    }

    if (*gc) {
      const auto results = run_op_checks(gc_ops, gc_seed, gc_tol);
      bool all_ok = true;
      for (const auto& r : results) {
        std::printf("%-32s max_rel_err %.3e  tol %.0e  %s\n", r.report.name.c_str(),
                    r.report.max_rel_err, r.tol, r.ok() ? "ok" : "FAIL");
        all_ok = all_ok && r.ok();
      }
      if (!all_ok) throw ValidationFailure{};
      return kOk;
    }
  } catch (const ValidationFailure& v) {
    return v.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInvalid;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}
