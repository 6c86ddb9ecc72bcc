#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ltr/checkpoint.hpp"
#include "ltr/config.hpp"
#include "ltr/exact_verify.hpp"
#include "ltr/op_checks.hpp"
#include "ltr/rethinking.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/training.hpp"
#include "ltr/variational.hpp"
#include "ltr/version.hpp"

namespace py = pybind11;
using namespace ltr;

namespace {

std::optional<std::string> opt_string(const std::optional<Rational>& r) {
  if (!r) return std::nullopt;
  return r->to_string();
}

py::dict problem_dict(const Problem& p) {
  py::dict d;
  d["id"] = p.id;
  d["question"] = p.question;
  d["trace"] = p.trace;
  d["answer"] = p.answer.to_string();
  d["n_steps"] = p.n_steps;
  return d;
}

py::list problem_list(const std::vector<Problem>& ps) {
  py::list out;
  for (const auto& p : ps) out.append(problem_dict(p));
  return out;
}

// Float model loaded from a checkpoint plus its stored rethinking config.
struct LoadedModel {
  ModelParams<float> params;
  RethinkConfig rethink;
  std::string config_json;
};

LoadedModel load_model(const std::filesystem::path& path) {
  const auto ck = Checkpoint::load(path);
  LoadedModel m{get_model<float>(ck), {}, ck.config.dump()};
  if (ck.config.contains("rethink")) m.rethink = rethink_config_from_json(ck.config.at("rethink"));
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Latent-thought model with inference-time rethinking";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("version", [] { return std::string(version()); });

  m.def(
      "default_config_json", [] { return dump_run_config(RunConfig{}); },
      "Fully resolved default run configuration as JSON text.");
  m.def(
      "resolve_config_json",
      [](const std::string& text) {
        RunConfig c = parse_run_config(text);
        c.validate();
        return dump_run_config(c);
      },
      py::arg("text"), "Validates a run config and returns it with defaults expanded.");

  m.def(
      "generate_problems",
      [](const std::string& run_config_json) {
        RunConfig c = parse_run_config(run_config_json);
        c.data.validate();
        const auto ds = generate_problems(c.data);
        py::dict d;
        d["train"] = problem_list(ds.train);
        d["val"] = problem_list(ds.val);
        d["test"] = problem_list(ds.test);
        d["extrap"] = problem_list(ds.extrap);
        return d;
      },
      py::arg("run_config_json"));
  m.def("load_jsonl", [](const std::filesystem::path& p) { return problem_list(load_jsonl(p)); });
  m.def("evaluate_trace", [](const std::string& t) { return opt_string(evaluate_trace(t)); });
  m.def("extract_answer", [](const std::string& t) { return opt_string(extract_answer(t)); });

  m.def("tokenize", [](const std::string& s) { return Vocabulary::standard().tokenize(s); });
  m.def("detokenize", [](const Tokens& t) {
    return Vocabulary::standard().detokenize(std::span<const TokenId>(t));
  });
  m.def("vocab_size", [] { return Vocabulary::standard().size(); });

  m.def(
      "kl_standard_normal",
      [](std::vector<double> mu, std::vector<double> log_var) {
        if (mu.size() != log_var.size() || mu.empty()) {
          throw std::invalid_argument("mu and log_var must be non-empty and equal length");
        }
        const std::size_t n = mu.size();
        VariationalPosterior<double> q{Tensor<double>({1, n}, std::move(mu)),
                                       Tensor<double>({1, n}, std::move(log_var))};
        return kl_standard_normal(q);
      },
      py::arg("mu"), py::arg("log_var"));

  m.def(
      "verify_theory",
      [](std::uint64_t seed, int models, int iters) {
        py::gil_scoped_release release;
        return exact::verify_theory(seed, models, iters).to_json();
      },
      py::arg("seed") = 7, py::arg("models") = 20, py::arg("iters") = 50,
      "Report JSON text.");

  m.def(
      "grad_check",
      [](const std::string& ops, std::uint64_t seed, double tol) {
        const auto rs = run_op_checks(ops, seed, tol);
        py::list out;
        for (const auto& r : rs) {
          py::dict d;
          d["name"] = r.report.name;
          d["max_rel_err"] = r.report.max_rel_err;
          d["tol"] = r.tol;
          d["ok"] = r.ok();
          out.append(d);
        }
        return out;
      },
      py::arg("ops") = "all", py::arg("seed") = 1, py::arg("tol") = 0.0);

  py::class_<LoadedModel>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def_property_readonly("parameter_count",
                             [](const LoadedModel& lm) { return lm.params.parameter_count(); })
      .def_property_readonly("config_json", [](const LoadedModel& lm) { return lm.config_json; })
      .def(
          "rethink",
          [](const LoadedModel& lm, const std::string& question, int T, std::uint64_t seed) {
            RethinkConfig rc = lm.rethink;
            rc.T_rethink = T;
            const Tokens prompt = Vocabulary::standard().encode_question(question);
            RethinkResult r;
            {
              py::gil_scoped_release release;
              r = rethink(lm.params, std::span<const TokenId>(prompt), rc,
                          Rng(seed).split("rethink"));
            }
            py::list rounds;
            for (std::size_t i = 0; i < r.rounds.size(); ++i) {
              const auto& rd = r.rounds[i];
              py::dict d;
              d["t"] = rd.t;
              d["trace"] = rd.trace_text;
              d["log_likelihood"] = rd.log_likelihood;
              d["best_so_far"] = r.best_so_far[i];
              d["truncated"] = rd.truncated;
              rounds.append(d);
            }
            py::dict out;
            out["rounds"] = rounds;
            out["best_round"] = r.best_round;
            out["answer"] = opt_string(r.answer);
            return out;
          },
          py::arg("question"), py::arg("T") = 8, py::arg("seed") = 1)
      .def(
          "evaluate",
          [](const LoadedModel& lm, const std::filesystem::path& data, const std::string& mode,
             int T, std::uint64_t seed, std::size_t limit) {
            EvalOptions eo;
            eo.rethink = lm.rethink;
            eo.rethink.T_rethink = T;
            if (mode == "single") eo.mode = EvalMode::single_pass;
            else if (mode == "rethink") eo.mode = EvalMode::rethink;
            else throw std::invalid_argument("mode must be 'single' or 'rethink'");
            eo.seed = seed;
            auto problems = load_jsonl(data);
            if (limit > 0 && problems.size() > limit) problems.resize(limit);
            py::gil_scoped_release release;
            return evaluate(problems, lm.params, eo).accuracy;
          },
          py::arg("data"), py::arg("mode") = "single", py::arg("T") = 8, py::arg("seed") = 1,
          py::arg("limit") = 0);
}
