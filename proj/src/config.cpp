#include "ltr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace ltr {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const json& v = *it;
    const std::string name = where_.empty() ? key : where_ + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      out = v.get<V>();
    } else if constexpr (std::is_unsigned_v<V>) {
      if (!v.is_number_unsigned()) throw ConfigError(name + ": expected a non-negative integer");
      out = v.get<V>();
    } else {
      if (!v.is_number_integer()) throw ConfigError(name + ": expected an integer");
      out = v.get<V>();
    }
  }

  // Nested object; returns nullptr when absent.
  const json* object(const char* key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!known_.count(k)) throw ConfigError("unknown key '" + child(k.c_str()) + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : "'" + where_ + "'"; }

  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

json fast_json(const FastInferConfig& f) {
  return {{"T_fast", f.T_fast}, {"lr", f.lr}, {"n_samples", f.n_samples}};
}

FastInferConfig fast_from(const json& j, const std::string& where) {
  FastInferConfig f;
  Reader r(j, where);
  r.get("T_fast", f.T_fast);
  r.get("lr", f.lr);
  r.get("n_samples", f.n_samples);
  r.finish();
  return f;
}

// Wraps validate() failures from the domain types.
template <typename C>
void checked(const C& c, const std::string& where) {
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
          {"n_heads", c.n_heads},         {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers}, {"K", c.K},
          {"d_latent", c.d_latent},       {"window", c.window},
          {"max_seq_len", c.max_seq_len}, {"ffn_mult", c.ffn_mult},
          {"init_std", c.init_std},       {"zero_init_residual", c.zero_init_residual},
          {"rms_eps", c.rms_eps}};
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_slow", c.lr_slow},
          {"fast", fast_json(c.fast)},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"eval_size", c.eval_size},
          {"max_steps", c.max_steps},
          {"time_budget_s", c.time_budget_s},
          {"threads", c.threads},
          {"deterministic", c.deterministic},
          {"check_theta", c.check_theta}};
}

json to_json(const RethinkConfig& c) {
  return {{"T_rethink", c.T_rethink},
          {"fast", fast_json(c.fast)},
          {"temperature", c.decode.temperature},
          {"max_new_tokens", c.decode.max_new_tokens},
          {"first_round_greedy", c.first_round_greedy},
          {"warm_start", c.warm_start},
          {"reflect_trace_only", c.reflect_trace_only},
          {"length_normalize", c.length_normalize},
          {"check_theta", c.check_theta}};
}

json to_json(const GenConfig& c) {
  return {{"n_problems", c.n_problems},
          {"steps_min", c.steps_min},
          {"steps_max", c.steps_max},
          {"operand_lo", c.operand_lo},
          {"operand_hi", c.operand_hi},
          {"operators", c.operators},
          {"seed", c.seed},
          {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
          {"n_extrap", c.n_extrap},
          {"template_count", c.template_count},
          {"max_value", c.max_value}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"rethink", to_json(c.rethink)},
          {"data", to_json(c.data)},
          {"paths", {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Reader r(j, "model");
  r.get("vocab_size", c.vocab_size);
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("n_enc_layers", c.n_enc_layers);
  r.get("n_dec_layers", c.n_dec_layers);
  r.get("K", c.K);
  r.get("d_latent", c.d_latent);
  r.get("window", c.window);
  r.get("max_seq_len", c.max_seq_len);
  r.get("ffn_mult", c.ffn_mult);
  r.get("init_std", c.init_std);
  r.get("zero_init_residual", c.zero_init_residual);
  r.get("rms_eps", c.rms_eps);
  r.finish();
  checked(c, "model");
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("lr_slow", c.lr_slow);
  if (const json* f = r.object("fast")) c.fast = fast_from(*f, "train.fast");
  r.get("grad_clip", c.grad_clip);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("eval_every", c.eval_every);
  r.get("eval_size", c.eval_size);
  r.get("max_steps", c.max_steps);
  r.get("time_budget_s", c.time_budget_s);
  r.get("threads", c.threads);
  r.get("deterministic", c.deterministic);
  r.get("check_theta", c.check_theta);
  r.finish();
  checked(c, "train");
  return c;
}

RethinkConfig rethink_config_from_json(const json& j) {
  RethinkConfig c;
  Reader r(j, "rethink");
  r.get("T_rethink", c.T_rethink);
  if (const json* f = r.object("fast")) c.fast = fast_from(*f, "rethink.fast");
  r.get("temperature", c.decode.temperature);
  r.get("max_new_tokens", c.decode.max_new_tokens);
  r.get("first_round_greedy", c.first_round_greedy);
  r.get("warm_start", c.warm_start);
  r.get("reflect_trace_only", c.reflect_trace_only);
  r.get("length_normalize", c.length_normalize);
  r.get("check_theta", c.check_theta);
  r.finish();
  checked(c, "rethink");
  return c;
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  Reader r(j, "data");
  r.get("n_problems", c.n_problems);
  r.get("steps_min", c.steps_min);
  r.get("steps_max", c.steps_max);
  r.get("operand_lo", c.operand_lo);
  r.get("operand_hi", c.operand_hi);
  r.get("operators", c.operators);
  r.get("seed", c.seed);
  if (const json* s = r.object("split")) {
    Reader sr(*s, "data.split");
    sr.get("train", c.split.train);
    sr.get("val", c.split.val);
    sr.get("test", c.split.test);
    sr.finish();
  }
  r.get("n_extrap", c.n_extrap);
  r.get("template_count", c.template_count);
  r.get("max_value", c.max_value);
  r.finish();
  checked(c, "data");
  return c;
}

void RunConfig::validate() const {
  checked(model, "model");
  checked(train, "train");
  checked(rethink, "rethink");
  checked(data, "data");
  if (model.vocab_size != Vocabulary::standard().size()) {
    throw ConfigError("model.vocab_size: must equal the vocabulary size " +
                      std::to_string(Vocabulary::standard().size()));
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  if (const json* s = r.object("model")) c.model = model_config_from_json(*s);
  if (const json* s = r.object("train")) c.train = train_config_from_json(*s);
  if (const json* s = r.object("rethink")) c.rethink = rethink_config_from_json(*s);
  if (const json* s = r.object("data")) c.data = gen_config_from_json(*s);
  if (const json* s = r.object("paths")) {
    Reader pr(*s, "paths");
    pr.get("data_dir", c.paths.data_dir);
    pr.get("out_dir", c.paths.out_dir);
    pr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace ltr
