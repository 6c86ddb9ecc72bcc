#include "ltr/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include "ltr/rng.hpp"

namespace ltr {

using json = nlohmann::json;

// ---- vocabulary -------------------------------------------------------------

namespace {

constexpr std::string_view kStandardSymbols =
    "0123456789"
    "+-*/="
    "<>#.,? "
    "abcdefghiklmnopqrstuvwy";

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v{std::string(kStandardSymbols)};
  return v;
}

Vocabulary::Vocabulary(std::string symbols) : symbols_(std::move(symbols)) {
  lookup_.fill(-1);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto c = static_cast<unsigned char>(symbols_[i]);
    if (c >= 128) throw std::invalid_argument("vocabulary symbols must be ASCII");
    if (lookup_[c] != -1) {
      throw std::invalid_argument(std::string("duplicate vocabulary symbol '") +
                                  symbols_[i] + "'");
    }
    lookup_[c] = TokenId(kNumSpecial + i);
  }
}

Tokens Vocabulary::tokenize(std::string_view text) const {
  Tokens out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const TokenId id = lookup_[static_cast<unsigned char>(text[i])];
    if (id < 0) {
      throw TokenizeError("unknown symbol at byte offset " + std::to_string(i), i);
    }
    out.push_back(id);
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || std::size_t(t) >= size()) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    }
    if (is_special(t)) continue;
    out.push_back(symbols_[std::size_t(t) - kNumSpecial]);
  }
  return out;
}

Tokens Vocabulary::encode_question(std::string_view question) const {
  Tokens out{kBos};
  const Tokens q = tokenize(question);
  out.insert(out.end(), q.begin(), q.end());
  out.push_back(kSep);
  return out;
}

Tokens Vocabulary::encode_example(std::string_view question,
                                  std::string_view trace) const {
  Tokens out = encode_question(question);
  const Tokens r = tokenize(trace);
  out.insert(out.end(), r.begin(), r.end());
  out.push_back(kEos);
  return out;
}

// ---- generator --------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 8> kNames = {"ann", "bob", "cal", "dee",
                                                    "eve", "fay", "gus", "hal"};
constexpr std::array<std::string_view, 6> kItems = {"pens", "cards", "coins",
                                                    "beads", "figs", "eggs"};

// {n} name, {i} item, {v} number
constexpr std::array<std::string_view, 3> kOpening = {"{n} has {v} {i}.", "{n} owns {v} {i}.",
                                                      "{n} got {v} {i}."};
constexpr std::array<std::string_view, 3> kAdd = {" gets {v} more.", " finds {v}.",
                                                  " adds {v}."};
constexpr std::array<std::string_view, 3> kSub = {" loses {v}.", " gives {v} away.",
                                                  " drops {v}."};
constexpr std::array<std::string_view, 3> kMul = {" multiplies by {v}.", " gets {v} times more.",
                                                  " grows {v} fold."};
constexpr std::array<std::string_view, 3> kDiv = {" divides by {v}.", " splits {v} ways.",
                                                  " keeps one of {v} parts."};
constexpr std::array<std::string_view, 3> kClosing = {" how many?", " how many {i}?",
                                                      " how many now?"};

std::string fill(std::string_view tmpl, std::string_view name, std::string_view item,
                 std::int64_t value) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      switch (tmpl[i + 1]) {
        case 'n': out += name; break;
        case 'i': out += item; break;
        case 'v': out += std::to_string(value); break;
        default: out += tmpl.substr(i, 3);
      }
      i += 2;
    } else {
      out.push_back(tmpl[i]);
    }
  }
  return out;
}

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& options, int count, Rng& rng) {
  const auto n = std::min<std::int64_t>(count, std::int64_t(N));
  return options[std::size_t(rng.uniform_int(0, n - 1))];
}

struct Step {
  char op;
  std::int64_t lhs, rhs, result;
};

// Valid right operands for `op` applied to `cur`.
std::vector<std::int64_t> candidates(const GenConfig& cfg, char op, std::int64_t cur) {
  std::vector<std::int64_t> out;
  for (std::int64_t b = cfg.operand_lo; b <= cfg.operand_hi; ++b) {
    std::int64_t r = 0;
    switch (op) {
      case '+': r = cur + b; break;
      case '-':
        r = cur - b;
        if (r < 1) continue;
        break;
      case '*': r = cur * b; break;
      case '/':
        if (b == 0 || cur % b != 0) continue;
        r = cur / b;
        break;
      default: continue;
    }
    if (r > cfg.max_value) continue;
    out.push_back(b);
  }
  return out;
}

std::int64_t apply(char op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    case '*': return a * b;
    default: return a / b;
  }
}

}  // namespace

void GenConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("data config: " + m); };
  if (steps_min < 1 || steps_max < steps_min) fail("need 1 <= steps_min <= steps_max");
  if (operand_hi < operand_lo) fail("operand_range is empty");
  if (operand_lo < 0) fail("operand_range must be non-negative");
  if (operators.empty()) fail("operators must be nonempty");
  for (char c : operators) {
    if (std::string_view("+-*/").find(c) == std::string_view::npos) {
      fail(std::string("unknown operator '") + c + "'");
    }
  }
  if (split.train < 0 || split.val < 0 || split.test < 0 ||
      std::abs(split.train + split.val + split.test - 1.0) > 1e-9) {
    fail("split fractions must be non-negative and sum to 1");
  }
  if (template_count < 1 || template_count > 3) fail("template_count must be in 1..3");
  if (max_value < operand_lo || max_value < 1) fail("max_value below the operand range");
}

Problem generate_problem(const GenConfig& cfg, std::int64_t id, int n_steps) {
  Rng rng = Rng(cfg.seed).split("problem").split(std::uint64_t(id));
  constexpr int kMaxRestarts = 1000;
  const std::int64_t start_lo = std::max<std::int64_t>(cfg.operand_lo, 1);
  if (start_lo > cfg.operand_hi) {
    throw std::invalid_argument("data config: operand_range admits no positive start value");
  }
  for (int attempt = 0; attempt < kMaxRestarts; ++attempt) {
    std::int64_t cur = rng.uniform_int(start_lo, cfg.operand_hi);
    const std::int64_t start = cur;
    std::vector<Step> steps;
    bool stuck = false;
    for (int s = 0; s < n_steps && !stuck; ++s) {
      std::string ops = cfg.operators;
      std::shuffle(ops.begin(), ops.end(), rng);
      stuck = true;
      for (char op : ops) {
        const auto cands = candidates(cfg, op, cur);
        if (cands.empty()) continue;
        const std::int64_t b = cands[std::size_t(rng.uniform_int(0, std::int64_t(cands.size()) - 1))];
        const std::int64_t r = apply(op, cur, b);
        steps.push_back({op, cur, b, r});
        cur = r;
        stuck = false;
        break;
      }
    }
    if (stuck) continue;

    const std::string_view name = kNames[std::size_t(rng.uniform_int(0, kNames.size() - 1))];
    const std::string_view item = kItems[std::size_t(rng.uniform_int(0, kItems.size() - 1))];
    Problem p;
    p.id = id;
    p.n_steps = n_steps;
    p.question = fill(pick(kOpening, cfg.template_count, rng), name, item, start);
    std::string trace;
    for (const Step& st : steps) {
      std::string_view tmpl;
      switch (st.op) {
        case '+': tmpl = pick(kAdd, cfg.template_count, rng); break;
        case '-': tmpl = pick(kSub, cfg.template_count, rng); break;
        case '*': tmpl = pick(kMul, cfg.template_count, rng); break;
        default: tmpl = pick(kDiv, cfg.template_count, rng); break;
      }
      p.question += fill(tmpl, name, item, st.rhs);
      if (!trace.empty()) trace += ' ';
      trace += "<<" + std::to_string(st.lhs) + st.op + std::to_string(st.rhs) + "=" +
               std::to_string(st.result) + ">>";
    }
    p.question += fill(pick(kClosing, cfg.template_count, rng), name, item, 0);
    p.answer = Rational(cur);
    p.trace = trace + " #### " + p.answer.to_string();
    return p;
  }
  throw std::invalid_argument(
      "data config: impossible constraints, no valid " + std::to_string(n_steps) +
      "-step chain with operators '" + cfg.operators + "' in [" +
      std::to_string(cfg.operand_lo) + ", " + std::to_string(cfg.operand_hi) + "]");
}

Dataset generate_problems(const GenConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng steps_rng = root.split("steps");
  std::vector<Problem> all;
  all.reserve(cfg.n_problems);
  for (std::size_t i = 0; i < cfg.n_problems; ++i) {
    Rng r = steps_rng.split(std::uint64_t(i));
    const int n = int(r.uniform_int(cfg.steps_min, cfg.steps_max));
    all.push_back(generate_problem(cfg, std::int64_t(i), n));
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng shuffle_rng = root.split("split");
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto n = all.size();
  const auto n_train = std::size_t(double(n) * cfg.split.train);
  const auto n_val = std::min(n - n_train, std::size_t(double(n) * cfg.split.val));

  Dataset ds;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? ds.train : (k < n_train + n_val ? ds.val : ds.test);
    dst.push_back(all[order[k]]);
  }
  auto by_id = [](const Problem& a, const Problem& b) { return a.id < b.id; };
  std::sort(ds.train.begin(), ds.train.end(), by_id);
  std::sort(ds.val.begin(), ds.val.end(), by_id);
  std::sort(ds.test.begin(), ds.test.end(), by_id);
  for (std::size_t i = 0; i < cfg.n_extrap; ++i) {
    ds.extrap.push_back(
        generate_problem(cfg, std::int64_t(cfg.n_problems + i), cfg.steps_max + 1));
  }
  return ds;
}

// ---- trace parsing ----------------------------------------------------------

namespace {

struct Cursor {
  std::string_view s;
  std::size_t i = 0;

  bool eat(std::string_view lit) {
    if (s.substr(i, lit.size()) == lit) {
      i += lit.size();
      return true;
    }
    return false;
  }
  void skip_spaces() {
    while (i < s.size() && s[i] == ' ') ++i;
  }
  // Optional sign, digits, optional fraction.
  std::optional<Rational> number() {
    const std::size_t start = i;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
    const std::size_t digits = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == digits) {
      i = start;
      return std::nullopt;
    }
    if (i + 1 < s.size() && s[i] == '.' &&
        std::isdigit(static_cast<unsigned char>(s[i + 1]))) {
      ++i;
      while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    }
    auto r = Rational::parse(s.substr(start, i - start));
    if (!r) i = start;
    return r;
  }
};

}  // namespace

std::optional<Rational> evaluate_trace(std::string_view trace) {
  Cursor c{trace};
  std::optional<Rational> prev;
  int n_eq = 0;
  while (true) {
    c.skip_spaces();
    if (!c.eat("<<")) break;
    auto a = c.number();
    if (!a || c.i >= trace.size()) return std::nullopt;
    const char op = trace[c.i++];
    auto b = c.number();
    if (!b || !c.eat("=")) return std::nullopt;
    auto r = c.number();
    if (!r || !c.eat(">>")) return std::nullopt;
    Rational expect;
    try {
      switch (op) {
        case '+': expect = *a + *b; break;
        case '-': expect = *a - *b; break;
        case '*': expect = *a * *b; break;
        case '/': expect = *a / *b; break;
        default: return std::nullopt;
      }
    } catch (const std::exception&) {
      return std::nullopt;
    }
    if (expect != *r) return std::nullopt;
    if (prev && *prev != *a) return std::nullopt;
    prev = r;
    ++n_eq;
  }
  if (n_eq == 0 || !c.eat("####")) return std::nullopt;
  c.skip_spaces();
  auto ans = c.number();
  if (!ans || c.i != trace.size() || *ans != *prev) return std::nullopt;
  return ans;
}

std::optional<Rational> extract_answer(std::string_view text) {
  const auto pos = text.find("####");
  if (pos == std::string_view::npos) return std::nullopt;
  Cursor c{text, pos + 4};
  while (c.i < text.size()) {
    c.skip_spaces();
    if (c.i >= text.size()) break;
    const std::size_t group = c.i;
    if (auto r = c.number()) {
      const bool ends = c.i == text.size() || text[c.i] == ' ';
      if (ends) return r;
    }
    c.i = group;
    while (c.i < text.size() && text[c.i] != ' ') ++c.i;
  }
  return std::nullopt;
}

// ---- JSONL ------------------------------------------------------------------

std::string problem_to_json(const Problem& p) {
  json j;
  j["id"] = p.id;
  j["question"] = p.question;
  j["trace"] = p.trace;
  j["answer"] = p.answer.to_string();
  j["n_steps"] = p.n_steps;
  return j.dump();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Problem>& problems) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const Problem& p : problems) out << problem_to_json(p) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Problem> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  static const std::vector<std::string> kFields = {"answer", "id", "n_steps", "question",
                                                   "trace"};
  std::vector<Problem> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& m) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + m);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail("row is not an object");
    for (const auto& f : kFields) {
      if (!j.contains(f)) fail("missing field \"" + f + "\"");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(kFields.begin(), kFields.end(), it.key()) == kFields.end()) {
        fail("unexpected field \"" + it.key() + "\"");
      }
    }
    if (!j["id"].is_number_integer()) fail("\"id\" must be an integer");
    if (!j["question"].is_string()) fail("\"question\" must be a string");
    if (!j["trace"].is_string()) fail("\"trace\" must be a string");
    if (!j["answer"].is_string()) fail("\"answer\" must be a decimal string");
    if (!j["n_steps"].is_number_integer()) fail("\"n_steps\" must be an integer");
    Problem p;
    p.id = j["id"].get<std::int64_t>();
    p.question = j["question"].get<std::string>();
    p.trace = j["trace"].get<std::string>();
    p.n_steps = j["n_steps"].get<int>();
    auto ans = Rational::parse(j["answer"].get<std::string>());
    if (!ans) fail("\"answer\" is not an exact rational literal");
    p.answer = *ans;
    auto traced = evaluate_trace(p.trace);
    if (!traced) fail("trace equations do not evaluate consistently");
    if (*traced != p.answer) fail("trace result " + traced->to_string() +
                                  " differs from answer " + p.answer.to_string());
    const auto n_eq = std::size_t(std::count(p.trace.begin(), p.trace.end(), '='));
    if (p.n_steps < 1 || n_eq != std::size_t(p.n_steps)) {
      fail("n_steps does not match the number of equations");
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ltr
