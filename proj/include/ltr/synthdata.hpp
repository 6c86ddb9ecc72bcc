#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ltr/rational.hpp"

namespace ltr {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// ---- vocabulary -------------------------------------------------------------

class TokenizeError : public std::invalid_argument {
 public:
  TokenizeError(const std::string& what, std::size_t offset)
      : std::invalid_argument(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Fixed character vocabulary. Ids 0..3 are <pad>, <bos>, <eos>, <sep>; the
// remaining ids map one-to-one onto single ASCII characters.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kNumSpecial = 4;

  // The frozen build-time symbol set.
  static const Vocabulary& standard();

  // Vocabulary over `symbols` (one char each, after the specials).
  explicit Vocabulary(std::string symbols);

  std::size_t size() const { return kNumSpecial + symbols_.size(); }
  const std::string& symbols() const { return symbols_; }
  bool is_special(TokenId id) const { return id >= 0 && id < TokenId(kNumSpecial); }

  // Special tokens are never produced by tokenize(); detokenize() drops them.
  Tokens tokenize(std::string_view text) const;
  std::string detokenize(std::span<const TokenId> tokens) const;

  // <bos> question <sep>
  Tokens encode_question(std::string_view question) const;
  // <bos> question <sep> trace <eos>
  Tokens encode_example(std::string_view question, std::string_view trace) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::string symbols_;
  std::array<TokenId, 256> lookup_{};
};

// ---- problems ---------------------------------------------------------------

struct Problem {
  std::int64_t id = 0;
  std::string question;
  std::string trace;
  Rational answer;
  int n_steps = 0;

  friend bool operator==(const Problem&, const Problem&) = default;
};

struct SplitFractions {
  double train = 0.9;
  double val = 0.05;
  double test = 0.05;
};

struct GenConfig {
  std::size_t n_problems = 50000;
  int steps_min = 1;
  int steps_max = 3;
  std::int64_t operand_lo = 1;
  std::int64_t operand_hi = 9;
  // Subset of "+-*/".
  std::string operators = "+-*/";
  std::uint64_t seed = 1;
  SplitFractions split;
  // Size of the extrapolation split (n_steps = steps_max + 1).
  std::size_t n_extrap = 500;
  // Number of phrasing variants per clause, 1..3.
  int template_count = 3;
  // Intermediate values never exceed this.
  std::int64_t max_value = 999;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Dataset {
  std::vector<Problem> train, val, test, extrap;
};

// Deterministic in `cfg`. Problem i is drawn from its own stream derived from
// (seed, i), so generation can be sharded.
Dataset generate_problems(const GenConfig& cfg);

// One problem with exactly `n_steps` steps; used for the extrapolation split
// and by tests.
Problem generate_problem(const GenConfig& cfg, std::int64_t id, int n_steps);

// Recomputes every "<<a op b=c>>" of a trace left to right, checks chaining
// and the "#### x" tail, and returns the final value. nullopt when the trace
// is malformed or inconsistent.
std::optional<Rational> evaluate_trace(std::string_view trace);

// First integer/decimal literal after "####"; nullopt without a marker.
std::optional<Rational> extract_answer(std::string_view text);

// ---- JSONL ------------------------------------------------------------------

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string problem_to_json(const Problem& p);
void write_jsonl(const std::filesystem::path& path, const std::vector<Problem>& problems);
// Rejects malformed rows, naming the line number.
std::vector<Problem> load_jsonl(const std::filesystem::path& path);

}  // namespace ltr
