#include <gtest/gtest.h>

#include <cmath>

#include "ltr/grad_check.hpp"
#include "ltr/model.hpp"

using namespace ltr;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = Vocabulary::standard().size();
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.K = 3;
  c.window = 5;
  c.max_seq_len = 40;
  c.ffn_mult = 2;
  c.init_std = 0.3;
  return c;
}

Tensor<double> normal_tensor(Shape s, Rng rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  rng.fill_normal(t.mutable_data());
  for (double& v : t.mutable_data()) v *= scale;
  return t;
}

Tokens random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  Tokens t(n);
  for (auto& x : t) x = TokenId(rng.uniform_int(4, std::int64_t(vocab) - 1));
  t[0] = Vocabulary::kBos;
  return t;
}

}  // namespace

TEST(ModelConfig, LayerWindowsSumToReach) {
  ModelConfig c;
  EXPECT_EQ(c.layer_windows(), (std::vector<std::size_t>{4, 4, 4, 3}));
  c.window = 1;
  EXPECT_EQ(c.layer_windows(), (std::vector<std::size_t>{0, 0, 0, 0}));
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelConfig, DeskParameterCount) {
  ModelConfig c;
  c.vocab_size = Vocabulary::standard().size();
  const auto p = ModelParams<float>::init(c, Rng(1));
  EXPECT_GE(p.parameter_count(), 1'000'000u);
  EXPECT_LE(p.parameter_count(), 2'000'000u);
  EXPECT_NE(p.find("dec.layer3.cross.wq"), nullptr);
  EXPECT_EQ(p.params()[p.n_alpha()].name, "dec.tok_emb");
}

TEST(WindowMask, Examples) {
  const auto full = build_window_mask(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(full[i * 4 + j], j <= i);
  }
  const auto m1 = build_window_mask(3, 1);
  EXPECT_EQ(m1, (std::vector<bool>{1, 0, 0, 1, 1, 0, 0, 1, 1}));
  const std::size_t n = 9, w = 3;
  const auto m = build_window_mask(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) c += m[i * n + j];
    EXPECT_EQ(c, std::min(i + 1, w + 1));
  }
}

TEST(Encoder, ShapeDeterminismAndIdentity) {
  ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(3));
  const auto z0 = normal_tensor({c.K, c.d_model}, Rng(4));
  const auto z = encode_prior(p, z0);
  EXPECT_EQ(z.shape(), z0.shape());
  EXPECT_EQ(encode_prior(p, z0), z);
  EXPECT_NE(z, z0);
  c.zero_init_residual = true;
  const auto pid = ModelParams<double>::init(c, Rng(3));
  EXPECT_EQ(encode_prior(pid, z0), z0);
  EXPECT_THROW(encode_prior(p, Tensor<double>({c.K + 1, c.d_model})), ShapeError);
}

TEST(Decoder, UniformHeadGivesLogV) {
  const ModelConfig c = tiny_config();
  auto p = ModelParams<double>::init(c, Rng(5));
  p[p.w_out].value.fill(0.0);
  const Tokens x = {Vocabulary::kBos, 10, 11, 12};
  const auto z = normal_tensor({c.K, c.d_model}, Rng(6));
  const auto ll = decoder_log_likelihood(p, x, z, 3);
  ASSERT_EQ(ll.per_token.size(), 1u);
  EXPECT_NEAR(ll.total, -std::log(double(c.vocab_size)), 1e-12);
}

TEST(Decoder, TotalIsSumOfPerToken) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(7));
  Rng rng(8);
  const Tokens x = random_tokens(30, c.vocab_size, rng);
  const auto z = normal_tensor({c.K, c.d_model}, Rng(9));
  for (std::size_t from : {0u, 1u, 7u, 29u}) {
    const auto ll = decoder_log_likelihood(p, x, z, from);
    EXPECT_EQ(ll.per_token.size(), 30 - std::max<std::size_t>(from, 1));
    double s = 0;
    for (double v : ll.per_token) s += v;
    EXPECT_NEAR(ll.total, s, 1e-10);
  }
  // scoring a suffix reports the same per-token values as scoring everything
  const auto all = decoder_log_likelihood(p, x, z, 1);
  const auto tail = decoder_log_likelihood(p, x, z, 20);
  for (std::size_t i = 0; i < tail.per_token.size(); ++i) {
    EXPECT_NEAR(tail.per_token[i], all.per_token[19 + i], 1e-12);
  }
  EXPECT_THROW(decoder_log_likelihood(p, x, z, 30), std::invalid_argument);
  EXPECT_THROW(decoder_log_likelihood(p, Tokens(41, 5), z, 1), std::invalid_argument);
}

TEST(Decoder, WindowLocality) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(10));
  Rng rng(11);
  const auto z = normal_tensor({c.K, c.d_model}, Rng(12));
  const std::size_t n = 24, w = c.window;
  const Tokens x = random_tokens(n, c.vocab_size, rng);
  const auto base = decoder_log_likelihood(p, x, z, 1);
  for (std::size_t j = 1; j < n; ++j) {
    Tokens y = x;
    y[j] = TokenId(4 + (y[j] - 4 + 7) % TokenId(c.vocab_size - 4));
    const auto pert = decoder_log_likelihood(p, y, z, 1);
    for (std::size_t pos = 1; pos < n; ++pos) {
      const double diff = std::abs(pert.per_token[pos - 1] - base.per_token[pos - 1]);
      if (j + w < pos || j > pos) {
        EXPECT_LE(diff, 1e-12) << "pos " << pos << " perturbed " << j;
      } else if (j < pos) {
        // inside the window the token must matter
        EXPECT_GT(diff, 1e-9) << "pos " << pos << " perturbed " << j;
      }
    }
  }
}

TEST(Decoder, CacheMatchesGraph) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(13));
  Rng rng(14);
  const Tokens x = random_tokens(c.max_seq_len, c.vocab_size, rng);
  const auto z = normal_tensor({c.K, c.d_model}, Rng(15));
  const auto ll = decoder_log_likelihood(p, x, z, 1);
  DecoderCache<double> cache(p, z);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const auto& logits = cache.push(x[i]);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0;
    for (double v : logits) s += std::exp(v - mx);
    const double lp = logits[std::size_t(x[i + 1])] - mx - std::log(s);
    EXPECT_NEAR(lp, ll.per_token[i], 1e-10) << i;
  }
  cache.push(x.back());
  EXPECT_THROW(cache.push(x.back()), std::out_of_range);
}

TEST(Decoder, CrossAttentionDependsOnEveryThought) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(16));
  Rng rng(17);
  const Tokens x = random_tokens(12, c.vocab_size, rng);
  Graph<double> g;
  const auto th = bind_frozen(g, p);
  const Var z = g.leaf(normal_tensor({c.K, c.d_model}, Rng(18)), true);
  const auto ll = decoder_log_likelihood(g, p, th, x, z, 1);
  g.backward(ll.total);
  const auto& gz = g.grad(z);
  for (std::size_t k = 0; k < c.K; ++k) {
    double norm = 0;
    for (std::size_t j = 0; j < c.d_model; ++j) norm += gz.at(k, j) * gz.at(k, j);
    EXPECT_GT(norm, 0.0) << "thought " << k;
  }
}

TEST(Sampling, GreedyDeterministicAndSeeded) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(19));
  const auto z = normal_tensor({c.K, c.d_model}, Rng(20));
  const Tokens prompt = Vocabulary::standard().encode_question("ann has 3 pens.");
  DecodeConfig greedy{0.0, 10};
  Rng r1(1), r2(2);
  const auto a = sample_trace(p, prompt, z, greedy, r1);
  const auto b = sample_trace(p, prompt, z, greedy, r2);
  EXPECT_EQ(a.tokens, b.tokens);
  DecodeConfig hot{1.0, 10};
  Rng s1(5), s2(5);
  const auto c1 = sample_trace(p, prompt, z, hot, s1);
  const auto c2 = sample_trace(p, prompt, z, hot, s2);
  EXPECT_EQ(c1.tokens, c2.tokens);
  for (const auto* t : {&a, &c1}) {
    EXPECT_LE(t->tokens.size(), 10u);
    EXPECT_TRUE(t->ended != t->truncated);
    if (t->ended) EXPECT_EQ(t->tokens.back(), Vocabulary::kEos);
  }
}

TEST(Sampling, GreedyPicksArgmaxOfGraphLogits) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(21));
  const auto z = normal_tensor({c.K, c.d_model}, Rng(22));
  const Tokens prompt = Vocabulary::standard().encode_question("bob got 2 figs.");
  Rng rng(0);
  const auto tr = sample_trace(p, prompt, z, DecodeConfig{0.0, 6}, rng);
  Tokens seq = prompt;
  for (TokenId t : tr.tokens) {
    // the greedy token has log-prob at least that of every alternative
    const std::size_t pos = seq.size();
    seq.push_back(t);
    const double chosen = decoder_log_likelihood(p, seq, z, pos).total;
    for (TokenId alt = 0; alt < TokenId(c.vocab_size); ++alt) {
      Tokens other = seq;
      other.back() = alt;
      EXPECT_LE(decoder_log_likelihood(p, other, z, pos).total, chosen + 1e-12);
    }
  }
  EXPECT_THROW(sample_trace(p, Tokens(41, 5), z, DecodeConfig{}, rng), std::invalid_argument);
}

TEST(Sampling, RespectsMaxSeqLen) {
  ModelConfig c = tiny_config();
  c.max_seq_len = 20;
  auto p = ModelParams<double>::init(c, Rng(23));
  // never emit <eos>
  for (std::size_t r = 0; r < c.d_model; ++r) p[p.w_out].value.at(r, Vocabulary::kEos) = 0;
  const auto z = normal_tensor({c.K, c.d_model}, Rng(24));
  const Tokens prompt = Vocabulary::standard().encode_question("ann has 3.");
  Rng rng(0);
  const auto tr = sample_trace(p, prompt, z, DecodeConfig{0.0, 100}, rng);
  if (!tr.ended) {
    EXPECT_TRUE(tr.truncated);
    EXPECT_EQ(prompt.size() + tr.tokens.size(), c.max_seq_len);
  }
}

TEST(GradCheck, EncoderWrtZ0) {
  const ModelConfig c = tiny_config();
  const auto p = ModelParams<double>::init(c, Rng(25));
  const auto z0 = normal_tensor({c.K, c.d_model}, Rng(26));
  const auto w = normal_tensor({c.K, c.d_model}, Rng(27));
  const auto rep = grad_check(
      "encode_prior",
      [&](Graph<double>& g, std::span<const Var> in) {
        const auto th = bind_frozen(g, p);
        return sum(g, mul(g, encode_prior(g, p, th, in[0]), g.view(w)));
      },
      {z0}, {"z0"});
  EXPECT_LE(rep.max_rel_err, 1e-5) << rep.worst_input << "[" << rep.worst_index << "]";
}

TEST(GradCheck, DecoderWrtParams) {
  ModelConfig c = tiny_config();
  c.init_std = 0.2;
  auto p = ModelParams<double>::init(c, Rng(28));
  Rng rng(29);
  const Tokens x = random_tokens(14, c.vocab_size, rng);
  const auto z0 = normal_tensor({c.K, c.d_model}, Rng(30));
  std::vector<Parameter<double>*> ptrs;
  for (auto& q : p.params()) ptrs.push_back(&q);
  const auto rep = grad_check_params(
      "log_likelihood",
      [&](Graph<double>& g) {
        const auto th = bind_trainable(g, p);
        const Var z = encode_prior(g, p, th, g.view(z0));
        return decoder_log_likelihood(g, p, th, x, z, 1).total;
      },
      ptrs, 6, Rng(31));
  EXPECT_LE(rep.max_rel_err, 1e-5) << rep.worst_input << "[" << rep.worst_index << "]";
}
