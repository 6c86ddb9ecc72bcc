#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltr/autodiff.hpp"
#include "ltr/rng.hpp"
#include "ltr/synthdata.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

struct ModelConfig {
  std::size_t vocab_size = 49;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 1;
  std::size_t n_dec_layers = 4;
  // Number of latent tokens.
  std::size_t K = 8;
  // 0 means d_model.
  std::size_t d_latent = 0;
  // Each predicted token depends on exactly the `window` tokens before it.
  std::size_t window = 16;
  std::size_t max_seq_len = 192;
  std::size_t ffn_mult = 4;
  double init_std = 0.02;
  // Zero the residual output projections at init.
  bool zero_init_residual = false;
  double rms_eps = 1e-6;

  std::size_t latent_dim() const { return d_latent == 0 ? d_model : d_latent; }
  // Self-attention window of each decoder layer. A predecessor is reachable
  // from slot i only through the stacked windows, so they sum to window - 1
  // (slot i holds token i and predicts token i + 1).
  std::vector<std::size_t> layer_windows() const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Effective token dependency mask: mask[i * n + j] true iff i - w <= j <= i.
std::vector<bool> build_window_mask(std::size_t n, std::size_t w);

struct EncoderLayer {
  std::size_t norm_attn, wq, wk, wv, wo, norm_ffn, w1, w2;
};

struct DecoderLayer {
  std::size_t norm_self, self_wq, self_wk, self_wv, self_wo;
  std::size_t norm_cross, cross_wq, cross_wk, cross_wv, cross_wo;
  std::size_t norm_ffn, w1, w2;
};

// Encoder parameters (alpha) and decoder parameters (beta). Parameters live in
// one flat list in a fixed order; layers refer to them by index.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  static ModelParams init(const ModelConfig& cfg, Rng rng);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  // Index of the first decoder parameter; [0, n_alpha) is the encoder.
  std::size_t n_alpha() const { return n_alpha_; }
  std::size_t parameter_count() const;
  // nullptr if absent.
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const;

  std::size_t slot_emb = 0, tok_emb = 0, pos_emb = 0, final_norm = 0, w_out = 0;
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;

 private:
  template <typename U>
  friend class ModelParams;
  std::size_t add(std::string name, Tensor<T> value);

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::size_t n_alpha_ = 0;
};

extern template class ModelParams<float>;
extern template class ModelParams<double>;

// FNV-1a over every parameter's name, shape and value bytes.
template <typename T>
std::uint64_t theta_hash(const ModelParams<T>& p);

// Graph handles for every parameter, in params() order.
template <typename T>
std::vector<Var> bind_trainable(Graph<T>& g, ModelParams<T>& p);
template <typename T>
std::vector<Var> bind_frozen(Graph<T>& g, const ModelParams<T>& p);

// z = U_alpha(z0) for z0 of shape [K x d_latent].
template <typename T>
Var encode_prior(Graph<T>& g, const ModelParams<T>& p, std::span<const Var> theta, Var z0);

struct LogLikelihoodVars {
  // Sum of scored log-probabilities, shape {1}.
  Var total;
  // Log-probability of tokens s .. n-1 with s = max(score_from, 1).
  Var per_token;
};

// log p(x[n] | z, x[n-w .. n-1]) for n >= max(score_from, 1).
template <typename T>
LogLikelihoodVars decoder_log_likelihood(Graph<T>& g, const ModelParams<T>& p,
                                         std::span<const Var> theta,
                                         std::span<const TokenId> x, Var z,
                                         std::size_t score_from);

struct LogLikelihood {
  double total = 0;
  std::vector<double> per_token;
};

template <typename T>
Tensor<T> encode_prior(const ModelParams<T>& p, const Tensor<T>& z0);

template <typename T>
LogLikelihood decoder_log_likelihood(const ModelParams<T>& p, std::span<const TokenId> x,
                                     const Tensor<T>& z, std::size_t score_from);

struct DecodeConfig {
  double temperature = 0.0;
  std::size_t max_new_tokens = 96;
};

struct SampledTrace {
  // Generated tokens after the prompt, including <eos> when produced.
  Tokens tokens;
  bool ended = false;
  bool truncated = false;
};

// Autoregressive continuation of `prompt` (<bos> question <sep>). Temperature 0
// is argmax with lowest-id tie-break; otherwise draws from `rng`.
template <typename T>
SampledTrace sample_trace(const ModelParams<T>& p, std::span<const TokenId> prompt,
                          const Tensor<T>& z, const DecodeConfig& decode, Rng& rng);

// Incremental decoder with per-layer ring buffers. Produces the same
// next-token logits as decoder_log_likelihood up to rounding.
template <typename T>
class DecoderCache {
 public:
  DecoderCache(const ModelParams<T>& p, const Tensor<T>& z);
  // Feeds the token at the next position; returns logits for the one after.
  const std::vector<T>& push(TokenId token);
  std::size_t position() const { return pos_; }

 private:
  struct Ring {
    std::size_t cap = 0;
    AlignedVector<T> k, v;
  };
  const ModelParams<T>& p_;
  std::vector<std::size_t> windows_;
  std::vector<AlignedVector<T>> cross_k_, cross_v_;
  std::vector<Ring> rings_;
  std::vector<T> logits_;
  std::size_t pos_ = 0;
};

}  // namespace ltr
