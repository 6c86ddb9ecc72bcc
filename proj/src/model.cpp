#include "ltr/model.hpp"

#include <numeric>
#include <stdexcept>

namespace ltr {

// ---- config -----------------------------------------------------------------

std::vector<std::size_t> ModelConfig::layer_windows() const {
  std::vector<std::size_t> out(n_dec_layers, 0);
  const std::size_t reach = window - 1;
  for (std::size_t l = 0; l < n_dec_layers; ++l) {
    out[l] = reach / n_dec_layers + (l < reach % n_dec_layers ? 1 : 0);
  }
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (vocab_size < Vocabulary::kNumSpecial + 1) fail("vocab_size too small");
  if (d_model == 0) fail("d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (latent_dim() % n_heads != 0) fail("d_latent must be divisible by n_heads");
  if (n_dec_layers == 0) fail("n_dec_layers must be positive");
  if (K == 0) fail("K must be at least 1");
  if (window == 0) fail("window must be at least 1");
  if (max_seq_len < window) fail("max_seq_len must be >= window");
  if (ffn_mult == 0) fail("ffn_mult must be positive");
  if (!(init_std > 0)) fail("init_std must be positive");
  if (!(rms_eps > 0)) fail("rms_eps must be positive");
}

std::vector<bool> build_window_mask(std::size_t n, std::size_t w) {
  std::vector<bool> mask(n * n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = (i > w ? i - w : 0); j <= i; ++j) mask[i * n + j] = true;
  }
  return mask;
}

// ---- parameters -------------------------------------------------------------

template <typename T>
std::size_t ModelParams<T>::add(std::string name, Tensor<T> value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, Rng rng) {
  cfg.validate();
  ModelParams p;
  p.cfg_ = cfg;
  const std::size_t d = cfg.d_model, dl = cfg.latent_dim();
  const T std_ = T(cfg.init_std);
  auto normal = [&](const std::string& name, Shape shape) {
    Tensor<T> t(std::move(shape));
    Rng r = rng.split(name);
    r.fill_normal(t.mutable_data());
    for (T& v : t.mutable_data()) v *= std_;
    return p.add(name, std::move(t));
  };
  auto residual = [&](const std::string& name, Shape shape) {
    if (cfg.zero_init_residual) return p.add(name, Tensor<T>(std::move(shape)));
    return normal(name, std::move(shape));
  };
  auto ones = [&](const std::string& name, std::size_t n) {
    return p.add(name, Tensor<T>::full({n}, T(1)));
  };

  p.slot_emb = cfg.zero_init_residual ? p.add("enc.slot_emb", Tensor<T>({cfg.K, dl}))
                                      : normal("enc.slot_emb", {cfg.K, dl});
  for (std::size_t l = 0; l < cfg.n_enc_layers; ++l) {
    const std::string pre = "enc.layer" + std::to_string(l) + ".";
    EncoderLayer L{};
    L.norm_attn = ones(pre + "attn.norm", dl);
    L.wq = normal(pre + "attn.wq", {dl, dl});
    L.wk = normal(pre + "attn.wk", {dl, dl});
    L.wv = normal(pre + "attn.wv", {dl, dl});
    L.wo = residual(pre + "attn.wo", {dl, dl});
    L.norm_ffn = ones(pre + "ffn.norm", dl);
    L.w1 = normal(pre + "ffn.w1", {dl, dl * cfg.ffn_mult});
    L.w2 = residual(pre + "ffn.w2", {dl * cfg.ffn_mult, dl});
    p.enc.push_back(L);
  }
  p.n_alpha_ = p.params_.size();

  p.tok_emb = normal("dec.tok_emb", {cfg.vocab_size, d});
  p.pos_emb = normal("dec.pos_emb", {cfg.max_seq_len, d});
  for (std::size_t l = 0; l < cfg.n_dec_layers; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l) + ".";
    DecoderLayer L{};
    L.norm_self = ones(pre + "self.norm", d);
    L.self_wq = normal(pre + "self.wq", {d, d});
    L.self_wk = normal(pre + "self.wk", {d, d});
    L.self_wv = normal(pre + "self.wv", {d, d});
    L.self_wo = residual(pre + "self.wo", {d, d});
    L.norm_cross = ones(pre + "cross.norm", d);
    L.cross_wq = normal(pre + "cross.wq", {d, d});
    L.cross_wk = normal(pre + "cross.wk", {dl, d});
    L.cross_wv = normal(pre + "cross.wv", {dl, d});
    L.cross_wo = residual(pre + "cross.wo", {d, d});
    L.norm_ffn = ones(pre + "ffn.norm", d);
    L.w1 = normal(pre + "ffn.w1", {d, d * cfg.ffn_mult});
    L.w2 = residual(pre + "ffn.w2", {d * cfg.ffn_mult, d});
    p.dec.push_back(L);
  }
  p.final_norm = ones("dec.final_norm", d);
  p.w_out = normal("dec.w_out", {d, cfg.vocab_size});
  return p;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& q : params_) n += q.value.numel();
  return n;
}

template <typename T>
Parameter<T>* ModelParams<T>::find(std::string_view name) {
  for (auto& q : params_) {
    if (q.name == name) return &q;
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* ModelParams<T>::find(std::string_view name) const {
  for (const auto& q : params_) {
    if (q.name == name) return &q;
  }
  return nullptr;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& q : params_) q.zero_grad();
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.cfg_ = cfg_;
  out.n_alpha_ = n_alpha_;
  out.slot_emb = slot_emb;
  out.tok_emb = tok_emb;
  out.pos_emb = pos_emb;
  out.final_norm = final_norm;
  out.w_out = w_out;
  out.enc = enc;
  out.dec = dec;
  for (const auto& q : params_) out.params_.emplace_back(q.name, q.value.template cast<U>());
  return out;
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

template <typename T>
std::uint64_t theta_hash(const ModelParams<T>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& q : p.params()) {
    h = fnv1a64({reinterpret_cast<const unsigned char*>(q.name.data()), q.name.size()}, h);
    for (std::size_t dim : q.value.shape()) {
      const auto d64 = std::uint64_t(dim);
      h = fnv1a64({reinterpret_cast<const unsigned char*>(&d64), sizeof d64}, h);
    }
    h = fnv1a64({reinterpret_cast<const unsigned char*>(q.value.ptr()),
                 q.value.numel() * sizeof(T)},
                h);
  }
  return h;
}

template std::uint64_t theta_hash(const ModelParams<float>&);
template std::uint64_t theta_hash(const ModelParams<double>&);

template <typename T>
std::vector<Var> bind_trainable(Graph<T>& g, ModelParams<T>& p) {
  std::vector<Var> out;
  out.reserve(p.params().size());
  for (auto& q : p.params()) out.push_back(g.param(q));
  return out;
}

template <typename T>
std::vector<Var> bind_frozen(Graph<T>& g, const ModelParams<T>& p) {
  std::vector<Var> out;
  out.reserve(p.params().size());
  for (const auto& q : p.params()) out.push_back(g.frozen(q));
  return out;
}

template std::vector<Var> bind_trainable(Graph<float>&, ModelParams<float>&);
template std::vector<Var> bind_trainable(Graph<double>&, ModelParams<double>&);
template std::vector<Var> bind_frozen(Graph<float>&, const ModelParams<float>&);
template std::vector<Var> bind_frozen(Graph<double>&, const ModelParams<double>&);

// ---- forward ----------------------------------------------------------------

namespace {

template <typename T>
Var linear(Graph<T>& g, Var x, Var w) {
  return matmul(g, x, w);
}

template <typename T>
Var ffn(Graph<T>& g, Var x, Var w1, Var w2) {
  return matmul(g, silu(g, matmul(g, x, w1)), w2);
}

}  // namespace

template <typename T>
Var encode_prior(Graph<T>& g, const ModelParams<T>& p, std::span<const Var> th, Var z0) {
  const ModelConfig& cfg = p.config();
  const Tensor<T>& Z0 = g.value(z0);
  if (Z0.rank() != 2 || Z0.rows() != cfg.K || Z0.cols() != cfg.latent_dim()) {
    throw ShapeError("encode_prior: z0 " + shape_str(Z0.shape()) + ", expected [" +
                     std::to_string(cfg.K) + "x" + std::to_string(cfg.latent_dim()) + "]");
  }
  const T eps = T(cfg.rms_eps);
  Var h = add(g, z0, th[p.slot_emb]);
  for (const EncoderLayer& L : p.enc) {
    Var a = rms_norm(g, h, th[L.norm_attn], eps);
    Var att = attention(g, linear(g, a, th[L.wq]), linear(g, a, th[L.wk]),
                        linear(g, a, th[L.wv]), cfg.n_heads, AttentionSpan::full());
    h = add(g, h, linear(g, att, th[L.wo]));
    a = rms_norm(g, h, th[L.norm_ffn], eps);
    h = add(g, h, ffn(g, a, th[L.w1], th[L.w2]));
  }
  return h;
}

template <typename T>
LogLikelihoodVars decoder_log_likelihood(Graph<T>& g, const ModelParams<T>& p,
                                         std::span<const Var> th,
                                         std::span<const TokenId> x, Var z,
                                         std::size_t score_from) {
  const ModelConfig& cfg = p.config();
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("decoder_log_likelihood: empty sequence");
  if (n > cfg.max_seq_len) {
    throw std::invalid_argument("decoder_log_likelihood: sequence of " + std::to_string(n) +
                                " tokens exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  }
  const std::size_t s0 = std::max<std::size_t>(score_from, 1);
  if (s0 >= n) {
    throw std::invalid_argument("decoder_log_likelihood: nothing to score (score_from " +
                                std::to_string(score_from) + ", length " +
                                std::to_string(n) + ")");
  }
  const Tensor<T>& Z = g.value(z);
  if (Z.rank() != 2 || Z.rows() != cfg.K || Z.cols() != cfg.latent_dim()) {
    throw ShapeError("decoder_log_likelihood: z " + shape_str(Z.shape()));
  }
  const std::size_t m = n - 1;
  const T eps = T(cfg.rms_eps);
  std::vector<std::int32_t> positions(m);
  std::iota(positions.begin(), positions.end(), 0);
  Var h = add(g, embedding(g, th[p.tok_emb], x.first(m)), embedding(g, th[p.pos_emb],
                                                                    std::span(positions)));
  const auto windows = cfg.layer_windows();
  for (std::size_t l = 0; l < p.dec.size(); ++l) {
    const DecoderLayer& L = p.dec[l];
    Var a = rms_norm(g, h, th[L.norm_self], eps);
    Var att = attention(g, linear(g, a, th[L.self_wq]), linear(g, a, th[L.self_wk]),
                        linear(g, a, th[L.self_wv]), cfg.n_heads,
                        AttentionSpan::causal_window(windows[l]));
    h = add(g, h, linear(g, att, th[L.self_wo]));
    a = rms_norm(g, h, th[L.norm_cross], eps);
    att = attention(g, linear(g, a, th[L.cross_wq]), linear(g, z, th[L.cross_wk]),
                    linear(g, z, th[L.cross_wv]), cfg.n_heads, AttentionSpan::full());
    h = add(g, h, linear(g, att, th[L.cross_wo]));
    a = rms_norm(g, h, th[L.norm_ffn], eps);
    h = add(g, h, ffn(g, a, th[L.w1], th[L.w2]));
  }
  if (s0 > 1) h = slice_rows(g, h, s0 - 1, m);
  Var logits = matmul(g, rms_norm(g, h, th[p.final_norm], eps), th[p.w_out]);
  Var nll = cross_entropy_rows(g, logits, x.subspan(s0));
  return {scale(g, sum(g, nll), T(-1)), scale(g, nll, T(-1))};
}

template <typename T>
Tensor<T> encode_prior(const ModelParams<T>& p, const Tensor<T>& z0) {
  Graph<T> g;
  const auto th = bind_frozen(g, p);
  return g.value(encode_prior(g, p, th, g.view(z0)));
}

template <typename T>
LogLikelihood decoder_log_likelihood(const ModelParams<T>& p, std::span<const TokenId> x,
                                     const Tensor<T>& z, std::size_t score_from) {
  Graph<T> g;
  const auto th = bind_frozen(g, p);
  const auto r = decoder_log_likelihood(g, p, th, x, g.view(z), score_from);
  LogLikelihood out;
  const auto& pt = g.value(r.per_token);
  out.per_token.assign(pt.data().begin(), pt.data().end());
  // accumulate in double so total is the exact sum of the reported entries
  for (double v : out.per_token) out.total += v;
  return out;
}

#define LTR_INSTANTIATE_MODEL(T)                                                        \
  template Var encode_prior(Graph<T>&, const ModelParams<T>&, std::span<const Var>, Var); \
  template LogLikelihoodVars decoder_log_likelihood(Graph<T>&, const ModelParams<T>&,   \
                                                    std::span<const Var>,               \
                                                    std::span<const TokenId>, Var,      \
                                                    std::size_t);                       \
  template Tensor<T> encode_prior(const ModelParams<T>&, const Tensor<T>&);             \
  template LogLikelihood decoder_log_likelihood(const ModelParams<T>&,                  \
                                                std::span<const TokenId>,               \
                                                const Tensor<T>&, std::size_t);

LTR_INSTANTIATE_MODEL(float)
LTR_INSTANTIATE_MODEL(double)

#undef LTR_INSTANTIATE_MODEL

}  // namespace ltr
