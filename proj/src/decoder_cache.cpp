#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ltr/model.hpp"

namespace ltr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
Eigen::Map<const RowMat<T>> mat(const Tensor<T>& t) {
  return {t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}

template <typename T>
Vec<T> rms(const Vec<T>& x, const Tensor<T>& gain, T eps) {
  const T ms = x.squaredNorm() / T(x.size());
  const T rinv = T(1) / std::sqrt(ms + eps);
  Vec<T> out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) out[j] = x[j] * rinv * gain[std::size_t(j)];
  return out;
}

// Softmax attention of q over rows `idx` of k/v, head by head.
template <typename T>
Vec<T> attend(const Vec<T>& q, const T* k, const T* v, const std::vector<std::size_t>& idx,
              std::size_t d, std::size_t n_heads) {
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(T(dh));
  Vec<T> out = Vec<T>::Zero(Eigen::Index(d));
  std::vector<T> s(idx.size());
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const T* kj = k + idx[a] * d + off;
      T acc = 0;
      for (std::size_t c = 0; c < dh; ++c) acc += q[Eigen::Index(off + c)] * kj[c];
      s[a] = acc * sc;
      mx = std::max(mx, s[a]);
    }
    T z = 0;
    for (T& e : s) z += (e = std::exp(e - mx));
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const T pr = s[a] / z;
      const T* vj = v + idx[a] * d + off;
      for (std::size_t c = 0; c < dh; ++c) out[Eigen::Index(off + c)] += pr * vj[c];
    }
  }
  return out;
}

}  // namespace

template <typename T>
DecoderCache<T>::DecoderCache(const ModelParams<T>& p, const Tensor<T>& z)
    : p_(p), windows_(p.config().layer_windows()) {
  const ModelConfig& cfg = p.config();
  if (z.rank() != 2 || z.rows() != cfg.K || z.cols() != cfg.latent_dim()) {
    throw ShapeError("DecoderCache: z " + shape_str(z.shape()));
  }
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < p.dec.size(); ++l) {
    const DecoderLayer& L = p.dec[l];
    RowMat<T> k = mat(z) * mat(p[L.cross_wk].value);
    RowMat<T> v = mat(z) * mat(p[L.cross_wv].value);
    cross_k_.emplace_back(k.data(), k.data() + k.size());
    cross_v_.emplace_back(v.data(), v.data() + v.size());
    Ring r;
    r.cap = windows_[l] + 1;
    r.k.assign(r.cap * d, T(0));
    r.v.assign(r.cap * d, T(0));
    rings_.push_back(std::move(r));
  }
}

template <typename T>
const std::vector<T>& DecoderCache<T>::push(TokenId token) {
  const ModelConfig& cfg = p_.config();
  const std::size_t d = cfg.d_model;
  if (pos_ >= cfg.max_seq_len) throw std::out_of_range("DecoderCache: past max_seq_len");
  if (token < 0 || std::size_t(token) >= cfg.vocab_size) {
    throw std::out_of_range("DecoderCache: token id " + std::to_string(token));
  }
  const T eps = T(cfg.rms_eps);
  Vec<T> h = mat(p_[p_.tok_emb].value).row(token) + mat(p_[p_.pos_emb].value).row(Eigen::Index(pos_));
  std::vector<std::size_t> all_slots(cfg.K);
  for (std::size_t j = 0; j < cfg.K; ++j) all_slots[j] = j;

  for (std::size_t l = 0; l < p_.dec.size(); ++l) {
    const DecoderLayer& L = p_.dec[l];
    Ring& ring = rings_[l];
    Vec<T> a = rms(h, p_[L.norm_self].value, eps);
    const Vec<T> q = a * mat(p_[L.self_wq].value);
    const std::size_t slot = pos_ % ring.cap;
    Eigen::Map<Vec<T>>(ring.k.data() + slot * d, Eigen::Index(d)) = a * mat(p_[L.self_wk].value);
    Eigen::Map<Vec<T>>(ring.v.data() + slot * d, Eigen::Index(d)) = a * mat(p_[L.self_wv].value);
    std::vector<std::size_t> idx;
    const std::size_t lo = pos_ > windows_[l] ? pos_ - windows_[l] : 0;
    for (std::size_t j = lo; j <= pos_; ++j) idx.push_back(j % ring.cap);
    h += attend(q, ring.k.data(), ring.v.data(), idx, d, cfg.n_heads) *
         mat(p_[L.self_wo].value);

    a = rms(h, p_[L.norm_cross].value, eps);
    const Vec<T> qc = a * mat(p_[L.cross_wq].value);
    h += attend(qc, cross_k_[l].data(), cross_v_[l].data(), all_slots, d, cfg.n_heads) *
         mat(p_[L.cross_wo].value);

    a = rms(h, p_[L.norm_ffn].value, eps);
    Vec<T> u = a * mat(p_[L.w1].value);
    for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = u[j] / (T(1) + std::exp(-u[j]));
    h += u * mat(p_[L.w2].value);
  }
  const Vec<T> out = rms(h, p_[p_.final_norm].value, eps) * mat(p_[p_.w_out].value);
  logits_.assign(out.data(), out.data() + out.size());
  ++pos_;
  return logits_;
}

template class DecoderCache<float>;
template class DecoderCache<double>;

template <typename T>
SampledTrace sample_trace(const ModelParams<T>& p, std::span<const TokenId> prompt,
                          const Tensor<T>& z, const DecodeConfig& decode, Rng& rng) {
  const ModelConfig& cfg = p.config();
  if (prompt.empty()) throw std::invalid_argument("sample_trace: empty prompt");
  if (prompt.size() > cfg.max_seq_len) {
    throw std::invalid_argument("sample_trace: question of " + std::to_string(prompt.size()) +
                                " tokens exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  }
  if (!(decode.temperature >= 0)) throw std::invalid_argument("sample_trace: temperature < 0");
  DecoderCache<T> cache(p, z);
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) cache.push(prompt[i]);
  SampledTrace out;
  TokenId next = prompt.back();
  std::vector<double> prob(cfg.vocab_size);
  while (out.tokens.size() < decode.max_new_tokens) {
    if (cache.position() >= cfg.max_seq_len - 1) break;
    const std::vector<T>& logits = cache.push(next);
    TokenId pick = 0;
    if (decode.temperature == 0) {
      for (std::size_t v = 1; v < logits.size(); ++v) {
        if (logits[v] > logits[std::size_t(pick)]) pick = TokenId(v);
      }
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < logits.size(); ++v) {
        prob[v] = double(logits[v]) / decode.temperature;
        mx = std::max(mx, prob[v]);
      }
      double zsum = 0;
      for (double& e : prob) zsum += (e = std::exp(e - mx));
      double u = rng.uniform() * zsum;
      pick = TokenId(logits.size() - 1);
      for (std::size_t v = 0; v < prob.size(); ++v) {
        if (u < prob[v]) {
          pick = TokenId(v);
          break;
        }
        u -= prob[v];
      }
    }
    out.tokens.push_back(pick);
    if (pick == Vocabulary::kEos) {
      out.ended = true;
      return out;
    }
    next = pick;
  }
  out.truncated = true;
  return out;
}

template SampledTrace sample_trace(const ModelParams<float>&, std::span<const TokenId>,
                                   const Tensor<float>&, const DecodeConfig&, Rng&);
template SampledTrace sample_trace(const ModelParams<double>&, std::span<const TokenId>,
                                   const Tensor<double>&, const DecodeConfig&, Rng&);

}  // namespace ltr
