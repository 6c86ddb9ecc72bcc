#include "ltr/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace ltr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t) {
  return MatMap<T>(t.mutable_ptr(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

}  // namespace

// ---- Graph ----------------------------------------------------------------

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw std::out_of_range("invalid graph variable");
  }
  return nodes_[v.id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw std::out_of_range("invalid graph variable");
  }
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{std::uint32_t(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::view(const Tensor<T>& t) {
  Node n;
  n.borrowed = &t;
  nodes_.push_back(std::move(n));
  return Var{std::uint32_t(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.borrowed = &p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var{std::uint32_t(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) {
    throw std::logic_error("no gradient recorded for this variable");
  }
  return n.grad;
}

template <typename T>
bool Graph<T>::has_grad(Var v) const {
  return !node(v).grad.empty();
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> inputs,
                     BackwardFn fn) {
  bool req = false;
  for (Var in : inputs) req = req || node(in).requires_grad;
  Node n;
  n.owned = std::move(value);
  n.requires_grad = req;
  if (req) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{std::uint32_t(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var out) {
  if (backward_done_) {
    throw std::logic_error("backward() called twice on the same graph");
  }
  backward_done_ = true;
  Node& root = node(out);
  if (root.value().numel() != 1) {
    throw ShapeError("backward() needs a one-element output, got " +
                     shape_str(root.value().shape()));
  }
  if (!root.requires_grad) return;
  grad_buffer(out).fill(T(1));
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, std::uint32_t(i));
  }
  for (Node& n : nodes_) {
    if (n.param && !n.grad.empty()) {
      auto dst = n.param->grad.mutable_data();
      auto src = n.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

// ---- ops --------------------------------------------------------------------

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  Tensor<T> C({A.rows(), B.cols()});
  as_mat(C).noalias() = as_mat(A) * as_mat(B);
  return g.record(std::move(C), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    const auto dC = as_mat(g.out_grad(self));
    if (g.requires_grad(a)) {
      as_mat(g.grad_buffer(a)).noalias() += dC * as_mat(g.value(b)).transpose();
    }
    if (g.requires_grad(b)) {
      as_mat(g.grad_buffer(b)).noalias() += as_mat(g.value(a)).transpose() * dC;
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require_same_shape(A.shape(), B.shape(), "add");
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A) + as_mat(B);
  return g.record(std::move(C), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    const auto& d = g.out_grad(self);
    if (g.requires_grad(a)) as_mat(g.grad_buffer(a)) += as_mat(d);
    if (g.requires_grad(b)) as_mat(g.grad_buffer(b)) += as_mat(d);
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require_same_shape(A.shape(), B.shape(), "sub");
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A) - as_mat(B);
  return g.record(std::move(C), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    const auto& d = g.out_grad(self);
    if (g.requires_grad(a)) as_mat(g.grad_buffer(a)) += as_mat(d);
    if (g.requires_grad(b)) as_mat(g.grad_buffer(b)) -= as_mat(d);
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  require_same_shape(A.shape(), B.shape(), "mul");
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A).cwiseProduct(as_mat(B));
  return g.record(std::move(C), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    const auto d = as_mat(g.out_grad(self));
    if (g.requires_grad(a)) {
      as_mat(g.grad_buffer(a)) += d.cwiseProduct(as_mat(g.value(b)));
    }
    if (g.requires_grad(b)) {
      as_mat(g.grad_buffer(b)) += d.cwiseProduct(as_mat(g.value(a)));
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T c) {
  const Tensor<T>& A = g.value(a);
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A) * c;
  return g.record(std::move(C), {a}, [a, c](Graph<T>& g, std::uint32_t self) {
    as_mat(g.grad_buffer(a)) += as_mat(g.out_grad(self)) * c;
  });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var a, T c) {
  const Tensor<T>& A = g.value(a);
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A).array() + c;
  return g.record(std::move(C), {a}, [a](Graph<T>& g, std::uint32_t self) {
    as_mat(g.grad_buffer(a)) += as_mat(g.out_grad(self));
  });
}

template <typename T>
Var exp(Graph<T>& g, Var a) {
  const Tensor<T>& A = g.value(a);
  Tensor<T> C(A.shape());
  as_mat(C) = as_mat(A).array().exp();
  return g.record(std::move(C), {a}, [a](Graph<T>& g, std::uint32_t self) {
    as_mat(g.grad_buffer(a)) +=
        as_mat(g.out_grad(self)).cwiseProduct(as_mat(g.value(Var{self})));
  });
}

template <typename T>
Var silu(Graph<T>& g, Var a) {
  const Tensor<T>& A = g.value(a);
  Tensor<T> C(A.shape());
  auto c = C.mutable_data();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const T x = A[i];
    c[i] = x / (T(1) + std::exp(-x));
  }
  return g.record(std::move(C), {a}, [a](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& x = g.value(a);
    const auto d = g.out_grad(self).data();
    auto dx = g.grad_buffer(a).mutable_data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-x[i]));
      dx[i] += d[i] * s * (T(1) + x[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
  const Tensor<T>& A = g.value(a);
  T total = 0;
  for (T v : A.data()) total += v;
  Tensor<T> C({1});
  C[0] = total;
  return g.record(std::move(C), {a}, [a](Graph<T>& g, std::uint32_t self) {
    const T d = g.out_grad(self)[0];
    as_mat(g.grad_buffer(a)).array() += d;
  });
}

template <typename T>
Var rms_norm(Graph<T>& g, Var x, Var gain, T eps) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& G = g.value(gain);
  const std::size_t n = X.rows(), d = X.cols();
  if (G.numel() != d) {
    throw ShapeError("rms_norm: gain " + shape_str(G.shape()) +
                     " does not match feature size of " + shape_str(X.shape()));
  }
  auto inv = std::make_shared<std::vector<T>>(n);
  Tensor<T> Y(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = X.ptr() + r * d;
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= T(d);
    const T rinv = T(1) / std::sqrt(ms + eps);
    (*inv)[r] = rinv;
    T* yr = Y.mutable_ptr() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] * rinv * G[j];
  }
  return g.record(std::move(Y), {x, gain},
                  [x, gain, inv, n, d](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& X = g.value(x);
    const Tensor<T>& G = g.value(gain);
    const Tensor<T>& dY = g.out_grad(self);
    const bool want_x = g.requires_grad(x);
    const bool want_g = g.requires_grad(gain);
    T* dX = want_x ? g.grad_buffer(x).mutable_ptr() : nullptr;
    T* dG = want_g ? g.grad_buffer(gain).mutable_ptr() : nullptr;
    for (std::size_t r = 0; r < n; ++r) {
      const T* xr = X.ptr() + r * d;
      const T* dyr = dY.ptr() + r * d;
      const T rinv = (*inv)[r];
      if (want_g) {
        for (std::size_t j = 0; j < d; ++j) dG[j] += dyr[j] * xr[j] * rinv;
      }
      if (want_x) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += G[j] * dyr[j] * xr[j];
        const T k = rinv * rinv * rinv * dot / T(d);
        T* dxr = dX + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dxr[j] += rinv * G[j] * dyr[j] - k * xr[j];
        }
      }
    }
  });
}

template <typename T>
Var softmax_rows(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  const std::size_t n = X.rows(), d = X.cols();
  Tensor<T> Y(X.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = X.ptr() + r * d;
    T* yr = Y.mutable_ptr() + r * d;
    const T m = *std::max_element(xr, xr + d);
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= s;
  }
  return g.record(std::move(Y), {x}, [x, n, d](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& Y = g.value(Var{self});
    const Tensor<T>& dY = g.out_grad(self);
    T* dX = g.grad_buffer(x).mutable_ptr();
    for (std::size_t r = 0; r < n; ++r) {
      const T* yr = Y.ptr() + r * d;
      const T* dyr = dY.ptr() + r * d;
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += yr[j] * dyr[j];
      for (std::size_t j = 0; j < d; ++j) dX[r * d + j] += yr[j] * (dyr[j] - dot);
    }
  });
}

template <typename T>
Var cross_entropy_rows(Graph<T>& g, Var logits,
                       std::span<const std::int32_t> targets) {
  const Tensor<T>& L = g.value(logits);
  const std::size_t n = L.rows(), v = L.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<std::vector<T>>(n * v);
  auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
  Tensor<T> out({n});
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t t = targets[r];
    if (t >= std::int32_t(v)) {
      throw std::out_of_range("cross_entropy_rows: target " + std::to_string(t) +
                              " out of range for " + std::to_string(v) + " classes");
    }
    const T* lr = L.ptr() + r * v;
    const std::size_t am = std::size_t(std::max_element(lr, lr + v) - lr);
    const T m = lr[am];
    // log-sum-exp split as log1p of the non-max mass for accuracy near 0
    T rest = 0;
    T* pr = probs->data() + r * v;
    for (std::size_t j = 0; j < v; ++j) {
      pr[j] = std::exp(lr[j] - m);
      if (j != am) rest += pr[j];
    }
    const T lse = std::log1p(rest);
    const T denom = T(1) + rest;
    for (std::size_t j = 0; j < v; ++j) pr[j] /= denom;
    out[r] = t < 0 ? T(0) : lse - (lr[t] - m);
  }
  return g.record(std::move(out), {logits},
                  [logits, probs, tgt, n, v](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& d = g.out_grad(self);
    T* dL = g.grad_buffer(logits).mutable_ptr();
    for (std::size_t r = 0; r < n; ++r) {
      const std::int32_t t = (*tgt)[r];
      if (t < 0) continue;
      const T* pr = probs->data() + r * v;
      for (std::size_t j = 0; j < v; ++j) dL[r * v + j] += d[r] * pr[j];
      dL[r * v + std::size_t(t)] -= d[r];
    }
  });
}

template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids) {
  const Tensor<T>& W = g.value(table);
  const std::size_t rows = W.rows(), d = W.cols();
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || std::size_t(ids[i]) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(rows) + " rows");
    }
    std::copy_n(W.ptr() + std::size_t(ids[i]) * d, d, out.mutable_ptr() + i * d);
  }
  auto idx = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  return g.record(std::move(out), {table}, [table, idx, d](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& dOut = g.out_grad(self);
    T* dW = g.grad_buffer(table).mutable_ptr();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      T* dst = dW + std::size_t((*idx)[i]) * d;
      const T* src = dOut.ptr() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, std::size_t n_heads,
              AttentionSpan span) {
  const Tensor<T>& Q = g.value(q);
  const Tensor<T>& K = g.value(k);
  const Tensor<T>& V = g.value(v);
  const std::size_t n = Q.rows(), m = K.rows(), d = Q.cols();
  if (K.cols() != d || V.cols() != d || V.rows() != m) {
    throw ShapeError("attention: q " + shape_str(Q.shape()) + ", k " +
                     shape_str(K.shape()) + ", v " + shape_str(V.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) +
                     " not divisible into " + std::to_string(n_heads) + " heads");
  }
  if (span.causal && m != n) {
    throw ShapeError("attention: causal span needs as many keys as queries");
  }
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(T(dh));
  // probs[(h * n + i) * m + j] for j in [lo(i), hi(i)]
  auto probs = std::make_shared<std::vector<T>>(n_heads * n * m, T(0));
  Tensor<T> out({n, d});
  std::vector<T> s(m);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = span.lo(i), hi = span.hi(i, m);
      const T* qi = Q.ptr() + i * d + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = lo; j <= hi; ++j) {
        const T* kj = K.ptr() + j * d + off;
        T acc = 0;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        s[j] = acc * sc;
        mx = std::max(mx, s[j]);
      }
      T z = 0;
      for (std::size_t j = lo; j <= hi; ++j) z += (s[j] = std::exp(s[j] - mx));
      T* pr = probs->data() + (h * n + i) * m;
      T* oi = out.mutable_ptr() + i * d + off;
      for (std::size_t j = lo; j <= hi; ++j) {
        const T p = s[j] / z;
        pr[j] = p;
        const T* vj = V.ptr() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
    }
  }
  return g.record(std::move(out), {q, k, v},
                  [q, k, v, probs, n, m, d, n_heads, span, sc](Graph<T>& g,
                                                               std::uint32_t self) {
    const Tensor<T>& Q = g.value(q);
    const Tensor<T>& K = g.value(k);
    const Tensor<T>& V = g.value(v);
    const Tensor<T>& dO = g.out_grad(self);
    const bool wq = g.requires_grad(q), wk = g.requires_grad(k), wv = g.requires_grad(v);
    T* dQ = wq ? g.grad_buffer(q).mutable_ptr() : nullptr;
    T* dK = wk ? g.grad_buffer(k).mutable_ptr() : nullptr;
    T* dV = wv ? g.grad_buffer(v).mutable_ptr() : nullptr;
    const std::size_t dh = d / n_heads;
    std::vector<T> dp(m);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = span.lo(i), hi = span.hi(i, m);
        const T* pr = probs->data() + (h * n + i) * m;
        const T* doi = dO.ptr() + i * d + off;
        T dot = 0;
        for (std::size_t j = lo; j <= hi; ++j) {
          const T* vj = V.ptr() + j * d + off;
          T acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += doi[c] * vj[c];
          dp[j] = acc;
          dot += pr[j] * acc;
          if (wv) {
            T* dvj = dV + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * doi[c];
          }
        }
        const T* qi = Q.ptr() + i * d + off;
        for (std::size_t j = lo; j <= hi; ++j) {
          const T ds = pr[j] * (dp[j] - dot) * sc;
          if (wq) {
            const T* kj = K.ptr() + j * d + off;
            T* dqi = dQ + i * d + off;
            for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
          }
          if (wk) {
            T* dkj = dK + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
          }
        }
      }
    }
  });
}

template <typename T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() != 2 || begin >= end || end > X.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") of " + shape_str(X.shape()));
  }
  const std::size_t d = X.cols();
  Tensor<T> out({end - begin, d});
  std::copy_n(X.ptr() + begin * d, (end - begin) * d, out.mutable_ptr());
  return g.record(std::move(out), {x}, [x, begin, d](Graph<T>& g, std::uint32_t self) {
    const Tensor<T>& dOut = g.out_grad(self);
    T* dst = g.grad_buffer(x).mutable_ptr() + begin * d;
    for (std::size_t i = 0; i < dOut.numel(); ++i) dst[i] += dOut[i];
  });
}

#define LTR_INSTANTIATE_OPS(T)                                                  \
  template Var matmul<T>(Graph<T>&, Var, Var);                                  \
  template Var add<T>(Graph<T>&, Var, Var);                                     \
  template Var sub<T>(Graph<T>&, Var, Var);                                     \
  template Var mul<T>(Graph<T>&, Var, Var);                                     \
  template Var scale<T>(Graph<T>&, Var, T);                                     \
  template Var add_scalar<T>(Graph<T>&, Var, T);                                \
  template Var exp<T>(Graph<T>&, Var);                                          \
  template Var silu<T>(Graph<T>&, Var);                                         \
  template Var sum<T>(Graph<T>&, Var);                                          \
  template Var rms_norm<T>(Graph<T>&, Var, Var, T);                             \
  template Var softmax_rows<T>(Graph<T>&, Var);                                 \
  template Var cross_entropy_rows<T>(Graph<T>&, Var, std::span<const std::int32_t>); \
  template Var embedding<T>(Graph<T>&, Var, std::span<const std::int32_t>);     \
  template Var attention<T>(Graph<T>&, Var, Var, Var, std::size_t, AttentionSpan); \
  template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);

LTR_INSTANTIATE_OPS(float)
LTR_INSTANTIATE_OPS(double)

#undef LTR_INSTANTIATE_OPS

}  // namespace ltr
