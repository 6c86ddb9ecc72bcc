#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ltr/tensor.hpp"

namespace ltr {

// A named trainable tensor. `grad` always has the shape of `value`; it is only
// reset by an explicit zero_grad() and accumulates across backward passes.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Handle to a node in a Graph.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Which key rows each query row may attend to.
struct AttentionSpan {
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

  bool causal = false;
  // Number of predecessors visible to a causal query (itself is always
  // visible). Ignored when causal is false.
  std::size_t window = kUnbounded;

  static AttentionSpan full() { return {}; }
  static AttentionSpan causal_window(std::size_t w) { return {true, w}; }

  std::size_t lo(std::size_t i) const {
    if (!causal) return 0;
    return (window == kUnbounded || i < window) ? 0 : i - window;
  }
  std::size_t hi(std::size_t i, std::size_t n_keys) const {
    return causal ? i : n_keys - 1;
  }
};

// Tape for reverse-mode differentiation. Nodes are appended in evaluation
// order; backward() walks them in reverse. A graph is single-use: build,
// call backward() once, read gradients, discard.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Var leaf(Tensor<T> value, bool requires_grad);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  // Constant that borrows `t`; the tensor must outlive the graph.
  Var view(const Tensor<T>& t);
  // Trainable parameter: its gradient is added to p.grad by backward().
  Var param(Parameter<T>& p);
  // Parameter used as a constant. No copy is made.
  Var frozen(const Parameter<T>& p) { return view(p.value); }

  const Tensor<T>& value(Var v) const;
  const Tensor<T>& grad(Var v) const;
  bool has_grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(out)/d(out) = 1 for a one-element `out` and propagates.
  void backward(Var out);

  // Used by op implementations.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Tensor<T>& grad_buffer(Var v);
  const Tensor<T>& out_grad(std::uint32_t self) const { return nodes_[self].grad; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;

    const Tensor<T>& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  // deque: references returned by value() stay valid as nodes are appended
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

// ---- differentiable operations ------------------------------------------
// Shapes use the matrix view of Tensor (rank-1 == one row). No implicit
// broadcasting: every shape coercion is its own op.

// a[m x k] * b[k x n]
template <typename T> Var matmul(Graph<T>& g, Var a, Var b);
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
// Elementwise product.
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T c);
template <typename T> Var add_scalar(Graph<T>& g, Var a, T c);
template <typename T> Var exp(Graph<T>& g, Var a);
template <typename T> Var silu(Graph<T>& g, Var a);
// Sum of all entries, shape {1}.
template <typename T> Var sum(Graph<T>& g, Var a);
// Row-wise x / sqrt(mean(x^2) + eps) * gain, gain of shape {cols}.
template <typename T> Var rms_norm(Graph<T>& g, Var x, Var gain, T eps);
// Row-wise softmax.
template <typename T> Var softmax_rows(Graph<T>& g, Var x);
// Row-wise -log softmax(logits)[target]; rows with target < 0 give 0.
// Result has shape {rows}.
template <typename T>
Var cross_entropy_rows(Graph<T>& g, Var logits, std::span<const std::int32_t> targets);
// Rows of `table` selected by ids.
template <typename T>
Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids);
// Multi-head scaled dot-product attention. q[n x d], k/v[m x d]; heads split
// d evenly.
template <typename T>
Var attention(Graph<T>& g, Var q, Var k, Var v, std::size_t n_heads, AttentionSpan span);

// Rows [begin, end) of a rank-2 tensor.
template <typename T>
Var slice_rows(Graph<T>& g, Var x, std::size_t begin, std::size_t end);

}  // namespace ltr
