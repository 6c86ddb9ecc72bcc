#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "ltr/adam.hpp"
#include "ltr/autodiff.hpp"
#include "ltr/grad_check.hpp"
#include "ltr/rng.hpp"
#include "ltr/tensor.hpp"

using namespace ltr;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t.mutable_data());
  for (double& v : t.mutable_data()) v *= scale;
  return t;
}

double eval_scalar(const std::function<Var(Graph<double>&)>& f) {
  Graph<double> g;
  return g.value(f(g)).item();
}

}  // namespace

TEST(Tensor, RejectsNonFiniteAndBadShapes) {
  EXPECT_THROW(Tensor<double>({2}, {1.0, NAN}), NonFiniteError);
  EXPECT_THROW(Tensor<double>({2}, {1.0, INFINITY}), NonFiniteError);
  EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{0, 3}), ShapeError);
  Tensor<double> t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, HandComputedCases) {
  Graph<double> g;
  Var a = g.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  Var id = g.constant(Tensor<double>::matrix({{1, 0}, {0, 1}}));
  Var b = g.constant(Tensor<double>::matrix({{5, 6}, {7, 8}}));
  Var zero = g.constant(Tensor<double>({2, 3}));
  EXPECT_EQ(g.value(matmul(g, a, id)), Tensor<double>::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(g.value(matmul(g, a, b)), Tensor<double>::matrix({{19, 22}, {43, 50}}));
  EXPECT_EQ(g.value(matmul(g, a, zero)), Tensor<double>({2, 3}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<double> g;
  Var a = g.constant(Tensor<double>({2, 3}));
  Var b = g.constant(Tensor<double>({2, 3}));
  try {
    matmul(g, a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, AnalyticValues) {
  Graph<double> g;
  auto sm = [&](std::vector<double> v) {
    const std::size_t n = v.size();
    return g.value(softmax_rows(g, g.constant(Tensor<double>({n}, std::move(v)))));
  };
  auto a = sm({0, 0});
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  auto b = sm({std::log(2.0), 0});
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
  auto c = sm({1000, 0});
  EXPECT_DOUBLE_EQ(c[0], 1.0);
  EXPECT_GE(c[1], 0.0);
  EXPECT_LT(c[1], 1e-300);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> x = random_tensor({3, 7}, rng, 5.0);
    Tensor<double> shifted = x;
    const double c = rng.normal() * 100;
    for (double& v : shifted.mutable_data()) v += c;
    Graph<double> g;
    const auto& y = g.value(softmax_rows(g, g.constant(x)));
    const auto& ys = g.value(softmax_rows(g, g.constant(shifted)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        s += y.at(r, j);
        EXPECT_GT(y.at(r, j), 0.0);
        EXPECT_NEAR(y.at(r, j), ys.at(r, j), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(CrossEntropy, AnalyticValues) {
  auto ce = [](std::vector<double> logits, std::int32_t target) {
    Graph<double> g;
    const std::size_t n = logits.size();
    Var l = g.constant(Tensor<double>({n}, std::move(logits)));
    const std::int32_t t[] = {target};
    return g.value(cross_entropy_rows(g, l, std::span<const std::int32_t>(t))).item();
  };
  EXPECT_NEAR(ce({0.3, 0.3, 0.3, 0.3}, 2), std::log(4.0), 1e-15);
  EXPECT_NEAR(ce({0, std::log(3.0)}, 1), -std::log(0.75), 1e-15);
  EXPECT_NEAR(ce({20, 0}, 0), std::log1p(std::exp(-20.0)), 1e-22);
  EXPECT_THROW(ce({0, 1}, 2), std::out_of_range);
}

TEST(CrossEntropy, EqualsNegativeLogSoftmax) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> x = random_tensor({9}, rng, 4.0);
    const std::int32_t t[] = {std::int32_t(trial % 9)};
    Graph<double> g;
    Var l = g.constant(x);
    const double nll = g.value(cross_entropy_rows(g, l, std::span<const std::int32_t>(t))).item();
    const double p = g.value(softmax_rows(g, l))[std::size_t(t[0])];
    EXPECT_NEAR(nll + std::log(p), 0.0, 1e-12);
  }
}

TEST(RmsNorm, AnalyticValues) {
  auto rn = [](std::vector<double> v, double eps) {
    Graph<double> g;
    const std::size_t n = v.size();
    Var x = g.constant(Tensor<double>({n}, std::move(v)));
    Var gain = g.constant(Tensor<double>::full({n}, 1.0));
    return g.value(rms_norm(g, x, gain, eps));
  };
  auto ones = rn({1, 1, 1, 1}, 1e-300);
  for (double v : ones.data()) EXPECT_DOUBLE_EQ(v, 1.0);
  auto zeros = rn({0, 0, 0}, 1e-6);
  for (double v : zeros.data()) EXPECT_EQ(v, 0.0);
  auto y = rn({3, 4}, 1e-300);
  EXPECT_NEAR(y[0], 3 / std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(y[1], 4 / std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(y[0], 0.848528, 1e-6);
  EXPECT_NEAR(y[1], 1.131371, 1e-6);
}

TEST(Adam, FirstStepAndZeroGradient) {
  Parameter<double> p("p", Tensor<double>::full({4}, 2.0));
  p.grad.fill(1.0);
  AdamState<double> s(p.value.shape(), {0.3});
  adam_step(p, s);
  for (double v : p.value.data()) EXPECT_NEAR(v, 2.0 - 0.3, 1e-7);
  EXPECT_EQ(s.t, 1u);
  for (double g : p.grad.data()) EXPECT_EQ(g, 1.0);  // caller resets

  Parameter<double> q("q", Tensor<double>::full({3}, -1.5));
  AdamState<double> s0(q.value.shape(), {0.3});
  adam_step(q, s0);
  for (double v : q.value.data()) EXPECT_EQ(v, -1.5);
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  Rng rng(5);
  Parameter<float> p("p", Tensor<float>({17}));
  rng.fill_normal(p.value.mutable_data());
  p.value[0] = -0.0f;
  rng.fill_normal(p.grad.mutable_data());
  const Tensor<float> before = p.value;
  AdamState<float> s(p.value.shape(), {0.0});
  for (int i = 0; i < 5; ++i) adam_step(p, s);
  EXPECT_EQ(std::memcmp(before.ptr(), p.value.ptr(), sizeof(float) * 17), 0);
  for (double v : s.v.data()) EXPECT_GE(v, 0.0);
  EXPECT_EQ(s.t, 5u);
}

TEST(Adam, StateShapeMismatchThrows) {
  Parameter<double> p("p", Tensor<double>({3}));
  AdamState<double> s(Shape{4}, {0.1});
  EXPECT_THROW(adam_step(p, s), ShapeError);
}

TEST(Graph, ParameterUsedTwiceAccumulatesBothPaths) {
  // f(W) = sum(W * W) + sum(W W) ; W used four times.
  Rng rng(9);
  Parameter<double> w("w", random_tensor({3, 3}, rng));
  Parameter<double>* ps[] = {&w};
  auto f = [&](Graph<double>& g) {
    Var a = g.param(w);
    Var b = g.param(w);
    return add(g, sum(g, mul(g, a, a)), sum(g, matmul(g, a, b)));
  };
  auto rep = grad_check_params("shared", f, ps, 0, rng);
  EXPECT_LT(rep.max_rel_err, 1e-8);
  EXPECT_EQ(rep.n_checked, 9u);
}

TEST(Graph, GradientsAccumulateUntilExplicitReset) {
  Parameter<double> w("w", Tensor<double>::full({2}, 3.0));
  for (int pass = 1; pass <= 3; ++pass) {
    Graph<double> g;
    Var a = g.param(w);
    g.backward(sum(g, mul(g, a, a)));
    EXPECT_DOUBLE_EQ(w.grad[0], 6.0 * pass);
  }
  w.zero_grad();
  EXPECT_EQ(w.grad[0], 0.0);
}

TEST(Graph, FrozenParametersReceiveNoGradient) {
  Parameter<double> w("w", Tensor<double>::full({2}, 3.0));
  Graph<double> g;
  Var x = g.leaf(Tensor<double>::full({2}, 1.0), true);
  Var a = g.frozen(w);
  g.backward(sum(g, mul(g, a, x)));
  EXPECT_EQ(w.grad[0], 0.0);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 3.0);
}

TEST(GradCheck, QuadraticIsExact) {
  auto rep = grad_check(
      "square", [](Graph<double>& g, std::span<const Var> v) { return mul(g, v[0], v[0]); },
      {Tensor<double>::scalar(3.0)}, {"x"});
  EXPECT_NEAR(rep.worst_analytic, 6.0, 0);
  EXPECT_LE(rep.max_rel_err, 1e-10);
}

TEST(GradCheck, SoftmaxCrossEntropyComposite) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> logits = random_tensor({4, 6}, rng, 2.0);
    std::vector<std::int32_t> tgt = {1, 5, -1, 0};
    auto rep = grad_check(
        "softmax_xent",
        [&](Graph<double>& g, std::span<const Var> v) {
          return sum(g, cross_entropy_rows(g, v[0], std::span<const std::int32_t>(tgt)));
        },
        {logits}, {"logits"});
    EXPECT_LE(rep.max_rel_err, 1e-5) << rep.worst_input << "[" << rep.worst_index << "]";
  }
}

TEST(GradCheck, ReportsNonFiniteFunction) {
  EXPECT_THROW(grad_check(
                   "blowup",
                   [](Graph<double>& g, std::span<const Var> v) {
                     return sum(g, exp(g, scale(g, v[0], 1000.0)));
                   },
                   {Tensor<double>::scalar(1.0)}, {"x"}),
               NonFiniteError);
}

TEST(Attention, WindowRestrictsKeys) {
  // Changing a value row outside a query's window leaves that query's output
  // unchanged.
  Rng rng(2);
  Tensor<double> q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng),
                 v = random_tensor({6, 4}, rng);
  auto run = [&](const Tensor<double>& vv) {
    Graph<double> g;
    return g.value(attention(g, g.constant(q), g.constant(k), g.constant(vv), 2,
                             AttentionSpan::causal_window(2)));
  };
  Tensor<double> base = run(v);
  Tensor<double> v2 = v;
  for (std::size_t c = 0; c < 4; ++c) v2.at(1, c) += 10.0;
  Tensor<double> pert = run(v2);
  for (std::size_t i = 0; i < 6; ++i) {
    const bool sees = i >= 1 && i <= 3;
    for (std::size_t c = 0; c < 4; ++c) {
      if (!sees) EXPECT_EQ(base.at(i, c), pert.at(i, c)) << i;
    }
  }
  EXPECT_NE(base.at(3, 0), pert.at(3, 0));
}

TEST(Rng, SplitStreamsAreIndependentAndReproducible) {
  Rng root(42);
  Rng a = root.split("fast"), b = root.split("fast"), c = root.split("slow");
  EXPECT_EQ(a(), b());
  Rng a2 = root.split("fast");
  EXPECT_NE(a2(), c());
  EXPECT_EQ(root.counter(), 0u);
  Rng r1(7), r2(7);
  for (int i = 0; i < 10; ++i) r1();
  Rng resumed(r1.key(), r1.counter());
  for (int i = 0; i < 10; ++i) r2();
  EXPECT_EQ(resumed(), r2());
}
