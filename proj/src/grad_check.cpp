#include "ltr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ltr {

double grad_rel_err(double analytic, double numeric) {
  const double scale =
      std::max({std::abs(analytic), std::abs(numeric), kGradScaleFloor});
  return std::abs(analytic - numeric) / scale;
}

void GradCheckReport::merge(const GradCheckReport& other) {
  n_checked += other.n_checked;
  if (other.max_rel_err > max_rel_err || worst_input.empty()) {
    max_rel_err = std::max(max_rel_err, other.max_rel_err);
    worst_input = other.worst_input;
    worst_index = other.worst_index;
    worst_analytic = other.worst_analytic;
    worst_numeric = other.worst_numeric;
  }
}

namespace {

double finite_value(Graph<double>& g, Var out, const std::string& name) {
  const double v = g.value(out).item();
  if (!std::isfinite(v)) {
    throw NonFiniteError("grad_check(" + name + "): function is not finite");
  }
  return v;
}

void record(GradCheckReport& rep, const std::string& input, std::size_t index,
            double analytic, double numeric) {
  const double e = grad_rel_err(analytic, numeric);
  ++rep.n_checked;
  if (e > rep.max_rel_err || rep.worst_input.empty()) {
    rep.max_rel_err = std::max(rep.max_rel_err, e);
    rep.worst_input = input;
    rep.worst_index = index;
    rep.worst_analytic = analytic;
    rep.worst_numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const ScalarFn& f,
                           const std::vector<Tensor<double>>& inputs,
                           const std::vector<std::string>& input_names,
                           double h) {
  GradCheckReport rep;
  rep.name = name;

  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
    Var out = f(g, vars);
    finite_value(g, out, name);
    g.backward(out);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      analytic.push_back(g.has_grad(vars[k]) ? g.grad(vars[k])
                                             : Tensor<double>(inputs[k].shape()));
    }
  }

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(g.view(t));
    return finite_value(g, f(g, vars), name);
  };

  std::vector<Tensor<double>> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k) {
    const std::string label = k < input_names.size() ? input_names[k]
                                                     : "input" + std::to_string(k);
    for (std::size_t i = 0; i < work[k].numel(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double fp = eval(work);
      work[k][i] = x0 - h;
      const double fm = eval(work);
      work[k][i] = x0;
      record(rep, label, i, analytic[k][i], (fp - fm) / (2 * h));
    }
  }
  return rep;
}

GradCheckReport grad_check_params(const std::string& name, const ParamFn& f,
                                  std::span<Parameter<double>* const> params,
                                  std::size_t max_per_param, Rng rng, double h) {
  GradCheckReport rep;
  rep.name = name;
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    Var out = f(g);
    finite_value(g, out, name);
    g.backward(out);
  }
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&] {
    Graph<double> g;
    return finite_value(g, f(g), name);
  };

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<double>& p = *params[k];
    std::vector<std::size_t> idx(p.value.numel());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    if (max_per_param > 0 && idx.size() > max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_param);
    }
    for (std::size_t i : idx) {
      const double x0 = p.value[i];
      p.value[i] = x0 + h;
      const double fp = eval();
      p.value[i] = x0 - h;
      const double fm = eval();
      p.value[i] = x0;
      record(rep, p.name, i, analytic[k][i], (fp - fm) / (2 * h));
    }
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

}  // namespace ltr
