#include "fecil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fecil/loss.hpp"
#include "fecil/ops.hpp"
#include "fecil/rng.hpp"

namespace fecil {

namespace {

using V = Var<double>;
using Fn = std::function<V(const std::vector<V>&)>;

// <out, r> as a scalar, so non-scalar outputs get a random cotangent.
V project(const V& out, const TensorD& r) {
  double s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += out.value()[i] * r[i];
  return make_op<double>(TensorD(Shape{1}, s), {out}, [r](Node<double>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double up = (*self.grad)[0];
    for (std::size_t i = 0; i < r.size(); ++i) g[i] += up * r[i];
  });
}

TensorD randn(const Shape& s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(s);
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

// Values bounded away from zero so ReLU has no kink within h.
TensorD away_from_zero(const Shape& s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.5);
  std::bernoulli_distribution sign(0.5);
  TensorD t(s);
  for (auto& v : t.storage()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

TensorD random_distribution_rows(std::size_t b, std::size_t c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  TensorD t(Shape{b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (t.at(i, j) = u(rng));
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) /= s;
  }
  return t;
}

double evaluate(const Fn& f, const std::vector<TensorD>& inputs) {
  NoGradGuard guard;
  std::vector<V> vars;
  for (const auto& t : inputs) vars.emplace_back(t, false);
  return f(vars).value()[0];
}

GradCheckCase check(const std::string& name, std::size_t trial, const Fn& f, std::vector<TensorD> inputs, double h) {
  std::vector<V> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  backward(f(vars));

  GradCheckCase c{name, trial, 0.0, 0};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& g = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      const double up = evaluate(f, inputs);
      inputs[k][i] = keep - h;
      const double down = evaluate(f, inputs);
      inputs[k][i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g ? (*g)[i] : 0.0;
      c.max_rel_error = std::max(c.max_rel_error, relative_error(analytic, numeric));
      ++c.checked;
    }
  }
  return c;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& c : cases) w = std::max(w, std::isfinite(c.max_rel_error) ? c.max_rel_error : INFINITY);
  return w;
}

GradCheckReport run_gradcheck(std::size_t trials, std::uint64_t seed, double h, double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = substream(seed, {0x67c, t});
    auto size = [&rng](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    auto add_case = [&](const std::string& name, const Fn& f, std::vector<TensorD> in) {
      report.cases.push_back(check(name, t, f, std::move(in), h));
    };

    {
      const Shape s{size(1, 4), size(1, 5)};
      const TensorD r = randn(s, rng);
      add_case("add", [r](const std::vector<V>& v) { return project(ops::add(v[0], v[1]), r); },
               {randn(s, rng), randn(s, rng)});
      const double factor = randn(Shape{1}, rng)[0];
      add_case("scale", [r, factor](const std::vector<V>& v) { return project(ops::scale(v[0], factor), r); },
               {randn(s, rng)});
      add_case("sum", [](const std::vector<V>& v) { return ops::sum(v[0]); }, {randn(s, rng)});
      add_case("relu", [r](const std::vector<V>& v) { return project(ops::relu(v[0]), r); },
               {away_from_zero(s, rng)});
    }
    {
      const std::size_t b = size(1, 4), in = size(1, 6), out = size(1, 5);
      const TensorD r = randn(Shape{b, out}, rng);
      add_case("dense", [r](const std::vector<V>& v) { return project(ops::dense(v[0], v[1], v[2]), r); },
               {randn(Shape{b, in}, rng), randn(Shape{out, in}, rng), randn(Shape{out}, rng)});
      add_case("dense_nobias", [r](const std::vector<V>& v) { return project(ops::dense(v[0], v[1], V()), r); },
               {randn(Shape{b, in}, rng), randn(Shape{out, in}, rng)});
    }
    {
      const std::size_t n = size(1, 2), c = size(1, 3), o = size(1, 3), hw = size(3, 6);
      const int k = static_cast<int>(size(1, 3)), stride = static_cast<int>(size(1, 2));
      const int pad = static_cast<int>(size(0, 1));
      if (static_cast<int>(hw) + 2 * pad >= k) {
        const std::size_t ho = (hw + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k)) / stride + 1;
        const TensorD r = randn(Shape{n, o, ho, ho}, rng);
        add_case("conv2d",
                 [r, stride, pad](const std::vector<V>& v) { return project(ops::conv2d(v[0], v[1], stride, pad), r); },
                 {randn(Shape{n, c, hw, hw}, rng), randn(Shape{o, c, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng)});
      }
    }
    {
      // Two values per channel make the normalized output nearly constant,
      // so the gradient sinks to the finite-difference noise floor.
      const std::size_t c = size(1, 3), hw = size(1, 3), n = hw == 1 ? size(3, 4) : size(2, 3);
      const Shape s4{n, c, hw, hw};
      const TensorD r4 = randn(s4, rng);
      add_case("batchnorm_train_4d",
               [r4, c](const std::vector<V>& v) {
                 ops::BatchNormStats<double> st(c);
                 return project(ops::batchnorm(v[0], v[1], v[2], st, ops::BnMode::train, false), r4);
               },
               {randn(s4, rng, 2.0), randn(Shape{c}, rng), randn(Shape{c}, rng)});
      const Shape s2{size(3, 6), c};
      const TensorD r2 = randn(s2, rng);
      add_case("batchnorm_train_2d",
               [r2, c](const std::vector<V>& v) {
                 ops::BatchNormStats<double> st(c);
                 return project(ops::batchnorm(v[0], v[1], v[2], st, ops::BnMode::train, false), r2);
               },
               {randn(s2, rng, 2.0), randn(Shape{c}, rng), randn(Shape{c}, rng)});
      ops::BatchNormStats<double> fixed(c);
      std::uniform_real_distribution<double> var(0.5, 2.0);
      for (std::size_t i = 0; i < c; ++i) {
        fixed.mean[i] = randn(Shape{1}, rng)[0];
        fixed.var[i] = var(rng);
      }
      add_case("batchnorm_eval",
               [r4, fixed](const std::vector<V>& v) {
                 auto st = fixed;
                 return project(ops::batchnorm(v[0], v[1], v[2], st, ops::BnMode::eval, false), r4);
               },
               {randn(s4, rng), randn(Shape{c}, rng), randn(Shape{c}, rng)});
    }
    {
      const std::size_t n = size(1, 3), c = size(1, 4), hw = size(1, 4);
      const TensorD r = randn(Shape{n, c}, rng);
      add_case("global_avg_pool", [r](const std::vector<V>& v) { return project(ops::global_avg_pool(v[0]), r); },
               {randn(Shape{n, c, hw, hw}, rng)});
    }
    {
      const std::size_t b = size(1, 3), a = size(1, 4), c = size(1, 4);
      const TensorD r = randn(Shape{b, a + c}, rng);
      add_case("concat",
               [r](const std::vector<V>& v) { return project(ops::concat<double>({v[0], v[1]}, 1), r); },
               {randn(Shape{b, a}, rng), randn(Shape{b, c}, rng)});
    }
    {
      const std::size_t b = size(1, 4), c = size(2, 6);
      const TensorD targets = random_distribution_rows(b, c, rng);
      add_case("softmax_cross_entropy",
               [targets](const std::vector<V>& v) { return softmax_cross_entropy(v[0], targets); },
               {randn(Shape{b, c}, rng, 2.0)});
      const TensorD teacher = randn(Shape{b, c}, rng, 2.0);
      const double tau = std::uniform_real_distribution<double>(0.5, 4.0)(rng);
      add_case("distillation_loss",
               [teacher, tau](const std::vector<V>& v) { return distillation_loss(v[0], teacher, tau); },
               {randn(Shape{b, c}, rng, 2.0)});
    }
  }
  return report;
}

}  // namespace fecil
