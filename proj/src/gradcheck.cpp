#include "sclair/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace sclair {

namespace {

double inf_norm(const Tensor<double>& t) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

struct Group {
  std::string name;
  Tensor<double>* value;          // coordinates perturbed by the FD sweep
  const Tensor<double>* analytic; // matching analytic gradient
};

// forward: re-runs the full forward map at the current parameter/input values
// (fresh dropout stream every call). analytic gradients must already be set.
GradCheckReport run_check(const std::function<Tensor<double>()>& forward,
                          const std::vector<Group>& groups, const Tensor<double>& u, double h) {
  GradCheckReport report;
  auto phi = [&]() {
    Tensor<double> y = forward();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += u[i] * y[i];
    return s;
  };
  for (const auto& g : groups) {
    if (!g.analytic->all_finite()) {
      throw std::runtime_error("gradcheck: non-finite analytic gradient in group '" + g.name +
                               "'");
    }
    Tensor<double> fd(g.value->shape());
    for (std::size_t i = 0; i < g.value->size(); ++i) {
      const double saved = (*g.value)[i];
      (*g.value)[i] = saved + h;
      const double plus = phi();
      (*g.value)[i] = saved - h;
      const double minus = phi();
      (*g.value)[i] = saved;
      fd[i] = (plus - minus) / (2.0 * h);
    }
    if (!fd.all_finite()) {
      throw std::runtime_error("gradcheck: non-finite finite-difference value in group '" +
                               g.name + "'");
    }
    double max_abs = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      max_abs = std::max(max_abs, std::abs((*g.analytic)[i] - fd[i]));
    }
    const double scale = std::max({inf_norm(*g.analytic), inf_norm(fd), 1e-6});
    const double rel = max_abs / scale;
    report.entries.push_back({g.name, rel});
    report.max_rel_err = std::max(report.max_rel_err, rel);
    report.grad_mass = std::max({report.grad_mass, inf_norm(*g.analytic), inf_norm(fd)});
  }
  // A probe whose gradients all vanish identically (e.g. every ReLU dead at
  // this seed) would "pass" while verifying nothing; refuse it instead.
  if (report.grad_mass == 0.0) {
    throw VacuousCheck(
        "gradcheck: vacuous at this seed: every analytic and finite-difference "
        "gradient is exactly zero");
  }
  return report;
}

}  // namespace

GradCheckReport gradcheck(Layer<double>& layer, const std::vector<std::size_t>& input_shape,
                          std::uint64_t seed, double h) {
  Rng base(seed);
  Rng init_rng = base.derive(1);
  layer.init(input_shape, init_rng);

  Tensor<double> x(input_shape);
  Rng xr = base.derive(2);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = xr.normal();

  auto forward = [&]() {
    Rng drop = base.derive(3);
    LayerCache<double> cache;
    return layer.forward(x, Mode::kTrain, &drop, cache);
  };

  Tensor<double> y0 = forward();
  if (!y0.all_finite()) throw std::runtime_error("gradcheck: non-finite forward output");
  Tensor<double> u(y0.shape());
  Rng ur = base.derive(4);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = ur.normal();

  layer.zero_grads();
  Rng drop = base.derive(3);
  LayerCache<double> cache;
  Tensor<double> y = layer.forward(x, Mode::kTrain, &drop, cache);
  (void)y;
  Tensor<double> gin = layer.backward(u, cache);

  std::vector<Group> groups;
  for (auto& p : layer.params()) groups.push_back({p.name, p.value, p.grad});
  groups.push_back({"input", &x, &gin});
  return run_check(forward, groups, u, h);
}

GradCheckReport gradcheck_stack(LayerStack<double>& stack,
                                const std::vector<std::size_t>& input_shape, std::uint64_t seed,
                                double h) {
  Rng base(seed);
  Rng init_rng = base.derive(1);
  stack.init(input_shape, init_rng);

  Tensor<double> x(input_shape);
  Rng xr = base.derive(2);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = xr.normal();

  auto forward = [&]() {
    Rng drop = base.derive(3);
    return stack.forward(x, Mode::kTrain, &drop, nullptr);
  };

  Tensor<double> y0 = forward();
  if (!y0.all_finite()) throw std::runtime_error("gradcheck: non-finite forward output");
  Tensor<double> u(y0.shape());
  Rng ur = base.derive(4);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = ur.normal();

  stack.zero_grads();
  Rng drop = base.derive(3);
  std::vector<LayerCache<double>> caches;
  stack.forward(x, Mode::kTrain, &drop, &caches);
  Tensor<double> gin = stack.backward(u, caches);

  std::vector<Group> groups;
  for (auto& p : stack.params()) groups.push_back({p.name, p.value, p.grad});
  groups.push_back({"input", &x, &gin});
  return run_check(forward, groups, u, h);
}

}  // namespace sclair
