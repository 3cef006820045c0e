#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sclair/layers.hpp"

namespace sclair {

struct GradCheckEntry {
  std::string group;  // parameter name or "input"
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double grad_mass = 0.0;  // largest |gradient| seen anywhere; > 0 for a real check
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Thrown when every gradient (analytic and finite-difference) vanishes
// identically, i.e. the probe did not actually exercise the backward pass.
// Callers typically retry with another seed.
struct VacuousCheck : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checks the analytic backward of a scalar probe phi(y) = u.y against central
// finite differences (default h = 1e-5) on every parameter coordinate and on
// the input, in 64-bit precision. Per-group relative error:
//   max_i |analytic_i - fd_i| / max(||analytic||_inf, ||fd||_inf, 1e-6)
// The layer is (re)initialized from `seed`; dropout layers see an identical
// derived stream on every forward call, so the mask is held fixed.
// Throws on any non-finite value, naming the offending group.
GradCheckReport gradcheck(Layer<double>& layer, const std::vector<std::size_t>& input_shape,
                          std::uint64_t seed, double h = 1e-5);

// Same harness over a whole (already assembled, uninitialized) stack; used to
// verify multi-layer compositions such as the tiny encoder rigs.
GradCheckReport gradcheck_stack(LayerStack<double>& stack,
                                const std::vector<std::size_t>& input_shape, std::uint64_t seed,
                                double h = 1e-5);

}  // namespace sclair
