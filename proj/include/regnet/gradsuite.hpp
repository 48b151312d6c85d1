#pragma once

#include <functional>

#include "regnet/tape.hpp"

namespace regnet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // parameter name and flat index of the worst coordinate
};

// Central-difference check of reverse-mode gradients. build_loss must record
// a fresh forward pass (binding every parameter in params via tape.param)
// and return the scalar loss node. Relative error uses
// |ad - fd| / max(|ad|, |fd|, floor).
GradCheckReport check_gradients(const std::function<Var(Tape<double>&)>& build_loss,
                                const std::vector<Parameter<double>*>& params, double step = 1e-5,
                                double floor = 1e-3);

struct GradCase {
  std::string name;
  std::function<GradCheckReport()> run;
};

// One pinned-seed case per differentiable operation, cell kind (2-step
// unroll) and block type, at tiny double-precision geometries.
std::vector<GradCase> standard_grad_suite();

}  // namespace regnet
