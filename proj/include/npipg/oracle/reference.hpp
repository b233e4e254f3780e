#pragma once

#include <string>
#include <utility>

#include "npipg/core.hpp"
#include "npipg/qp_model.hpp"
#include "npipg/solver.hpp"

namespace npipg::oracle {

struct ReferenceSolution {
  Vec z;
  Vec w;
  long iterations = 0;
};

/// Plain PIPG from (pi_D(0), 0) until the termination test at eps_abs = tol.
/// Throws NoConvergence when the iteration cap is reached.
inline ReferenceSolution reference_solve(const QpProblem& p, double tol,
                                         long max_iters = 5'000'000) {
  SolverConfig cfg;
  cfg.use_newton = false;
  cfg.equilibrate = false;
  cfg.record_trace = false;
  cfg.eps_abs = tol;
  cfg.eps_rel = 0.0;
  cfg.max_iters = max_iters;
  SolveReport rep = solve(p, cfg);
  if (rep.status != SolveStatus::Converged) {
    throw NoConvergence("reference_solve: no convergence within " + std::to_string(max_iters) +
                        " iterations");
  }
  return {std::move(rep.z), std::move(rep.w), rep.iterations};
}

}  // namespace npipg::oracle
