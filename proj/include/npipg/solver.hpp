#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "npipg/core.hpp"
#include "npipg/newton_kkt.hpp"
#include "npipg/pipg.hpp"
#include "npipg/qp_model.hpp"

namespace npipg {

struct SolverConfig {
  double c = 0.99;            ///< required M-norm contraction of an accepted Newton step
  double sigma = 1e6;         ///< safeguard: ||p||_M < sigma ||R||_M
  int wait_period = 5;        ///< stable PIPG iterations before a Newton attempt
  int line_search_count = 4;  ///< candidates theta = 1, 1/2, 1/4, ...
  double kappa = 1e-2;        ///< regularization delta = kappa ||R||
  int max_regularization_retries = 8;
  double eps_abs = 1e-8;
  double eps_rel = 0.0;
  long max_iters = 1'000'000;
  double omega = 1.0;
  bool use_newton = true;
  bool equilibrate = true;      ///< row-scale (H, g) before iterating
  bool record_trace = true;
  bool record_m_norm = false;   ///< also store ||R||_M per trace row (one extra H apply)
};

inline void validate(const SolverConfig& c) {
  if (!(c.c >= 0.0 && c.c < 1.0)) throw Error("SolverConfig: c must lie in [0, 1)");
  if (!(c.sigma > 0.0)) throw Error("SolverConfig: sigma must be positive");
  if (c.wait_period < 1) throw Error("SolverConfig: wait_period must be >= 1");
  if (c.line_search_count < 1) throw Error("SolverConfig: line_search_count must be >= 1");
  if (!(c.kappa >= 0.0)) throw Error("SolverConfig: kappa must be nonnegative");
  if (!(c.eps_abs >= 0.0) || !(c.eps_rel >= 0.0)) throw Error("SolverConfig: tolerances must be >= 0");
  if (c.eps_abs == 0.0 && c.eps_rel == 0.0) throw Error("SolverConfig: eps_abs and eps_rel are both zero");
  if (c.max_iters < 1) throw Error("SolverConfig: max_iters must be >= 1");
  if (!(c.omega > 0.0)) throw Error("SolverConfig: omega must be positive");
}

enum class StepKind : std::uint8_t { Pipg, NewtonAccepted, NewtonRejected };

inline std::string_view to_string(StepKind k) {
  switch (k) {
    case StepKind::Pipg: return "pipg";
    case StepKind::NewtonAccepted: return "newton-accepted";
    case StepKind::NewtonRejected: return "newton-rejected";
  }
  return "?";
}

/// One trace row. `residual` is ||R|| at the iterate held after the row.
struct TraceRow {
  long iter = 0;
  StepKind kind = StepKind::Pipg;
  double residual = 0.0;
  double elapsed_ms = 0.0;
  double m_residual = std::numeric_limits<double>::quiet_NaN();
};

enum class SolveStatus { Converged, MaxIters };

inline std::string_view to_string(SolveStatus s) {
  return s == SolveStatus::Converged ? "Converged" : "MaxIters";
}

struct SolveReport {
  SolveStatus status = SolveStatus::MaxIters;
  Vec z;
  Vec w;
  std::vector<TraceRow> trace;
  long iterations = 0;  ///< trace rows: PIPG steps plus Newton attempts
  long pipg_count = 0;
  long newton_accept_count = 0;
  long newton_reject_count = 0;
  long newton_singular_fallbacks = 0;
  StepSizes steps;
  double h_norm = 0.0;
  /// max(||z+ - z||, ||w+ - w||) of the last PIPG step.
  double final_step = std::numeric_limits<double>::infinity();
  double final_residual = std::numeric_limits<double>::infinity();
  double solve_ms = 0.0;

  long newton_attempts() const { return newton_accept_count + newton_reject_count; }
};

using Signature = std::vector<std::int8_t>;

/// True iff at least wait_period patterns are stored, they all agree, and
/// the last Newton attempt lies at least wait_period iterations back.
inline bool newton_trigger(const std::deque<Signature>& history, int wait_period,
                           long iters_since_last_attempt) {
  if (static_cast<int>(history.size()) < wait_period) return false;
  if (iters_since_last_attempt < wait_period) return false;
  for (const auto& s : history)
    if (s != history.front()) return false;
  return true;
}

/// gamma_p = 1/alpha + ||P|| + ||H||,  gamma_d = 1/beta + ||H||.
struct TerminationScales {
  double gamma_p = 1.0;
  double gamma_d = 1.0;
};

inline TerminationScales termination_scales(const StepSizes& st, double p_norm, double h_norm) {
  return {1.0 / st.alpha + p_norm + h_norm, 1.0 / st.beta + h_norm};
}

/// next = T(prev). Stops when
///   ||z+ - z|| <= (eps_abs + eps_rel ||P z+ + q + H'w+||) / gamma_p  and
///   ||w+ - w|| <= (eps_abs + eps_rel ||H z+ - g||) / gamma_d.
inline bool check_termination(const QpProblem& p, const TerminationScales& sc,
                              const CVecRef& z, const CVecRef& w, const CVecRef& z_next,
                              const CVecRef& w_next, double eps_abs, double eps_rel) {
  double tol_p = eps_abs;
  double tol_d = eps_abs;
  if (eps_rel > 0.0) {
    const Vec grad = p.p_diagonal().cwiseProduct(z_next) + p.q + apply_h_transpose(p, w_next);
    tol_p += eps_rel * grad.norm();
    tol_d += eps_rel * (apply_h(p.h, z_next) - p.g).norm();
  }
  return (z_next - z).norm() <= tol_p / sc.gamma_p && (w_next - w).norm() <= tol_d / sc.gamma_d;
}

inline bool check_termination(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                              const CVecRef& w, const CVecRef& z_next, const CVecRef& w_next,
                              double eps_abs, double eps_rel) {
  return check_termination(p, termination_scales(st, p.p_norm(), operator_norm_h(p.h)), z, w,
                           z_next, w_next, eps_abs, eps_rel);
}

namespace detail {

inline double m_norm(const QpProblem& p, const StepSizes& st, const CVecRef& vz,
                     const CVecRef& vw) {
  return std::sqrt(std::max(0.0, m_norm_sq(p, st, vz, vw)));
}

/// The loop on the problem as given (no equilibration).
inline SolveReport solve_iterated(const QpProblem& p, const SolverConfig& cfg,
                                  const std::optional<std::pair<Vec, Vec>>& warm_start) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };

  const int nz = p.nz();
  const int nw = p.nw();
  SolveReport rep;
  rep.h_norm = operator_norm_h(p.h);
  rep.steps = choose_step_sizes(p.p_norm(), rep.h_norm, cfg.omega);
  const StepSizes st = rep.steps;
  const TerminationScales scales = termination_scales(st, p.p_norm(), rep.h_norm);

  Vec z, w;
  if (warm_start) {
    if (warm_start->first.size() != nz || warm_start->second.size() != nw) {
      throw DimensionMismatch("solve: warm start length mismatch");
    }
    z = warm_start->first;
    w = warm_start->second;
  } else {
    z = project_d(p, Vec::Zero(nz));
    w = Vec::Zero(nw);
  }

  OperatorImage img, cand_img;
  Vec sz, sw;
  apply_t_into(p, st, z, w, img, sz, sw);

  const auto residual_norm = [&](const Vec& zz, const Vec& ww, const OperatorImage& im) {
    return std::sqrt((im.z - zz).squaredNorm() + (im.w - ww).squaredNorm());
  };
  const auto push_row = [&](StepKind kind, double r, const Vec& zz, const Vec& ww,
                            const OperatorImage& im) {
    ++rep.iterations;
    if (cfg.record_trace) {
      TraceRow row{rep.iterations, kind, r, elapsed_ms(), std::numeric_limits<double>::quiet_NaN()};
      if (cfg.record_m_norm) row.m_residual = m_norm(p, st, im.z - zz, im.w - ww);
      rep.trace.push_back(row);
    }
  };

  std::deque<Signature> history;
  std::optional<Signature> blocked;
  long last_attempt = std::numeric_limits<long>::min() / 2;
  Vec z_next(nz), w_next(nw), cand_z(nz), cand_w(nw);

  while (rep.iterations < cfg.max_iters) {
    bool stepped = false;
    if (cfg.use_newton) {
      Signature sig = active_signature(p, img);
      if (blocked && *blocked != sig) blocked.reset();
      history.push_back(std::move(sig));
      while (static_cast<int>(history.size()) > cfg.wait_period + 1) history.pop_front();

      if (!blocked && newton_trigger(history, cfg.wait_period, rep.iterations - last_attempt)) {
        const Vec rz = img.z - z;
        const Vec rw = img.w - w;
        const double r_m = m_norm(p, st, rz, rw);
        const JacobianSnapshot snap = snapshot_from_image(p, img);
        if (r_m > 0.0 && !snap.differentiable) {
          blocked = history.back();
        } else if (r_m > 0.0) {
          Vec r(nz + nw);
          r << rz, rw;
          std::optional<NewtonStep> step;
          try {
            step = newton_direction(p, st, snap, r, cfg.kappa * r.norm(),
                                    cfg.max_regularization_retries);
          } catch (const SingularMiddleFactor&) {
            step.reset();
          }
          if (!step) {
            ++rep.newton_singular_fallbacks;
            blocked = history.back();
          } else {
            last_attempt = rep.iterations;
            const double p_m = m_norm(p, st, step->dz, step->dw);
            double theta = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < cfg.line_search_count; ++ls, theta *= 0.5) {
              if (!(theta * p_m < cfg.sigma * r_m)) continue;
              cand_z = z + theta * step->dz;
              cand_w = w + theta * step->dw;
              apply_t_into(p, st, cand_z, cand_w, cand_img, sz, sw);
              const double cand_m =
                  m_norm(p, st, cand_img.z - cand_z, cand_img.w - cand_w);
              if (std::isfinite(cand_m) && cand_m <= cfg.c * r_m) {
                accepted = true;
                break;
              }
            }
            if (accepted) {
              std::swap(z, cand_z);
              std::swap(w, cand_w);
              std::swap(img, cand_img);
              ++rep.newton_accept_count;
              push_row(StepKind::NewtonAccepted, residual_norm(z, w, img), z, w, img);
              stepped = true;
            } else {
              ++rep.newton_reject_count;
              blocked = history.back();
              push_row(StepKind::NewtonRejected, residual_norm(z, w, img), z, w, img);
              if (rep.iterations >= cfg.max_iters) break;
            }
          }
        }
      }
    }
    if (stepped) continue;

    // PIPG step: (z, w) <- T(z, w), already held in img.
    z_next = img.z;
    w_next = img.w;
    const double dz = (z_next - z).norm();
    const double dw = (w_next - w).norm();
    rep.final_step = std::max(dz, dw);
    const bool done = check_termination(p, scales, z, w, z_next, w_next, cfg.eps_abs, cfg.eps_rel);
    std::swap(z, z_next);
    std::swap(w, w_next);
    apply_t_into(p, st, z, w, img, sz, sw);
    ++rep.pipg_count;
    push_row(StepKind::Pipg, residual_norm(z, w, img), z, w, img);
    if (done) {
      rep.status = SolveStatus::Converged;
      break;
    }
  }

  rep.final_residual = residual_norm(z, w, img);
  rep.z = std::move(z);
  rep.w = std::move(w);
  rep.solve_ms = elapsed_ms();
  return rep;
}

}  // namespace detail

/// Globalized Newton-PIPG. Starts from warm_start or from (pi_D(0), 0).
/// Singular Newton systems fall back to PIPG steps; never throws on them.
inline SolveReport solve(const QpProblem& problem, const SolverConfig& cfg = {},
                         const std::optional<std::pair<Vec, Vec>>& warm_start = std::nullopt) {
  validate(problem);
  validate(cfg);
  if (!cfg.equilibrate) return detail::solve_iterated(problem, cfg, warm_start);
  const Equilibrated eq = equilibrate(problem);
  std::optional<std::pair<Vec, Vec>> scaled_start;
  if (warm_start) scaled_start.emplace(warm_start->first, eq.scale_dual(warm_start->second));
  SolveReport rep = detail::solve_iterated(eq.problem, cfg, scaled_start);
  rep.w = eq.unscale_dual(rep.w);
  return rep;
}

}  // namespace npipg
