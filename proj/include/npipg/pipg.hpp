#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "npipg/core.hpp"
#include "npipg/projections.hpp"
#include "npipg/qp_model.hpp"

namespace npipg {

/// Primal/dual step sizes. Invariant: alpha (||P|| + beta ||H||^2) <= 0.99.
struct StepSizes {
  double alpha = 0.0;
  double beta = 0.0;
};

/// Safety margin kept below the averagedness bound alpha(||P|| + beta||H||^2) < 1.
inline constexpr double kStepMargin = 0.99;

/// beta = omega * alpha with alpha the positive root of
/// alpha ||P|| + omega alpha^2 ||H||^2 = 0.99.
inline StepSizes choose_step_sizes(double p_norm, double h_norm, double omega = 1.0) {
  if (!(omega > 0.0)) throw Error("choose_step_sizes: omega must be positive");
  if (p_norm <= 0.0 && h_norm <= 0.0) {
    throw DegenerateProblem("choose_step_sizes: ||P|| and ||H|| are both zero");
  }
  const double quad = omega * h_norm * h_norm;
  // Cancellation-free root of quad a^2 + p a - m = 0.
  const double alpha =
      2.0 * kStepMargin / (p_norm + std::sqrt(p_norm * p_norm + 4.0 * quad * kStepMargin));
  return {alpha, omega * alpha};
}

inline StepSizes choose_step_sizes(const QpProblem& p, double omega = 1.0,
                                   std::optional<double> h_norm = std::nullopt) {
  return choose_step_sizes(p.p_norm(), h_norm ? *h_norm : operator_norm_h(p.h), omega);
}

/// T(z, w) together with the points the projections were evaluated at.
struct OperatorImage {
  Vec z;      ///< z+ = pi_D[z_pre]
  Vec w;      ///< w+ = pi_K°[w_pre]
  Vec z_pre;  ///< z - alpha (P z + q + H'w)
  Vec w_pre;  ///< w + beta (H(2 z+ - z) - g)

  void resize(int nz, int nw) {
    z.resize(nz);
    w.resize(nw);
    z_pre.resize(nz);
    w_pre.resize(nw);
  }
};

/// Applies pi_D blockwise, set by set.
inline void project_d_into(const QpProblem& p, const CVecRef& y, VecRef out) {
  int off = 0;
  for (const auto& st : p.stages)
    for (const auto& s : st) {
      const int d = s.dim();
      project_into(s, y.segment(off, d), out.segment(off, d));
      off += d;
    }
}

inline Vec project_d(const QpProblem& p, const CVecRef& y) {
  Vec out(y.size());
  project_d_into(p, y, out);
  return out;
}

/// One PIPG update
///   z+ = pi_D[z - alpha (P z + q + H'w)]
///   w+ = pi_K°[w + beta (H(2 z+ - z) - g)]
/// writing into `out`. `scratch_z`/`scratch_w` avoid per-call allocation.
inline void apply_t_into(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                         const CVecRef& w, OperatorImage& out, Vec& scratch_z, Vec& scratch_w) {
  const int nz = p.nz();
  const int nw = p.nw();
  if (z.size() != nz || w.size() != nw) throw DimensionMismatch("apply_t: iterate length mismatch");
  out.resize(nz, nw);
  scratch_z.resize(nz);
  scratch_w.resize(nw);

  apply_h_transpose_into(p.h, w, scratch_z);
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      const int d = s.dim();
      out.z_pre.segment(off, d) =
          z.segment(off, d) - st.alpha * (s.rho * z.segment(off, d) + p.q.segment(off, d) +
                                          scratch_z.segment(off, d));
      project_into(s, out.z_pre.segment(off, d), out.z.segment(off, d));
      off += d;
    }

  scratch_z = 2.0 * out.z - z;
  apply_h_into(p.h, scratch_z, scratch_w);
  out.w_pre = w + st.beta * (scratch_w - p.g);
  project_cone_polar_into(p.cone, out.w_pre, out.w);
}

inline OperatorImage apply_t_full(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                                  const CVecRef& w) {
  OperatorImage out;
  Vec sz, sw;
  apply_t_into(p, st, z, w, out, sz, sw);
  return out;
}

inline std::pair<Vec, Vec> apply_t(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                                   const CVecRef& w) {
  OperatorImage img = apply_t_full(p, st, z, w);
  return {std::move(img.z), std::move(img.w)};
}

/// Current primal-dual iterate with a cache of T(z, w).
struct PipgState {
  Vec z;
  Vec w;
  std::optional<OperatorImage> image;
  std::optional<double> residual_norm;

  void invalidate() {
    image.reset();
    residual_norm.reset();
  }
};

/// R(z, w) = T(z, w) - (z, w) stacked as (R_z, R_w), and its Euclidean norm.
/// Fills the state's cache.
inline std::pair<Vec, double> residual(const QpProblem& p, const StepSizes& st, PipgState& s) {
  if (!s.image) s.image = apply_t_full(p, st, s.z, s.w);
  const int nz = p.nz();
  Vec r(nz + p.nw());
  r.head(nz) = s.image->z - s.z;
  r.tail(p.nw()) = s.image->w - s.w;
  const double n = r.norm();
  s.residual_norm = n;
  return {std::move(r), n};
}

inline std::pair<Vec, double> residual(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                                       const CVecRef& w) {
  PipgState s{z, w, std::nullopt, std::nullopt};
  return residual(p, st, s);
}

/// ||v||_M^2 = (1/alpha)||v_z||^2 - v_z'P v_z + (1/beta)||v_w||^2 - 2 v_w'H v_z.
inline double m_norm_sq(const QpProblem& p, const StepSizes& st, const CVecRef& vz,
                        const CVecRef& vw) {
  if (vz.size() != p.nz() || vw.size() != p.nw()) {
    throw DimensionMismatch("m_norm_sq: vector length mismatch");
  }
  double pz = 0.0;
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      pz += s.rho * vz.segment(off, s.dim()).squaredNorm();
      off += s.dim();
    }
  const double cross = p.nw() > 0 ? vw.dot(apply_h(p.h, vz)) : 0.0;
  return vz.squaredNorm() / st.alpha - pz + vw.squaredNorm() / st.beta - 2.0 * cross;
}

/// Structural signature of the projections at the pre-projection points of
/// an operator image: which smooth piece of pi_D each set sits in, and the
/// sign pattern of the inequality duals.
inline std::vector<std::int8_t> active_signature(const QpProblem& p, const OperatorImage& img) {
  std::vector<std::int8_t> sig;
  sig.reserve(p.nz() + p.nw());
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      append_signature(s, img.z_pre.segment(off, s.dim()), sig);
      off += s.dim();
    }
  off = 0;
  for (const auto& r : p.cone.rows) {
    for (int k = 0; k < r.ineq; ++k) sig.push_back(img.w_pre[off + r.eq + k] < 0.0 ? 1 : 0);
    off += r.size();
  }
  return sig;
}

}  // namespace npipg
