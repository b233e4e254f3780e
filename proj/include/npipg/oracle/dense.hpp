#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "npipg/core.hpp"
#include "npipg/newton_kkt.hpp"
#include "npipg/pipg.hpp"
#include "npipg/projections.hpp"
#include "npipg/qp_model.hpp"

// Brute-force references for tests. O(n^3) throughout.
namespace npipg::oracle {

class SingularDense : public Error {
 public:
  using Error::Error;
};

inline Mat dense_h(const QpProblem& p) {
  Mat h = Mat::Zero(p.nw(), p.nz());
  const auto zoff = p.stage_offsets();
  const auto woff = p.row_offsets();
  for (int i = 0; i < p.h.block_rows(); ++i) {
    const int ni = p.h.row_dim(i);
    h.block(woff[i], zoff[i], ni, p.h.a[i].cols()) = p.h.a[i];
    h.block(woff[i], zoff[i + 1], ni, p.h.b[i].cols()) = p.h.b[i];
  }
  return h;
}

inline Mat dense_p(const QpProblem& p) { return p.p_diagonal().asDiagonal(); }

inline Mat dense_jd(const QpProblem& p, const JacobianSnapshot& snap) {
  Mat j = Mat::Zero(p.nz(), p.nz());
  int off = 0;
  for (const auto& b : snap.d_blocks) {
    j.block(off, off, b.jac.dim, b.jac.dim) = b.jac.materialize();
    off += b.jac.dim;
  }
  return j;
}

/// J_T as the four blocks
///   dz+/dz = J_D (I - alpha P)            dz+/dw = -alpha J_D H'
///   dw+/dz = J_K beta H (-I + 2 J_D (I - alpha P))
///   dw+/dw = J_K + 2 J_K beta H J_D (-alpha H')
inline Mat dense_jt(const QpProblem& p, const StepSizes& st, const JacobianSnapshot& snap) {
  if (!snap.differentiable) throw Error("dense_jt: snapshot is not differentiable");
  const int nz = p.nz();
  const int nw = p.nw();
  const Mat h = dense_h(p);
  const Mat jd = dense_jd(p, snap);
  const Mat jk = snap.k_mask.asDiagonal();
  const Mat i_ap = Mat::Identity(nz, nz) - st.alpha * dense_p(p);
  Mat jt(nz + nw, nz + nw);
  jt.topLeftCorner(nz, nz) = jd * i_ap;
  jt.topRightCorner(nz, nw) = -st.alpha * jd * h.transpose();
  jt.bottomLeftCorner(nw, nz) = jk * (st.beta * h) * (-Mat::Identity(nz, nz) + 2.0 * jd * i_ap);
  jt.bottomRightCorner(nw, nw) = jk + 2.0 * jk * (st.beta * h) * jd * (-st.alpha * h.transpose());
  return jt;
}

struct DenseSystem {
  Mat matrix;
  Vec rhs;
};

/// (I - J_T) p = T(z, w) - (z, w).
inline DenseSystem dense_newton_system(const QpProblem& p, const StepSizes& st,
                                       const JacobianSnapshot& snap, const CVecRef& z,
                                       const CVecRef& w) {
  const int n = p.nz() + p.nw();
  DenseSystem sys;
  sys.matrix = Mat::Identity(n, n) - dense_jt(p, st, snap);
  sys.rhs = residual(p, st, z, w).first;
  return sys;
}

/// Dense LU with full pivoting. Throws SingularDense when a pivot falls below
/// 1e-12 of the largest one or the solution is not finite.
inline std::pair<Vec, Vec> dense_newton_solve(const QpProblem& p, const StepSizes& st,
                                              const JacobianSnapshot& snap, const CVecRef& z,
                                              const CVecRef& w) {
  const DenseSystem sys = dense_newton_system(p, st, snap, z, w);
  Eigen::FullPivLU<Mat> lu(sys.matrix);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw SingularDense("dense_newton_solve: matrix is singular");
  const Vec x = lu.solve(sys.rhs);
  if (!x.allFinite()) throw SingularDense("dense_newton_solve: non-finite solution");
  return {x.head(p.nz()), x.tail(p.nw())};
}

/// Central differences of T at (z, w), step h.
inline Mat fd_jacobian_t(const QpProblem& p, const StepSizes& st, const CVecRef& z,
                         const CVecRef& w, double h = 1e-6) {
  const int nz = p.nz();
  const int nw = p.nw();
  Vec x(nz + nw);
  x << z, w;
  Mat j(nz + nw, nz + nw);
  for (int k = 0; k < nz + nw; ++k) {
    Vec xp = x;
    Vec xm = x;
    xp[k] += h;
    xm[k] -= h;
    const auto [zp, wp] = apply_t(p, st, xp.head(nz), xp.tail(nw));
    const auto [zm, wm] = apply_t(p, st, xm.head(nz), xm.tail(nw));
    j.col(k).head(nz) = (zp - zm) / (2.0 * h);
    j.col(k).tail(nw) = (wp - wm) / (2.0 * h);
  }
  return j;
}

/// Central differences of one set's projection at y, step h.
inline Mat fd_projection_jacobian(const SetConstraint& s, const CVecRef& y, double h = 1e-6) {
  const int n = static_cast<int>(y.size());
  Mat j(n, n);
  for (int k = 0; k < n; ++k) {
    Vec yp = y;
    Vec ym = y;
    yp[k] += h;
    ym[k] -= h;
    j.col(k) = (project(s, yp) - project(s, ym)) / (2.0 * h);
  }
  return j;
}

/// Euclidean distance from y to the nearest nondifferentiability point of the
/// set's projection (infinity for sets with a linear projection).
inline double breakpoint_distance(const SetConstraint& s, const CVecRef& y) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  return std::visit(
      Overloaded{
          [&](const shape::FullSpace&) { return kInf; },
          [&](const shape::Point&) { return kInf; },
          [&](const shape::AffineSubspace&) { return kInf; },
          [&](const shape::Box& b) {
            return std::min((y - b.lo).cwiseAbs().minCoeff(), (y - b.hi).cwiseAbs().minCoeff());
          },
          [&](const shape::Ball& b) { return std::abs((y - b.center).norm() - b.radius); },
          [&](const shape::SecondOrderCone&) {
            const double a = y.head(y.size() - 1).norm();
            const double t = y[y.size() - 1];
            return std::min(std::abs(a - t), std::abs(a + t)) / std::sqrt(2.0);
          },
          [&](const shape::Halfspace& h) { return std::abs(h.a.dot(y) - h.b) / h.a.norm(); },
      },
      s.shape);
}

/// Smallest breakpoint distance over all sets at the z pre-image and over the
/// inequality components of the w pre-image of T(z, w).
inline double breakpoint_distance(const QpProblem& p, const OperatorImage& img) {
  double d = std::numeric_limits<double>::infinity();
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      d = std::min(d, breakpoint_distance(s, img.z_pre.segment(off, s.dim())));
      off += s.dim();
    }
  off = 0;
  for (const auto& r : p.cone.rows) {
    for (int k = 0; k < r.ineq; ++k) d = std::min(d, std::abs(img.w_pre[off + r.eq + k]));
    off += r.size();
  }
  return d;
}

}  // namespace npipg::oracle
