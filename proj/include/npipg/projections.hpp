#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "npipg/core.hpp"
#include "npipg/qp_model.hpp"
#include "npipg/sets.hpp"

namespace npipg {

// ---------------------------------------------------------------------------
// Projection Jacobians
// ---------------------------------------------------------------------------

namespace jac {

struct Identity {};
struct Zero {};
/// diag(mask), mask entries are 0 or 1.
struct DiagonalZeroOne {
  Vec mask;
};
/// s (I - u u'), ||u|| = 1.
struct ScaledDeflation {
  double scale = 1.0;
  Vec u;
};
struct DenseSymmetric {
  Mat m;
};
struct Projector {
  Mat m;
};

}  // namespace jac

/// Symmetric Jacobian of a projection, kept in structural form where possible.
struct ProjectionJacobian {
  using Repr = std::variant<jac::Identity, jac::Zero, jac::DiagonalZeroOne, jac::ScaledDeflation,
                            jac::DenseSymmetric, jac::Projector>;
  Repr repr;
  int dim = 0;

  Mat materialize() const {
    return std::visit(
        Overloaded{
            [&](const jac::Identity&) -> Mat { return Mat::Identity(dim, dim); },
            [&](const jac::Zero&) -> Mat { return Mat::Zero(dim, dim); },
            [&](const jac::DiagonalZeroOne& d) -> Mat { return d.mask.asDiagonal(); },
            [&](const jac::ScaledDeflation& d) -> Mat {
              return d.scale * (Mat::Identity(dim, dim) - d.u * d.u.transpose());
            },
            [&](const jac::DenseSymmetric& d) -> Mat { return d.m; },
            [&](const jac::Projector& d) -> Mat { return d.m; },
        },
        repr);
  }

  Vec apply(const CVecRef& v) const {
    return std::visit(
        Overloaded{
            [&](const jac::Identity&) -> Vec { return v; },
            [&](const jac::Zero&) -> Vec { return Vec::Zero(dim); },
            [&](const jac::DiagonalZeroOne& d) -> Vec { return d.mask.cwiseProduct(v); },
            [&](const jac::ScaledDeflation& d) -> Vec {
              return d.scale * (v - d.u * d.u.dot(v));
            },
            [&](const jac::DenseSymmetric& d) -> Vec { return d.m * v; },
            [&](const jac::Projector& d) -> Vec { return d.m * v; },
        },
        repr);
  }

  /// True for forms whose eigenbasis is the identity (diagonal Jacobians).
  bool is_diagonal() const {
    return std::holds_alternative<jac::Identity>(repr) || std::holds_alternative<jac::Zero>(repr) ||
           std::holds_alternative<jac::DiagonalZeroOne>(repr);
  }

  /// Diagonal of a diagonal form.
  Vec diagonal() const {
    if (std::holds_alternative<jac::Identity>(repr)) return Vec::Ones(dim);
    if (std::holds_alternative<jac::Zero>(repr)) return Vec::Zero(dim);
    if (auto* d = std::get_if<jac::DiagonalZeroOne>(&repr)) return d->mask;
    return materialize().diagonal();
  }
};

/// Result of `jacobian`: nullopt marks a differentiability breakpoint.
using JacobianResult = std::optional<ProjectionJacobian>;

/// J = Q diag(lambda) Q'.
struct BlockEig {
  /// Empty matrix stands for Q = I.
  Mat q;
  Vec lambda;

  bool identity_basis() const { return q.size() == 0; }

  Mat basis() const {
    return identity_basis() ? Mat(Mat::Identity(lambda.size(), lambda.size())) : q;
  }

  Mat reconstruct() const {
    Mat qq = basis();
    return qq * lambda.asDiagonal() * qq.transpose();
  }
};

// ---------------------------------------------------------------------------
// Projections onto the set families
// ---------------------------------------------------------------------------

namespace detail {

inline void project_soc_into(const CVecRef& y, VecRef out) {
  const Eigen::Index n = y.size() - 1;
  const double t = y[n];
  const double a = y.head(n).norm();
  if (a <= t) {
    out = y;
  } else if (a <= -t) {
    out.setZero();
  } else {
    const double c = 0.5 * (a + t);
    out.head(n) = (c / a) * y.head(n);
    out[n] = c;
  }
}

}  // namespace detail

/// Euclidean projection of y onto the set, written to out (may alias y).
inline void project_into(const SetConstraint& set, const CVecRef& y, VecRef out) {
  std::visit(Overloaded{
                 [&](const shape::FullSpace&) { out = y; },
                 [&](const shape::Point& s) { out = s.c; },
                 [&](const shape::Box& s) { out = y.cwiseMax(s.lo).cwiseMin(s.hi); },
                 [&](const shape::Ball& s) {
                   const double d = (y - s.center).norm();
                   if (d <= s.radius) {
                     out = y;
                   } else {
                     out = s.center + (s.radius / d) * (y - s.center);
                   }
                 },
                 [&](const shape::SecondOrderCone&) { detail::project_soc_into(y, out); },
                 [&](const shape::Halfspace& s) {
                   const double viol = s.a.dot(y) - s.b;
                   if (viol <= 0.0) {
                     out = y;
                   } else {
                     out = y - (viol / s.a.squaredNorm()) * s.a;
                   }
                 },
                 [&](const shape::AffineSubspace& s) {
                   Vec tmp = s.anchor + s.projector * (y - s.anchor);
                   out = tmp;
                 },
             },
             set.shape);
}

inline Vec project(const SetConstraint& set, const CVecRef& y) {
  if (y.size() != set.dim()) throw DimensionMismatch("project: vector length mismatch");
  Vec out(y.size());
  project_into(set, y, out);
  return out;
}

/// Jacobian of `project` at y, or nullopt exactly on a breakpoint.
inline JacobianResult jacobian(const SetConstraint& set, const CVecRef& y) {
  const int n = set.dim();
  if (y.size() != n) throw DimensionMismatch("jacobian: vector length mismatch");
  auto make = [n](ProjectionJacobian::Repr r) -> JacobianResult {
    return ProjectionJacobian{std::move(r), n};
  };
  return std::visit(
      Overloaded{
          [&](const shape::FullSpace&) { return make(jac::Identity{}); },
          [&](const shape::Point&) { return make(jac::Zero{}); },
          [&](const shape::Box& s) -> JacobianResult {
            Vec mask(n);
            for (int i = 0; i < n; ++i) {
              if (y[i] == s.lo[i] || y[i] == s.hi[i]) return std::nullopt;
              mask[i] = (y[i] > s.lo[i] && y[i] < s.hi[i]) ? 1.0 : 0.0;
            }
            if (mask.minCoeff() == 1.0) return make(jac::Identity{});
            if (mask.maxCoeff() == 0.0) return make(jac::Zero{});
            return make(jac::DiagonalZeroOne{std::move(mask)});
          },
          [&](const shape::Ball& s) -> JacobianResult {
            Vec d = y - s.center;
            const double nd = d.norm();
            if (nd == s.radius) return std::nullopt;
            if (nd < s.radius) return make(jac::Identity{});
            return make(jac::ScaledDeflation{s.radius / nd, d / nd});
          },
          [&](const shape::SecondOrderCone&) -> JacobianResult {
            const int m = n - 1;
            const double t = y[m];
            const double a = y.head(m).norm();
            if (a == t || a == -t) return std::nullopt;
            if (a < t) return make(jac::Identity{});
            if (a < -t) return make(jac::Zero{});
            Vec xh = y.head(m) / a;
            Mat j(n, n);
            j.topLeftCorner(m, m) = (0.5 * (1.0 + t / a)) * Mat::Identity(m, m) -
                                    (0.5 * t / a) * (xh * xh.transpose());
            j.topRightCorner(m, 1) = 0.5 * xh;
            j.bottomLeftCorner(1, m) = 0.5 * xh.transpose();
            j(m, m) = 0.5;
            return make(jac::DenseSymmetric{std::move(j)});
          },
          [&](const shape::Halfspace& s) -> JacobianResult {
            const double viol = s.a.dot(y) - s.b;
            if (viol == 0.0) return std::nullopt;
            if (viol < 0.0) return make(jac::Identity{});
            return make(jac::ScaledDeflation{1.0, s.a.normalized()});
          },
          [&](const shape::AffineSubspace& s) { return make(jac::Projector{s.projector}); },
      },
      set.shape);
}

/// Small integer code per set describing which smooth piece of the
/// projection y falls into. Equal signatures imply equal Jacobian structure.
inline void append_signature(const SetConstraint& set, const CVecRef& y,
                             std::vector<std::int8_t>& sig) {
  std::visit(Overloaded{
                 [&](const shape::FullSpace&) {},
                 [&](const shape::Point&) {},
                 [&](const shape::AffineSubspace&) {},
                 [&](const shape::Box& s) {
                   for (Eigen::Index i = 0; i < y.size(); ++i) {
                     sig.push_back(y[i] < s.lo[i] ? -1 : (y[i] > s.hi[i] ? 1 : 0));
                   }
                 },
                 [&](const shape::Ball& s) {
                   sig.push_back((y - s.center).norm() > s.radius ? 1 : 0);
                 },
                 [&](const shape::SecondOrderCone&) {
                   const Eigen::Index m = y.size() - 1;
                   const double a = y.head(m).norm();
                   sig.push_back(a <= y[m] ? 0 : (a <= -y[m] ? 2 : 1));
                 },
                 [&](const shape::Halfspace& s) { sig.push_back(s.a.dot(y) > s.b ? 1 : 0); },
             },
             set.shape);
}

// ---------------------------------------------------------------------------
// Polar cone K° = prod_i R^{eq_i} x R_-^{ineq_i}
// ---------------------------------------------------------------------------

inline void project_cone_polar_into(const ConeSpec& cone, const CVecRef& w, VecRef out) {
  if (w.size() != cone.dim() || out.size() != w.size()) {
    throw DimensionMismatch("project_cone_polar: vector length mismatch");
  }
  int off = 0;
  for (const auto& r : cone.rows) {
    out.segment(off, r.eq) = w.segment(off, r.eq);
    out.segment(off + r.eq, r.ineq) = w.segment(off + r.eq, r.ineq).cwiseMin(0.0);
    off += r.size();
  }
}

inline Vec project_cone_polar(const ConeSpec& cone, const CVecRef& w) {
  Vec out(w.size());
  project_cone_polar_into(cone, w, out);
  return out;
}

/// Diagonal 0/1 Jacobian of the polar-cone projection, or nullopt if any
/// inequality component is exactly zero.
inline JacobianResult jacobian_cone_polar(const ConeSpec& cone, const CVecRef& w) {
  if (w.size() != cone.dim()) throw DimensionMismatch("jacobian_cone_polar: length mismatch");
  const int n = cone.dim();
  Vec mask = Vec::Ones(n);
  int off = 0;
  for (const auto& r : cone.rows) {
    for (int k = 0; k < r.ineq; ++k) {
      const double v = w[off + r.eq + k];
      if (v == 0.0) return std::nullopt;
      mask[off + r.eq + k] = v < 0.0 ? 1.0 : 0.0;
    }
    off += r.size();
  }
  if (n == 0 || mask.minCoeff() == 1.0) return ProjectionJacobian{jac::Identity{}, n};
  if (mask.maxCoeff() == 0.0) return ProjectionJacobian{jac::Zero{}, n};
  return ProjectionJacobian{jac::DiagonalZeroOne{std::move(mask)}, n};
}

// ---------------------------------------------------------------------------
// Eigendecomposition
// ---------------------------------------------------------------------------

/// Cyclic Jacobi eigensolver for a small dense symmetric matrix. Sweeps until
/// the off-diagonal Frobenius norm is below off_tol; throws EigFailure after
/// max_sweeps.
inline BlockEig jacobi_eig(Mat a, double off_tol = 1e-13, int max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  Mat v = Mat::Identity(n, n);
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  int sweep = 0;
  while (off_norm() >= off_tol) {
    if (sweep++ >= max_sweeps) throw EigFailure("Jacobi eigensolver did not converge");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index r = p + 1; r < n; ++r) {
        const double apr = a(p, r);
        if (apr == 0.0) continue;
        const double theta = (a(r, r) - a(p, p)) / (2.0 * apr);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akr = a(k, r);
          a(k, p) = c * akp - s * akr;
          a(k, r) = s * akp + c * akr;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double ark = a(r, k);
          a(p, k) = c * apk - s * ark;
          a(r, k) = s * apk + c * ark;
        }
        a(p, r) = 0.0;
        a(r, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkr = v(k, r);
          v(k, p) = c * vkp - s * vkr;
          v(k, r) = s * vkp + c * vkr;
        }
      }
    }
  }
  return BlockEig{std::move(v), a.diagonal()};
}

namespace detail {

inline void clamp_unit_interval(Vec& lambda) {
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] < 0.0 && lambda[i] >= -1e-12) lambda[i] = 0.0;
    if (lambda[i] > 1.0 && lambda[i] <= 1.0 + 1e-12) lambda[i] = 1.0;
  }
}

/// Householder reflector whose first column is +-u.
inline Mat householder_basis(const Vec& u) {
  const Eigen::Index n = u.size();
  Vec v = u;
  // Reflect e1 onto -sign(u0) u to avoid cancellation.
  const double sgn = u[0] >= 0.0 ? 1.0 : -1.0;
  v[0] += sgn;
  const double vv = v.squaredNorm();
  Mat q = Mat::Identity(n, n);
  if (vv > 0.0) q -= (2.0 / vv) * v * v.transpose();
  return q;
}

}  // namespace detail

/// Q Lambda Q' of a projection Jacobian. Structural forms use closed forms;
/// dense forms use cyclic Jacobi. Eigenvalues within 1e-12 of [0, 1] are
/// clamped into it.
inline BlockEig eig(const ProjectionJacobian& j) {
  const int n = j.dim;
  BlockEig out = std::visit(
      Overloaded{
          [&](const jac::Identity&) { return BlockEig{Mat(), Vec::Ones(n)}; },
          [&](const jac::Zero&) { return BlockEig{Mat(), Vec::Zero(n)}; },
          [&](const jac::DiagonalZeroOne& d) { return BlockEig{Mat(), d.mask}; },
          [&](const jac::ScaledDeflation& d) {
            Vec lambda = Vec::Constant(n, d.scale);
            lambda[0] = 0.0;
            return BlockEig{detail::householder_basis(d.u), std::move(lambda)};
          },
          [&](const jac::DenseSymmetric& d) { return jacobi_eig(d.m); },
          [&](const jac::Projector& d) {
            BlockEig e = jacobi_eig(d.m);
            for (Eigen::Index i = 0; i < e.lambda.size(); ++i) {
              e.lambda[i] = e.lambda[i] > 0.5 ? 1.0 : 0.0;
            }
            return e;
          },
      },
      j.repr);
  detail::clamp_unit_interval(out.lambda);
  return out;
}

}  // namespace npipg
