#pragma once

#include <algorithm>
#include <cmath>
#include <variant>

#include "npipg/core.hpp"
#include "npipg/pipg.hpp"
#include "npipg/projections.hpp"
#include "npipg/qp_model.hpp"

namespace npipg::oracle {

struct KktDistances {
  double primal = 0.0;  ///< dist(-(Pz + q + H'w), N_D(z))
  double dual = 0.0;    ///< dist(Hz - g, N_K°(w))
  bool z_projected = false;
  bool w_projected = false;
};

namespace detail {

inline double boundary_tol(double scale) { return 1e-9 * std::max(1.0, scale); }

/// Distance from v to the ray { s d : s >= 0 }.
inline double dist_to_ray(const Vec& v, const Vec& d) {
  const double dd = d.squaredNorm();
  if (dd == 0.0) return v.norm();
  const double s = std::max(0.0, v.dot(d) / dd);
  return (v - s * d).norm();
}

/// Squared distance from v to the normal cone of the set at z.
inline double normal_cone_dist_sq(const SetConstraint& set, const CVecRef& z, const CVecRef& v) {
  return std::visit(
      Overloaded{
          [&](const shape::FullSpace&) { return v.squaredNorm(); },
          [&](const shape::Point&) { return 0.0; },
          [&](const shape::Box& b) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < z.size(); ++k) {
              const bool at_lo = z[k] <= b.lo[k];
              const bool at_hi = z[k] >= b.hi[k];
              double d = 0.0;
              if (at_lo && at_hi) d = 0.0;
              else if (at_lo) d = std::max(v[k], 0.0);
              else if (at_hi) d = std::max(-v[k], 0.0);
              else d = std::abs(v[k]);
              acc += d * d;
            }
            return acc;
          },
          [&](const shape::Ball& b) {
            const Vec off = z - b.center;
            const double r = off.norm();
            if (r < b.radius - boundary_tol(b.radius)) return v.squaredNorm();
            const double d = dist_to_ray(v, off);
            return d * d;
          },
          [&](const shape::SecondOrderCone&) {
            const Eigen::Index n = z.size() - 1;
            const double a = z.head(n).norm();
            const double t = z[n];
            const double tol = boundary_tol(std::abs(t));
            if (a < t - tol) return v.squaredNorm();
            if (z.norm() <= tol) {
              // N at the apex is the polar cone -K; dist(v, -K) = ||proj_K(v)||.
              const SetConstraint k = SetConstraint::second_order_cone(static_cast<int>(z.size()));
              return project(k, v).squaredNorm();
            }
            Vec d(z.size());
            d.head(n) = z.head(n) / a;
            d[n] = -1.0;
            const double dist = dist_to_ray(v, d);
            return dist * dist;
          },
          [&](const shape::Halfspace& h) {
            const double slack = h.b - h.a.dot(z);
            if (slack > boundary_tol(std::abs(h.b) + h.a.norm() * z.norm())) return v.squaredNorm();
            const double d = dist_to_ray(v, h.a);
            return d * d;
          },
          [&](const shape::AffineSubspace& a) { return (a.projector * v).squaredNorm(); },
      },
      set.shape);
}

}  // namespace detail

/// Distances of the stationarity and dual residuals to the normal cones.
/// Points outside D or K° are projected first and flagged.
inline KktDistances kkt_distances(const QpProblem& p, const CVecRef& z_in, const CVecRef& w_in) {
  KktDistances out;
  Vec z = project_d(p, z_in);
  Vec w = project_cone_polar(p.cone, w_in);
  out.z_projected = (z - z_in).norm() > 1e-12 * std::max(1.0, z_in.norm());
  out.w_projected = (w - w_in).norm() > 0.0;
  if (!out.z_projected) z = z_in;

  const Vec v = -(p.p_diagonal().cwiseProduct(z) + p.q + apply_h_transpose(p, w));
  double acc = 0.0;
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      acc += detail::normal_cone_dist_sq(s, z.segment(off, s.dim()), v.segment(off, s.dim()));
      off += s.dim();
    }
  out.primal = std::sqrt(acc);

  // K° = R^eq x R_-^ineq: equality components have normal cone {0}; an
  // inequality component has {0} where w < 0 and R_+ where w = 0.
  const Vec r = apply_h(p.h, z) - p.g;
  acc = 0.0;
  off = 0;
  for (const auto& row : p.cone.rows) {
    for (int k = 0; k < row.size(); ++k) {
      const int j = off + k;
      const double d = (k >= row.eq && w[j] >= 0.0) ? std::max(-r[j], 0.0) : std::abs(r[j]);
      acc += d * d;
    }
    off += row.size();
  }
  out.dual = std::sqrt(acc);
  return out;
}

}  // namespace npipg::oracle
