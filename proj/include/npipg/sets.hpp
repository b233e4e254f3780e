#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include <Eigen/Dense>

#include "npipg/core.hpp"

namespace npipg {

namespace shape {

struct FullSpace {
  int dim = 0;
};

struct Point {
  Vec c;
};

/// { x : lo <= x <= hi } elementwise.
struct Box {
  Vec lo;
  Vec hi;
};

/// { x : ||x - center|| <= radius }.
struct Ball {
  Vec center;
  double radius = 1.0;
};

/// Lorentz cone { (x, t) : ||x|| <= t }; the last coordinate is the height t.
struct SecondOrderCone {
  int dim = 2;
};

/// { x : a'x <= b }.
struct Halfspace {
  Vec a;
  double b = 0.0;
};

/// { anchor + projector * v }. The projector is symmetric idempotent.
struct AffineSubspace {
  Mat projector;
  Vec anchor;
};

}  // namespace shape

using SetShape = std::variant<shape::FullSpace, shape::Point, shape::Box, shape::Ball,
                              shape::SecondOrderCone, shape::Halfspace, shape::AffineSubspace>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

/// One component z_ij of a stage: a convex set plus its quadratic weight.
struct SetConstraint {
  SetShape shape;
  double rho = 1.0;

  int dim() const {
    return std::visit(
        Overloaded{
            [](const shape::FullSpace& s) { return s.dim; },
            [](const shape::Point& s) { return static_cast<int>(s.c.size()); },
            [](const shape::Box& s) { return static_cast<int>(s.lo.size()); },
            [](const shape::Ball& s) { return static_cast<int>(s.center.size()); },
            [](const shape::SecondOrderCone& s) { return s.dim; },
            [](const shape::Halfspace& s) { return static_cast<int>(s.a.size()); },
            [](const shape::AffineSubspace& s) { return static_cast<int>(s.anchor.size()); },
        },
        shape);
  }

  std::string_view kind_name() const {
    return std::visit(
        Overloaded{
            [](const shape::FullSpace&) { return std::string_view("full_space"); },
            [](const shape::Point&) { return std::string_view("point"); },
            [](const shape::Box&) { return std::string_view("box"); },
            [](const shape::Ball&) { return std::string_view("ball"); },
            [](const shape::SecondOrderCone&) { return std::string_view("second_order_cone"); },
            [](const shape::Halfspace&) { return std::string_view("halfspace"); },
            [](const shape::AffineSubspace&) { return std::string_view("affine_subspace"); },
        },
        shape);
  }

  template <class S>
  bool is() const {
    return std::holds_alternative<S>(shape);
  }

  static SetConstraint full_space(int dim, double rho = 1.0) {
    return {shape::FullSpace{dim}, rho};
  }
  static SetConstraint point(Vec c, double rho = 1.0) { return {shape::Point{std::move(c)}, rho}; }
  static SetConstraint box(Vec lo, Vec hi, double rho = 1.0) {
    return {shape::Box{std::move(lo), std::move(hi)}, rho};
  }
  static SetConstraint uniform_box(int dim, double lo, double hi, double rho = 1.0) {
    return box(Vec::Constant(dim, lo), Vec::Constant(dim, hi), rho);
  }
  static SetConstraint ball(Vec center, double radius, double rho = 1.0) {
    return {shape::Ball{std::move(center), radius}, rho};
  }
  static SetConstraint second_order_cone(int dim, double rho = 1.0) {
    return {shape::SecondOrderCone{dim}, rho};
  }
  static SetConstraint halfspace(Vec a, double b, double rho = 1.0) {
    return {shape::Halfspace{std::move(a), b}, rho};
  }
  static SetConstraint affine_subspace(Mat projector, Vec anchor, double rho = 1.0) {
    return {shape::AffineSubspace{std::move(projector), std::move(anchor)}, rho};
  }

  /// Builds { x : E x = f } as (projector, anchor). E must have full row rank.
  static SetConstraint affine_from_equations(const Mat& e, const Vec& f, double rho = 1.0) {
    const int n = static_cast<int>(e.cols());
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(e);
    Mat pinv = cod.pseudoInverse();
    Mat proj = Mat::Identity(n, n) - pinv * e;
    proj = 0.5 * (proj + proj.transpose()).eval();
    Vec anchor = pinv * f;
    return affine_subspace(std::move(proj), std::move(anchor), rho);
  }
};

/// Throws MalformedSet / NonPositiveWeight when the set violates its invariants.
inline void validate_set(const SetConstraint& set) {
  if (!(set.rho > 0.0) || !std::isfinite(set.rho)) {
    throw NonPositiveWeight("set weight rho must be positive, got " + std::to_string(set.rho));
  }
  std::visit(
      Overloaded{
          [](const shape::FullSpace& s) {
            if (s.dim < 1) throw MalformedSet("full_space: dim must be >= 1");
          },
          [](const shape::Point& s) {
            if (s.c.size() < 1) throw MalformedSet("point: empty coordinates");
          },
          [](const shape::Box& s) {
            if (s.lo.size() != s.hi.size() || s.lo.size() < 1) {
              throw MalformedSet("box: lo and hi must have the same nonzero length");
            }
            for (Eigen::Index i = 0; i < s.lo.size(); ++i) {
              if (!(s.lo[i] <= s.hi[i])) {
                throw MalformedSet("box: lo[" + std::to_string(i) + "] > hi[" +
                                   std::to_string(i) + "]");
              }
            }
          },
          [](const shape::Ball& s) {
            if (s.center.size() < 1) throw MalformedSet("ball: empty center");
            if (!(s.radius > 0.0)) throw MalformedSet("ball: radius must be positive");
          },
          [](const shape::SecondOrderCone& s) {
            if (s.dim < 2) throw MalformedSet("second_order_cone: dim must be >= 2");
          },
          [](const shape::Halfspace& s) {
            if (s.a.size() < 1 || s.a.norm() == 0.0) {
              throw MalformedSet("halfspace: normal vector must be nonzero");
            }
          },
          [](const shape::AffineSubspace& s) {
            const auto n = s.anchor.size();
            if (n < 1 || s.projector.rows() != n || s.projector.cols() != n) {
              throw MalformedSet("affine_subspace: projector must be n x n with n = anchor size");
            }
            if ((s.projector - s.projector.transpose()).norm() > 1e-12) {
              throw MalformedSet("affine_subspace: projector is not symmetric");
            }
            const double scale = std::max(1.0, s.projector.norm());
            if ((s.projector * s.projector - s.projector).norm() > 1e-10 * scale) {
              throw MalformedSet("affine_subspace: projector is not idempotent");
            }
          },
      },
      set.shape);
}

}  // namespace npipg
