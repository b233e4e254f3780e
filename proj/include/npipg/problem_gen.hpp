#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "npipg/core.hpp"
#include "npipg/qp_model.hpp"
#include "npipg/sets.hpp"

namespace npipg {

/// Matrix exponential by scaling and squaring around a degree-6 diagonal
/// Pade approximant. The argument is scaled until its 1-norm is <= 1/2,
/// where the truncation error is below 1e-16 relative.
inline Mat expm(const Mat& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("expm: matrix must be square");
  const int n = static_cast<int>(a.rows());
  if (n == 0) return a;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const Mat x = a / std::ldexp(1.0, squarings);

  constexpr int kDegree = 6;
  std::array<double, kDegree + 1> c{};
  c[0] = 1.0;
  for (int k = 1; k <= kDegree; ++k) {
    c[k] = c[k - 1] * (kDegree - k + 1) / (static_cast<double>(k) * (2 * kDegree - k + 1));
  }
  Mat num = Mat::Identity(n, n) * c[0];
  Mat den = num;
  Mat pow = Mat::Identity(n, n);
  for (int k = 1; k <= kDegree; ++k) {
    pow = (pow * x).eval();
    num += c[k] * pow;
    den += ((k % 2) ? -c[k] : c[k]) * pow;
  }
  Mat e = den.partialPivLu().solve(num);
  for (int s = 0; s < squarings; ++s) e = (e * e).eval();
  return e;
}

/// xorshift64* generator (Vigna). The 64-bit seed is expanded through one
/// splitmix64 round so that seed 0 is valid. Normal draws use the cosine
/// branch of Box-Muller with u1 = 1 - uniform so that log(u1) is finite.
class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    state_ = z ? z : 0x9E3779B97F4A7C15ULL;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

struct OscMassConfig {
  int n_masses = 8;
  int horizon = 20;  ///< N; stages 0..N carry (x, u), stage N+1 carries x
  double u_bound = 1.0;
  double x_bound = 1.0;
  std::uint64_t seed = 0;
  double init_std = 0.3;
};

inline void validate(const OscMassConfig& c) {
  if (c.n_masses < 2) throw Error("OscMassConfig: n_masses must be >= 2");
  if (c.horizon < 1) throw Error("OscMassConfig: horizon must be >= 1");
  if (!(c.u_bound > 0.0) || !(c.x_bound > 0.0)) throw Error("OscMassConfig: bounds must be positive");
  if (!(c.init_std >= 0.0)) throw Error("OscMassConfig: init_std must be nonnegative");
}

/// Spring-chain stiffness: 2 on the diagonal, -1 on the off-diagonals.
inline Mat chain_laplacian(int m) {
  Mat l = Mat::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    l(i, i) = 2.0;
    if (i + 1 < m) l(i, i + 1) = l(i + 1, i) = -1.0;
  }
  return l;
}

struct LinearDynamics {
  Mat a;
  Mat b;
};

/// Exact discretization of x' = [[0, I], [-L, 0]] x + [0; I] u with the
/// input held constant over a step of length dt.
inline LinearDynamics oscillating_masses_dynamics(int m, double dt) {
  const int n = 2 * m;
  Mat cont = Mat::Zero(n, n);
  cont.topRightCorner(m, m).setIdentity();
  cont.bottomLeftCorner(m, m) = -chain_laplacian(m);
  // exp([[M, I], [0, 0]] dt): top-left block exp(M dt), top-right block
  // the integral of exp(M s) over [0, dt].
  Mat aug = Mat::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = cont * dt;
  aug.topRightCorner(n, n) = Mat::Identity(n, n) * dt;
  const Mat e = expm(aug);
  Mat input = Mat::Zero(n, m);
  input.bottomRows(m).setIdentity();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, n) * input};
}

/// Initial state: per-coordinate Normal(0, init_std^2), clipped to the box.
inline Vec oscillating_masses_initial_state(const OscMassConfig& c) {
  Xorshift64Star rng(c.seed);
  Vec x0(2 * c.n_masses);
  for (auto& v : x0) v = std::clamp(rng.normal(0.0, c.init_std), -c.x_bound, c.x_bound);
  return x0;
}

inline QpProblem gen_oscillating_masses(const OscMassConfig& c) {
  validate(c);
  const int m = c.n_masses;
  const int nx = 2 * m;
  const int nu = m;
  const int big_n = c.horizon;
  const LinearDynamics dyn = oscillating_masses_dynamics(m, 3.0 / big_n);
  const Vec x0 = oscillating_masses_initial_state(c);

  QpProblem p;
  for (int i = 0; i <= big_n; ++i) {
    p.stages.push_back({SetConstraint::uniform_box(nx, -c.x_bound, c.x_bound),
                        SetConstraint::uniform_box(nu, -c.u_bound, c.u_bound)});
  }
  p.stages.push_back({SetConstraint::uniform_box(nx, -c.x_bound, c.x_bound)});
  p.q = Vec::Zero(p.nz());

  std::vector<double> g;
  for (int i = 0; i <= big_n; ++i) {
    const int init = i == 0 ? nx : 0;
    const int rows = init + nx;
    const int next_dim = i < big_n ? nx + nu : nx;
    RowMat a = RowMat::Zero(rows, nx + nu);
    RowMat b = RowMat::Zero(rows, next_dim);
    if (init) {
      a.topLeftCorner(nx, nx).setIdentity();
      for (int k = 0; k < nx; ++k) g.push_back(x0[k]);
    }
    // A x_i + B u_i - x_{i+1} = 0
    a.block(init, 0, nx, nx) = dyn.a;
    a.block(init, nx, nx, nu) = dyn.b;
    b.block(init, 0, nx, nx) = -RowMat::Identity(nx, nx);
    for (int k = 0; k < nx; ++k) g.push_back(0.0);
    p.h.a.push_back(std::move(a));
    p.h.b.push_back(std::move(b));
    p.cone.rows.push_back({rows, 0});
  }
  p.g = Eigen::Map<Vec>(g.data(), static_cast<Eigen::Index>(g.size()));
  return p;
}

/// Powered-descent landing QP in nondimensional units (length 1000 m,
/// time 10 s). Physical quantities below are SI.
struct PdgConfig {
  int horizon = 30;  ///< number of time points; the last carries state only
  double final_time = 60.0;
  Eigen::Vector3d r_init{0.0, 0.0, 2000.0};
  Eigen::Vector3d v_init{0.0, 0.0, 0.0};
  double gravity = 3.7114;
  double mass_wet = 1905.0;
  double mass_dry = 1505.0;
  double specific_impulse = 225.0;
  double thrust_min = 4972.0;
  double thrust_max = 13258.0;
  double pointing_angle_deg = 60.0;   ///< thrust cone half-angle from vertical
  double glideslope_angle_deg = 35.0; ///< minimum elevation seen from the target
  double glideslope_vertex_depth = 50.0; ///< cone vertex this far below the target, meters
  double velocity_max = 150.0;
  double fuel_weight = 0.1;           ///< linear cost per unit of nondimensional slack
  double rho_position = 1.0;
  double rho_velocity = 1.0;
  double rho_log_mass = 1.0;
  double rho_control = 1.0;
  std::uint64_t seed = 0;
  double init_jitter = 0.0;  ///< std of a seeded perturbation of r_init, meters
};

inline void validate(const PdgConfig& c) {
  if (c.horizon < 2) throw Error("PdgConfig: horizon must be >= 2");
  if (!(c.final_time > 0.0) || !(c.gravity >= 0.0)) throw Error("PdgConfig: time and gravity");
  if (!(c.mass_dry > 0.0) || !(c.mass_wet > c.mass_dry)) throw Error("PdgConfig: mass bounds");
  if (!(c.specific_impulse > 0.0)) throw Error("PdgConfig: specific impulse must be positive");
  if (!(c.thrust_min >= 0.0) || !(c.thrust_max > c.thrust_min)) throw Error("PdgConfig: thrust bounds");
  const auto in_open = [](double deg) { return deg > 0.0 && deg < 90.0; };
  if (!in_open(c.pointing_angle_deg) || !in_open(c.glideslope_angle_deg)) {
    throw Error("PdgConfig: cone angles must lie in (0, 90) degrees");
  }
  if (!(c.velocity_max > 0.0)) throw Error("PdgConfig: velocity bound must be positive");
  if (!(c.rho_position > 0.0 && c.rho_velocity > 0.0 && c.rho_log_mass > 0.0 && c.rho_control > 0.0)) {
    throw NonPositiveWeight("PdgConfig: weights must be positive");
  }
}

/// Stage layout (nondimensional):
///   p  (3)  position with the vertical axis scaled by cot(glideslope), so the
///           glideslope constraint is the Lorentz cone on p
///   v  (3)  velocity
///   m  (1)  log(mass / mass_wet)
///   u  (3), s (1)  thrust acceleration and its magnitude slack, ||u|| <= s
/// The first time point has p, v, m pinned by equality rows and left
/// unconstrained in D; the last carries (p, v, m) with p, v pinned to zero.
/// Thrust bounds are linearized in log-mass around the max-thrust mass profile.
inline QpProblem gen_pdg(const PdgConfig& c) {
  validate(c);
  constexpr double kLength = 1000.0;
  constexpr double kTime = 10.0;
  constexpr double kAccel = kLength / (kTime * kTime);
  constexpr double kVelocity = kLength / kTime;
  constexpr double kStandardGravity = 9.80665;
  constexpr double kDeg = std::numbers::pi / 180.0;

  const int pts = c.horizon;
  const int big_n = pts - 2;
  const double dt_phys = c.final_time / (pts - 1);
  const double dt = dt_phys / kTime;
  const double cot_gs = 1.0 / std::tan(c.glideslope_angle_deg * kDeg);
  const double cos_point = std::cos(c.pointing_angle_deg * kDeg);
  const double alpha_m = 1.0 / (c.specific_impulse * kStandardGravity);
  const double burn = alpha_m * kTime * kAccel;  // log-mass decrease per unit time per unit slack
  const double g_nd = c.gravity / kAccel;

  Eigen::Vector3d r0 = c.r_init;
  if (c.init_jitter > 0.0) {
    Xorshift64Star rng(c.seed);
    for (int k = 0; k < 3; ++k) r0[k] += rng.normal(0.0, c.init_jitter);
  }
  const Eigen::Vector3d scale(1.0, 1.0, cot_gs);
  // Positions are measured from the glideslope vertex.
  const Eigen::Vector3d vertex_offset(0.0, 0.0, c.glideslope_vertex_depth);
  const Eigen::Vector3d p0 = scale.cwiseProduct((r0 + vertex_offset) / kLength);
  const Eigen::Vector3d p_target = scale.cwiseProduct(vertex_offset / kLength);
  const Eigen::Vector3d v0 = c.v_init / kVelocity;

  QpProblem p;
  const double lm_lo = std::log(c.mass_dry / c.mass_wet);
  const double v_max = c.velocity_max / kVelocity;
  for (int i = 0; i < pts; ++i) {
    Stage s;
    if (i == 0) {
      s.push_back(SetConstraint::full_space(3, c.rho_position));
      s.push_back(SetConstraint::full_space(3, c.rho_velocity));
      s.push_back(SetConstraint::full_space(1, c.rho_log_mass));
    } else {
      if (i == pts - 1) {
        s.push_back(SetConstraint::full_space(3, c.rho_position));
      } else {
        s.push_back(SetConstraint::second_order_cone(3, c.rho_position));
      }
      s.push_back(SetConstraint::ball(Vec::Zero(3), v_max, c.rho_velocity));
      s.push_back(SetConstraint::uniform_box(1, lm_lo, 0.0, c.rho_log_mass));
    }
    if (i < pts - 1) s.push_back(SetConstraint::second_order_cone(4, c.rho_control));
    p.stages.push_back(std::move(s));
  }
  p.q = Vec::Zero(p.nz());
  {
    const auto off = p.stage_offsets();
    for (int i = 0; i < pts - 1; ++i) p.q[off[i] + 10] = c.fuel_weight * dt;
    // Position cost centered on the target.
    for (int i = 0; i < pts; ++i) p.q.segment(off[i], 3) = -c.rho_position * p_target;
  }

  // Continuous-time state x = (p, v, m), control (u, s):
  //   p' = S v,  v' = u + gvec,  m' = -burn s
  const Eigen::Matrix3d sm = scale.asDiagonal();
  const Eigen::Vector3d gvec(0.0, 0.0, -g_nd);
  RowMat ax = RowMat::Identity(7, 7);
  ax.block(0, 3, 3, 3) = dt * sm;
  RowMat bu = RowMat::Zero(7, 4);
  bu.block(0, 0, 3, 3) = 0.5 * dt * dt * sm;
  bu.block(3, 0, 3, 3) = dt * Eigen::Matrix3d::Identity();
  bu(6, 3) = -burn * dt;
  Vec drift(7);
  drift << 0.5 * dt * dt * (sm * gvec), dt * gvec, 0.0;

  std::vector<double> g;
  for (int i = 0; i <= big_n; ++i) {
    const int init = i == 0 ? 7 : 0;
    const int term = i == big_n ? 6 : 0;
    const int eq = init + 7 + term;
    const int ineq = 3;
    const int next_dim = p.stage_dim(i + 1);
    RowMat a = RowMat::Zero(eq + ineq, 11);
    RowMat b = RowMat::Zero(eq + ineq, next_dim);
    if (init) {
      a.topLeftCorner(7, 7).setIdentity();
      for (int k = 0; k < 3; ++k) g.push_back(p0[k]);
      for (int k = 0; k < 3; ++k) g.push_back(v0[k]);
      g.push_back(0.0);
    }
    // A x_i + B u_i - x_{i+1} = -drift
    a.block(init, 0, 7, 7) = ax;
    a.block(init, 7, 7, 4) = bu;
    b.block(init, 0, 7, 7) = -RowMat::Identity(7, 7);
    for (int k = 0; k < 7; ++k) g.push_back(-drift[k]);
    if (term) {
      b.block(init + 7, 0, 6, 6).setIdentity();
      for (int k = 0; k < 3; ++k) g.push_back(p_target[k]);
      for (int k = 0; k < 3; ++k) g.push_back(0.0);
    }
    // Thrust bounds around the nominal log-mass z0(t) of a max-thrust burn:
    //   s >= mu_lo (1 - (m - z0)),  s <= mu_hi (1 - (m - z0)),  u_3 >= cos(theta) s
    const double t_phys = i * dt_phys;
    const double z0 = std::log(1.0 - alpha_m * c.thrust_max * t_phys / c.mass_wet);
    const double mu_lo = c.thrust_min / (c.mass_wet * std::exp(z0)) / kAccel;
    const double mu_hi = c.thrust_max / (c.mass_wet * std::exp(z0)) / kAccel;
    const int r = eq;
    a(r, 10) = 1.0;
    a(r, 6) = mu_lo;
    g.push_back(mu_lo * (1.0 + z0));
    a(r + 1, 10) = -1.0;
    a(r + 1, 6) = -mu_hi;
    g.push_back(-mu_hi * (1.0 + z0));
    a(r + 2, 9) = 1.0;
    a(r + 2, 10) = -cos_point;
    g.push_back(0.0);
    p.h.a.push_back(std::move(a));
    p.h.b.push_back(std::move(b));
    p.cone.rows.push_back({eq, ineq});
  }
  p.g = Eigen::Map<Vec>(g.data(), static_cast<Eigen::Index>(g.size()));
  return p;
}

}  // namespace npipg
