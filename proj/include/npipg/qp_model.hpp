#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "npipg/core.hpp"
#include "npipg/sets.hpp"

namespace npipg {

/// Block-bidiagonal constraint matrix
///
///   H = [ A_0 B_0              ]
///       [     A_1 B_1          ]
///       [          ...         ]
///       [             A_N  B_N ]
///
/// with N+1 block rows and N+2 block columns. Block row i touches column
/// blocks i and i+1 only. Never materialized densely outside of tests.
struct BlockBidiagonalMatrix {
  std::vector<RowMat> a;
  std::vector<RowMat> b;

  int block_rows() const { return static_cast<int>(a.size()); }
  int block_cols() const { return a.empty() ? 0 : block_rows() + 1; }
  int row_dim(int i) const { return static_cast<int>(a[i].rows()); }
  int col_dim(int j) const {
    return j < block_rows() ? static_cast<int>(a[j].cols()) : static_cast<int>(b[j - 1].cols());
  }
  int rows() const {
    int n = 0;
    for (const auto& blk : a) n += static_cast<int>(blk.rows());
    return n;
  }
  int cols() const {
    int n = 0;
    for (int j = 0; j < block_cols(); ++j) n += col_dim(j);
    return n;
  }
};

/// K = prod_i (0^{eq_i} x R_+^{ineq_i}). Within a block row the equality
/// components come first.
struct ConeSpec {
  struct Row {
    int eq = 0;
    int ineq = 0;
    int size() const { return eq + ineq; }
  };
  std::vector<Row> rows;

  int dim() const {
    int n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
  }

  /// Per-component flag: true for inequality components.
  std::vector<std::uint8_t> inequality_mask() const {
    std::vector<std::uint8_t> mask;
    mask.reserve(dim());
    for (const auto& r : rows) {
      mask.insert(mask.end(), r.eq, 0);
      mask.insert(mask.end(), r.ineq, 1);
    }
    return mask;
  }

  static ConeSpec equalities(const std::vector<int>& counts) {
    ConeSpec c;
    for (int n : counts) c.rows.push_back({n, 0});
    return c;
  }
};

using Stage = std::vector<SetConstraint>;

/// minimize 1/2 z'Pz + q'z  subject to  Hz - g in K,  z in D.
///
/// P is implicit: diag(rho_ij) with rho constant across each set's slice.
struct QpProblem {
  std::vector<Stage> stages;
  Vec q;
  BlockBidiagonalMatrix h;
  Vec g;
  ConeSpec cone;

  int num_stages() const { return static_cast<int>(stages.size()); }

  int stage_dim(int i) const {
    int n = 0;
    for (const auto& s : stages[i]) n += s.dim();
    return n;
  }

  int nz() const {
    int n = 0;
    for (int i = 0; i < num_stages(); ++i) n += stage_dim(i);
    return n;
  }

  int nw() const { return cone.dim(); }

  /// ||P|| = max rho.
  double p_norm() const {
    double m = 0.0;
    for (const auto& st : stages)
      for (const auto& s : st) m = std::max(m, s.rho);
    return m;
  }

  /// Diagonal of P as a dense vector.
  Vec p_diagonal() const {
    Vec d(nz());
    int off = 0;
    for (const auto& st : stages)
      for (const auto& s : st) {
        d.segment(off, s.dim()).setConstant(s.rho);
        off += s.dim();
      }
    return d;
  }

  /// Start offset of each stage inside z.
  std::vector<int> stage_offsets() const {
    std::vector<int> off(num_stages() + 1, 0);
    for (int i = 0; i < num_stages(); ++i) off[i + 1] = off[i] + stage_dim(i);
    return off;
  }

  /// Start offset of each block row inside w.
  std::vector<int> row_offsets() const {
    std::vector<int> off(cone.rows.size() + 1, 0);
    for (std::size_t i = 0; i < cone.rows.size(); ++i) off[i + 1] = off[i] + cone.rows[i].size();
    return off;
  }

  double objective(const Vec& z) const { return 0.5 * z.dot(p_diagonal().cwiseProduct(z)) + q.dot(z); }
};

/// Throws DimensionMismatch, NonPositiveWeight or MalformedSet on the first
/// violated invariant.
inline void validate(const QpProblem& p) {
  if (p.stages.empty()) throw DimensionMismatch("problem has no stages");
  for (int i = 0; i < p.num_stages(); ++i) {
    if (p.stages[i].empty()) throw DimensionMismatch("stage has no set constraints", i);
    for (const auto& s : p.stages[i]) validate_set(s);
  }
  const int nb = p.num_stages() - 1;
  const auto& h = p.h;
  if (h.block_rows() != nb || static_cast<int>(h.b.size()) != nb) {
    throw DimensionMismatch("H must have " + std::to_string(nb) + " block rows (stages - 1), got " +
                            std::to_string(h.block_rows()));
  }
  if (static_cast<int>(p.cone.rows.size()) != nb) {
    throw DimensionMismatch("cone must have one entry per block row");
  }
  for (int i = 0; i < nb; ++i) {
    if (p.cone.rows[i].eq < 0 || p.cone.rows[i].ineq < 0) {
      throw DimensionMismatch("cone counts must be nonnegative", i);
    }
    const int ni = p.cone.rows[i].size();
    if (h.a[i].rows() != ni || h.b[i].rows() != ni) {
      throw DimensionMismatch("A_i/B_i row count does not match cone row " + std::to_string(ni), i);
    }
    if (h.a[i].cols() != p.stage_dim(i)) {
      throw DimensionMismatch("A_i has " + std::to_string(h.a[i].cols()) +
                                  " columns but stage dim is " + std::to_string(p.stage_dim(i)),
                              i);
    }
    if (h.b[i].cols() != p.stage_dim(i + 1)) {
      throw DimensionMismatch("B_i has " + std::to_string(h.b[i].cols()) +
                                  " columns but next stage dim is " +
                                  std::to_string(p.stage_dim(i + 1)),
                              i);
    }
  }
  if (p.q.size() != p.nz()) {
    throw DimensionMismatch("q has length " + std::to_string(p.q.size()) + ", expected " +
                            std::to_string(p.nz()));
  }
  if (p.g.size() != p.nw()) {
    throw DimensionMismatch("g has length " + std::to_string(p.g.size()) + ", expected " +
                            std::to_string(p.nw()));
  }
  if (!p.q.allFinite() || !p.g.allFinite()) throw DimensionMismatch("q and g must be finite");
}

/// Hz computed block-row-wise as A_i z_i + B_i z_{i+1}.
inline void apply_h_into(const BlockBidiagonalMatrix& h, const CVecRef& z, VecRef out) {
  // With no block rows H is 0 x n for any n.
  if ((h.block_rows() > 0 && z.size() != h.cols()) || out.size() != h.rows()) {
    throw DimensionMismatch("apply_h: vector length mismatch");
  }
  int row = 0;
  int col = 0;
  for (int i = 0; i < h.block_rows(); ++i) {
    const int ni = h.row_dim(i);
    const int ci = static_cast<int>(h.a[i].cols());
    const int cn = static_cast<int>(h.b[i].cols());
    if (ni > 0) {
      out.segment(row, ni).noalias() = h.a[i] * z.segment(col, ci);
      out.segment(row, ni).noalias() += h.b[i] * z.segment(col + ci, cn);
    }
    row += ni;
    col += ci;
  }
}

inline Vec apply_h(const BlockBidiagonalMatrix& h, const CVecRef& z) {
  Vec out(h.rows());
  apply_h_into(h, z, out);
  return out;
}

/// H'w: column block j receives A_j' w_j + B_{j-1}' w_{j-1}.
inline void apply_h_transpose_into(const BlockBidiagonalMatrix& h, const CVecRef& w, VecRef out) {
  if (w.size() != h.rows() || (h.block_rows() > 0 && out.size() != h.cols())) {
    throw DimensionMismatch("apply_h_transpose: vector length mismatch");
  }
  out.setZero();
  int row = 0;
  int col = 0;
  for (int i = 0; i < h.block_rows(); ++i) {
    const int ni = h.row_dim(i);
    const int ci = static_cast<int>(h.a[i].cols());
    const int cn = static_cast<int>(h.b[i].cols());
    if (ni > 0) {
      out.segment(col, ci).noalias() += h.a[i].transpose() * w.segment(row, ni);
      out.segment(col + ci, cn).noalias() += h.b[i].transpose() * w.segment(row, ni);
    }
    row += ni;
    col += ci;
  }
}

inline Vec apply_h_transpose(const BlockBidiagonalMatrix& h, const CVecRef& w) {
  Vec out(h.cols());
  apply_h_transpose_into(h, w, out);
  return out;
}

/// Problem-level forms; sized by nz so a single-stage problem works.
inline Vec apply_h(const QpProblem& p, const CVecRef& z) { return apply_h(p.h, z); }

inline Vec apply_h_transpose(const QpProblem& p, const CVecRef& w) {
  Vec out(p.nz());
  apply_h_transpose_into(p.h, w, out);
  return out;
}

/// Upper estimate of the spectral norm ||H||: block power iteration on H'H
/// with a Rayleigh-Ritz step on a 4-column subspace, until the relative
/// change of the estimate drops below tol (at most max_iters sweeps), then
/// inflated by 1.01. Returns 0 for a zero or empty matrix.
///
/// A single vector stalls when the top two singular values are close; the
/// block's Ritz value converges at the rate of the fifth one instead.
inline double operator_norm_h(const BlockBidiagonalMatrix& h, double tol = 1e-8,
                              int max_iters = 200) {
  if (!(tol > 0.0)) throw Error("operator_norm_h: tol must be positive");
  const int n = h.cols();
  if (n == 0 || h.rows() == 0) return 0.0;
  const int width = std::min(4, n);
  // Deterministic, generic start block.
  Mat v(n, width);
  std::uint64_t s = 0x9E3779B97F4A7C15ULL;
  for (int c = 0; c < width; ++c) {
    for (int i = 0; i < n; ++i) {
      s ^= s << 13;
      s ^= s >> 7;
      s ^= s << 17;
      v(i, c) = static_cast<double>(s >> 11) * 0x1.0p-53 - (c == 0 ? -0.5 : 0.5);
    }
  }
  v = Eigen::HouseholderQR<Mat>(v).householderQ() * Mat::Identity(n, width);
  Vec hv(h.rows());
  Mat y(n, width);
  double est = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    for (int c = 0; c < width; ++c) {
      apply_h_into(h, v.col(c), hv);
      apply_h_transpose_into(h, hv, y.col(c));
    }
    if (y.norm() == 0.0) return 0.0;
    const Mat ritz = v.transpose() * y;
    const Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (ritz + ritz.transpose()), Eigen::EigenvaluesOnly);
    const double next = std::sqrt(std::max(0.0, eig.eigenvalues().maxCoeff()));
    v = Eigen::HouseholderQR<Mat>(y).householderQ() * Mat::Identity(n, width);
    if (it > 0 && std::abs(next - est) <= tol * next) {
      est = next;
      break;
    }
    est = next;
  }
  return 1.01 * est;
}

/// Row-equilibrated copy of a problem plus the scaling that maps duals back.
struct Equilibrated {
  QpProblem problem;
  /// Scaled row r = row r of (H, g) times row_scale[r].
  Vec row_scale;

  /// w of the original problem from w of the scaled one.
  Vec unscale_dual(const Vec& w_scaled) const { return row_scale.cwiseProduct(w_scaled); }
  Vec scale_dual(const Vec& w) const { return w.cwiseQuotient(row_scale); }
};

/// Scales every row of (H, g) by 1 / max(row 2-norm, 1e-12). The cone is
/// invariant under positive row scaling, so the primal solution is unchanged.
inline Equilibrated equilibrate(const QpProblem& p) {
  Equilibrated e{p, Vec::Ones(p.nw())};
  int row = 0;
  for (int i = 0; i < p.h.block_rows(); ++i) {
    auto& a = e.problem.h.a[i];
    auto& b = e.problem.h.b[i];
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double nrm = std::sqrt(a.row(r).squaredNorm() + b.row(r).squaredNorm());
      const double s = 1.0 / std::max(nrm, 1e-12);
      a.row(r) *= s;
      b.row(r) *= s;
      e.problem.g[row + r] *= s;
      e.row_scale[row + r] = s;
    }
    row += static_cast<int>(a.rows());
  }
  return e;
}

}  // namespace npipg
