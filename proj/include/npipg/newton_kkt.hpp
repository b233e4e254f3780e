#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "npipg/core.hpp"
#include "npipg/pipg.hpp"
#include "npipg/projections.hpp"
#include "npipg/qp_model.hpp"

namespace npipg {

struct SetJacobian {
  ProjectionJacobian jac;
  BlockEig eig;
};

/// J_D (per set, with eigendecomposition) and the J_K° mask evaluated at the
/// pre-projection points of one PIPG update.
struct JacobianSnapshot {
  std::vector<SetJacobian> d_blocks;
  Vec k_mask;
  bool differentiable = false;
};

/// Evaluates the projection Jacobians at the arguments the projections of
/// T(z, w) were applied to.
inline JacobianSnapshot snapshot_from_image(const QpProblem& p, const OperatorImage& img) {
  JacobianSnapshot snap;
  snap.differentiable = false;
  int off = 0;
  for (const auto& stage : p.stages)
    for (const auto& s : stage) {
      JacobianResult j = jacobian(s, img.z_pre.segment(off, s.dim()));
      if (!j) return snap;
      BlockEig e = eig(*j);
      snap.d_blocks.push_back({std::move(*j), std::move(e)});
      off += s.dim();
    }
  JacobianResult k = jacobian_cone_polar(p.cone, img.w_pre);
  if (!k) return snap;
  snap.k_mask = k->diagonal();
  snap.differentiable = true;
  return snap;
}

inline JacobianSnapshot snapshot_jacobians(const QpProblem& p, const StepSizes& st,
                                           const CVecRef& z, const CVecRef& w) {
  return snapshot_from_image(p, apply_t_full(p, st, z, w));
}

/// Block-diagonal operators built from J_D = Q Lambda Q':
///   V   = Q (I - Lambda + alpha Lambda P)^{-1} Q'
///   U   = V J_D = Q (I - Lambda + alpha Lambda P)^{-1} Lambda Q'
///   J_D = Q Lambda Q'
class VdOperator {
 public:
  VdOperator(const JacobianSnapshot& snap, const QpProblem& p, const StepSizes& st) {
    if (!snap.differentiable) throw Error("VdOperator: snapshot is not differentiable");
    blocks_.reserve(snap.d_blocks.size());
    int k = 0;
    int off = 0;
    for (const auto& stage : p.stages)
      for (const auto& s : stage) {
        const auto& sj = snap.d_blocks[k++];
        Block b;
        b.offset = off;
        b.dim = s.dim();
        b.diagonal = sj.eig.identity_basis();
        b.q = sj.eig.q;
        b.lambda = sj.eig.lambda;
        b.mid.resize(b.dim);
        for (int j = 0; j < b.dim; ++j) {
          const double den = 1.0 - b.lambda[j] + st.alpha * b.lambda[j] * s.rho;
          if (!(den > 1e-14)) {
            throw SingularMiddleFactor("1 - lambda + alpha lambda rho is not positive");
          }
          b.mid[j] = 1.0 / den;
        }
        b.mid_lambda = b.mid.cwiseProduct(b.lambda);
        blocks_.push_back(std::move(b));
        off += s.dim();
      }
    nz_ = off;
  }

  Vec apply_v(const CVecRef& x) const { return apply(x, &Block::mid); }
  Vec apply_u(const CVecRef& x) const { return apply(x, &Block::mid_lambda); }
  Vec apply_jd(const CVecRef& x) const { return apply(x, &Block::lambda); }

  /// Dense U_i restricted to the z-range [offset, offset + dim).
  Mat u_block(int offset, int dim) const {
    Mat u = Mat::Zero(dim, dim);
    for (const auto& b : blocks_) {
      if (b.offset < offset || b.offset >= offset + dim) continue;
      const int r = b.offset - offset;
      if (b.diagonal) {
        u.block(r, r, b.dim, b.dim).diagonal() = b.mid_lambda;
      } else {
        u.block(r, r, b.dim, b.dim) = b.q * b.mid_lambda.asDiagonal() * b.q.transpose();
      }
    }
    return u;
  }

  int nz() const { return nz_; }

 private:
  struct Block {
    int offset = 0;
    int dim = 0;
    bool diagonal = true;
    Mat q;
    Vec lambda;
    Vec mid;
    Vec mid_lambda;
  };

  Vec apply(const CVecRef& x, Vec Block::*factor) const {
    Vec out(x.size());
    for (const auto& b : blocks_) {
      const auto seg = x.segment(b.offset, b.dim);
      const Vec& f = b.*factor;
      if (b.diagonal) {
        out.segment(b.offset, b.dim) = f.cwiseProduct(seg);
      } else {
        out.segment(b.offset, b.dim) = b.q * f.cwiseProduct(b.q.transpose() * seg);
      }
    }
    return out;
  }

  std::vector<Block> blocks_;
  int nz_ = 0;
};

inline VdOperator build_vd_apply(const JacobianSnapshot& snap, const QpProblem& p,
                                 const StepSizes& st) {
  return VdOperator(snap, p, st);
}

/// Symmetric block-tridiagonal matrix: diag[i] is block (i, i), lower[i] is
/// block (i+1, i).
struct BlockTridiagonal {
  std::vector<Mat> diag;
  std::vector<Mat> lower;

  int dim() const {
    int n = 0;
    for (const auto& d : diag) n += static_cast<int>(d.rows());
    return n;
  }

  Mat materialize() const {
    const int n = dim();
    Mat m = Mat::Zero(n, n);
    int off = 0;
    for (std::size_t i = 0; i < diag.size(); ++i) {
      const int ni = static_cast<int>(diag[i].rows());
      m.block(off, off, ni, ni) = diag[i];
      if (i + 1 < diag.size()) {
        const int nn = static_cast<int>(diag[i + 1].rows());
        m.block(off + ni, off, nn, ni) = lower[i];
        m.block(off, off + ni, ni, nn) = lower[i].transpose();
      }
      off += ni;
    }
    return m;
  }
};

/// W~ = alpha beta J_K W_D J_K + I - J_K + delta I with W_D = H U H', built
/// block by block:
///   W_ii     = A_i U_i A_i' + B_i U_{i+1} B_i'
///   W_{i+1,i} = A_{i+1} U_{i+1} B_i'
inline BlockTridiagonal build_w_tilde(const JacobianSnapshot& snap, const QpProblem& p,
                                      const StepSizes& st, double delta,
                                      std::vector<Mat>* u_blocks_out = nullptr) {
  if (delta < 0.0) throw Error("build_w_tilde: delta must be nonnegative");
  if (snap.k_mask.size() != p.nw()) throw DimensionMismatch("build_w_tilde: mask length mismatch");
  const VdOperator vd(snap, p, st);
  const auto zoff = p.stage_offsets();
  const auto woff = p.row_offsets();
  const int ns = p.num_stages();
  std::vector<Mat> u(ns);
  for (int i = 0; i < ns; ++i) u[i] = vd.u_block(zoff[i], zoff[i + 1] - zoff[i]);

  const int nb = p.h.block_rows();
  const double ab = st.alpha * st.beta;
  BlockTridiagonal wt;
  wt.diag.resize(nb);
  wt.lower.resize(nb > 0 ? nb - 1 : 0);
  for (int i = 0; i < nb; ++i) {
    const auto& a = p.h.a[i];
    const auto& b = p.h.b[i];
    const int ni = p.h.row_dim(i);
    const auto ki = snap.k_mask.segment(woff[i], ni);
    Mat wii = a * u[i] * a.transpose() + b * u[i + 1] * b.transpose();
    Mat d = ab * (ki.asDiagonal() * wii * ki.asDiagonal());
    d.diagonal() += (Vec::Ones(ni) - ki) + Vec::Constant(ni, delta);
    wt.diag[i] = std::move(d);
    if (i + 1 < nb) {
      const int nn = p.h.row_dim(i + 1);
      const auto kn = snap.k_mask.segment(woff[i + 1], nn);
      Mat wl = p.h.a[i + 1] * u[i + 1] * b.transpose();
      wt.lower[i] = ab * (kn.asDiagonal() * wl * ki.asDiagonal());
    }
  }
  if (u_blocks_out) *u_blocks_out = std::move(u);
  return wt;
}

/// Lower block-bidiagonal Cholesky factor of a block-tridiagonal W~.
struct NewtonFactorization {
  std::vector<Mat> diag_blocks;  ///< L_ii, lower triangular
  std::vector<Mat> sub_blocks;   ///< L_{i+1,i}
  std::vector<Mat> u_blocks;     ///< U_i used to build W~ (empty if not recorded)
  double regularization = 0.0;

  Mat materialize_l() const {
    BlockTridiagonal t{diag_blocks, sub_blocks};
    Mat l = t.materialize();
    return l.triangularView<Eigen::Lower>();
  }

  /// Solves L L' x = rhs by blocked forward then backward substitution.
  Vec solve(const CVecRef& rhs) const {
    const int nb = static_cast<int>(diag_blocks.size());
    std::vector<int> off(nb + 1, 0);
    for (int i = 0; i < nb; ++i) off[i + 1] = off[i] + static_cast<int>(diag_blocks[i].rows());
    if (rhs.size() != off[nb]) throw DimensionMismatch("NewtonFactorization::solve: rhs length");
    Vec y = rhs;
    for (int i = 0; i < nb; ++i) {
      const int ni = off[i + 1] - off[i];
      if (ni == 0) continue;
      auto yi = y.segment(off[i], ni);
      if (i > 0) yi.noalias() -= sub_blocks[i - 1] * y.segment(off[i - 1], off[i] - off[i - 1]);
      diag_blocks[i].triangularView<Eigen::Lower>().solveInPlace(yi);
    }
    for (int i = nb - 1; i >= 0; --i) {
      const int ni = off[i + 1] - off[i];
      if (ni == 0) continue;
      auto yi = y.segment(off[i], ni);
      if (i + 1 < nb) {
        yi.noalias() -= sub_blocks[i].transpose() * y.segment(off[i + 1], off[i + 2] - off[i + 1]);
      }
      diag_blocks[i].transpose().triangularView<Eigen::Upper>().solveInPlace(yi);
    }
    return y;
  }
};

/// Block Cholesky of a symmetric block-tridiagonal matrix:
///   L_00 L_00'     = W~_00
///   L_{i+1,i} L_ii' = W~_{i+1,i}
///   L_ii L_ii'     = W~_ii - L_{i,i-1} L_{i,i-1}'
/// Cost is linear in the number of blocks. Throws NotPositiveDefinite(i).
inline NewtonFactorization block_cholesky(const BlockTridiagonal& wt) {
  const int nb = static_cast<int>(wt.diag.size());
  NewtonFactorization f;
  f.diag_blocks.resize(nb);
  f.sub_blocks.resize(nb > 0 ? nb - 1 : 0);
  for (int i = 0; i < nb; ++i) {
    Mat s = wt.diag[i];
    if (i > 0) s.noalias() -= f.sub_blocks[i - 1] * f.sub_blocks[i - 1].transpose();
    if (s.rows() > 0) {
      Eigen::LLT<Mat> llt(s);
      if (llt.info() != Eigen::Success) throw NotPositiveDefinite(i);
      f.diag_blocks[i] = llt.matrixL();
      if (!(f.diag_blocks[i].diagonal().minCoeff() > 0.0)) throw NotPositiveDefinite(i);
    } else {
      f.diag_blocks[i] = s;
    }
    if (i + 1 < nb) {
      // L_{i+1,i} = W~_{i+1,i} L_ii^{-T}, i.e. L_ii L_{i+1,i}' = W~_{i,i+1}.
      Mat lt = wt.lower[i].transpose();
      if (lt.rows() > 0) f.diag_blocks[i].triangularView<Eigen::Lower>().solveInPlace(lt);
      f.sub_blocks[i] = lt.transpose();
    }
  }
  return f;
}

struct NewtonStep {
  Vec dz;
  Vec dw;
  double regularization = 0.0;
  int retries = 0;
};

/// Solves the regularized Newton system for R = T(z,w) - (z,w) via the
/// symmetric reduction:
///   R~_z = R_z,  R~_w = R_w - 2 beta J_K H R_z
///   Rbar = beta J_K H V R~_z + R~_w
///   (W~ + delta I) dw = (I - alpha beta J_K W_D (I - J_K)) Rbar
///   dz = V (R~_z - alpha J_D H' dw)
/// With delta = 0 this is (I - J_T)(dz, dw) = R exactly. On a non positive
/// definite pivot the regularization is doubled, up to max_retries times;
/// returns nullopt when the budget is exhausted.
inline std::optional<NewtonStep> newton_direction(const QpProblem& p, const StepSizes& st,
                                                  const JacobianSnapshot& snap,
                                                  const CVecRef& residual_vec, double delta,
                                                  int max_retries = 8,
                                                  NewtonFactorization* factor_out = nullptr) {
  if (!snap.differentiable) throw Error("newton_direction: snapshot is not differentiable");
  const int nz = p.nz();
  const int nw = p.nw();
  if (residual_vec.size() != nz + nw) throw DimensionMismatch("newton_direction: residual length");
  const auto rz = residual_vec.head(nz);
  const auto rw = residual_vec.tail(nw);
  if (rz.isZero(0.0) && rw.isZero(0.0)) return NewtonStep{Vec::Zero(nz), Vec::Zero(nw), delta, 0};

  const VdOperator vd(snap, p, st);
  const Vec& k = snap.k_mask;
  const Vec not_k = Vec::Ones(nw) - k;

  const Vec rt_w = rw - 2.0 * st.beta * k.cwiseProduct(apply_h(p.h, rz));
  const Vec v_rz = vd.apply_v(rz);
  const Vec rbar = st.beta * k.cwiseProduct(apply_h(p.h, v_rz)) + rt_w;
  const Vec w_free = apply_h(p.h, vd.apply_u(apply_h_transpose(p, not_k.cwiseProduct(rbar))));
  const Vec rhs = rbar - st.alpha * st.beta * k.cwiseProduct(w_free);

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::vector<Mat> u_blocks;
    const BlockTridiagonal wt = build_w_tilde(snap, p, st, delta, &u_blocks);
    try {
      NewtonFactorization f = block_cholesky(wt);
      f.regularization = delta;
      NewtonStep step;
      step.dw = f.solve(rhs);
      step.dz = vd.apply_v(rz - st.alpha * vd.apply_jd(apply_h_transpose(p, step.dw)));
      step.regularization = delta;
      step.retries = attempt;
      if (factor_out) {
        f.u_blocks = std::move(u_blocks);
        *factor_out = std::move(f);
      }
      return step;
    } catch (const NotPositiveDefinite&) {
      delta = delta > 0.0 ? 2.0 * delta : 1e-10;
    }
  }
  return std::nullopt;
}

}  // namespace npipg
