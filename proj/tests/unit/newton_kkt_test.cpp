#include <gtest/gtest.h>

#include "npipg/newton_kkt.hpp"
#include "npipg/oracle/dense.hpp"
#include "npipg/oracle/reference.hpp"
#include "npipg/problem_gen.hpp"
#include "support/builders.hpp"
#include "support/random_problem.hpp"

namespace npipg {
namespace {

using testing::rows;
using testing::vec;

Mat dense_u(const QpProblem& p, const StepSizes& st, const JacobianSnapshot& snap) {
  const int n = p.nz();
  const Mat jd = oracle::dense_jd(p, snap);
  const Mat v = (Mat::Identity(n, n) - jd * (Mat::Identity(n, n) - st.alpha * oracle::dense_p(p)))
                    .inverse();
  return v * jd;
}

Mat dense_w_tilde(const QpProblem& p, const StepSizes& st, const JacobianSnapshot& snap,
                  double delta) {
  const int nw = p.nw();
  const Mat h = oracle::dense_h(p);
  const Mat jk = snap.k_mask.asDiagonal();
  return st.alpha * st.beta * jk * h * dense_u(p, st, snap) * h.transpose() * jk +
         Mat::Identity(nw, nw) - jk + delta * Mat::Identity(nw, nw);
}

TEST(Snapshot, FullSpaceAndEqualitiesGiveIdentities) {
  const QpProblem p = testing::small_two_stage(1.0);
  const StepSizes st = choose_step_sizes(p);
  const JacobianSnapshot snap = snapshot_jacobians(p, st, vec({1, 2, 3}), vec({0.5}));
  ASSERT_TRUE(snap.differentiable);
  for (const auto& b : snap.d_blocks) EXPECT_TRUE(std::holds_alternative<jac::Identity>(b.jac.repr));
  EXPECT_EQ(snap.k_mask, vec({1.0}));
}

TEST(Snapshot, ViolatedBoxCoordinateIsClamped) {
  const QpProblem p =
      testing::single_set_problem(SetConstraint::uniform_box(2, -1, 1), vec({0.0, 0.0}));
  const StepSizes st{0.5, 0.5};
  const JacobianSnapshot snap = snapshot_jacobians(p, st, vec({6.0, 0.0}), Vec(0));
  ASSERT_TRUE(snap.differentiable);
  EXPECT_EQ(snap.d_blocks[0].jac.diagonal(), vec({0.0, 1.0}));
}

TEST(Snapshot, BoxAtBreakpointIsNotDifferentiable) {
  const QpProblem p = testing::single_set_problem(SetConstraint::uniform_box(1, -1, 1), vec({0.0}));
  const StepSizes st{0.5, 0.5};
  // Pre-projection point 2 - 0.5 * 2 = 1 sits on the upper bound.
  EXPECT_FALSE(snapshot_jacobians(p, st, vec({2.0}), Vec(0)).differentiable);
}

TEST(VdOperator, PointBlockIsIdentity) {
  const QpProblem p = testing::single_set_problem(SetConstraint::point(vec({1.0, 2.0})), vec({0, 0}));
  const StepSizes st{0.5, 0.5};
  const JacobianSnapshot snap = snapshot_jacobians(p, st, vec({0, 0}), Vec(0));
  const VdOperator vd = build_vd_apply(snap, p, st);
  EXPECT_EQ(vd.apply_v(vec({3, 4})), vec({3, 4}));
  EXPECT_TRUE(vd.apply_u(vec({3, 4})).isZero(0.0));
}

TEST(VdOperator, FullLambdaMiddleFactor) {
  const QpProblem p = testing::single_set_problem(SetConstraint::full_space(1, 1.0), vec({0}));
  const StepSizes st{0.5, 0.5};
  const JacobianSnapshot snap = snapshot_jacobians(p, st, vec({0}), Vec(0));
  const VdOperator vd = build_vd_apply(snap, p, st);
  EXPECT_DOUBLE_EQ(vd.apply_v(vec({1}))[0], 2.0);
}

TEST(VdOperator, CorruptedEigendataIsSingular) {
  const QpProblem p = testing::single_set_problem(SetConstraint::full_space(1, 1.0), vec({0}));
  const StepSizes st{0.5, 0.5};
  JacobianSnapshot snap = snapshot_jacobians(p, st, vec({0}), Vec(0));
  snap.d_blocks[0].eig.lambda[0] = 1.0 / (1.0 - st.alpha);  // 1 - l + a l rho = 0
  EXPECT_THROW(build_vd_apply(snap, p, st), SingularMiddleFactor);
}

TEST(VdOperator, MatchesDenseInverseOnRandomInstances) {
  testing::Rng rng(41);
  for (int t = 0; t < 20; ++t) {
    const QpProblem p = testing::random_problem(rng);
    const StepSizes st = choose_step_sizes(p);
    Vec z, w;
    ASSERT_TRUE(testing::random_differentiable_iterate(rng, p, st, z, w));
    const JacobianSnapshot snap = snapshot_jacobians(p, st, z, w);
    ASSERT_TRUE(snap.differentiable);
    const int n = p.nz();
    const Mat jd = oracle::dense_jd(p, snap);
    const Mat v = (Mat::Identity(n, n) - jd * (Mat::Identity(n, n) - st.alpha * oracle::dense_p(p)))
                      .inverse();
    const VdOperator vd = build_vd_apply(snap, p, st);
    const Vec x = testing::gaussian(rng, n);
    EXPECT_LE((vd.apply_v(x) - v * x).norm(), 1e-10 * (1.0 + (v * x).norm()));
    EXPECT_LE((vd.apply_u(x) - v * jd * x).norm(), 1e-10 * (1.0 + (v * jd * x).norm()));
    EXPECT_LE((vd.apply_jd(x) - jd * x).norm(), 1e-12 * (1.0 + x.norm()));
  }
}

TEST(WTilde, MaskedOutIsScaledIdentity) {
  QpProblem p = testing::small_two_stage();
  p.cone.rows[0] = {0, 1};
  const StepSizes st = choose_step_sizes(p);
  JacobianSnapshot snap = snapshot_jacobians(p, st, Vec::Zero(3), vec({-5.0}));
  ASSERT_TRUE(snap.differentiable);
  ASSERT_EQ(snap.k_mask, vec({0.0}));
  const Mat wt = build_w_tilde(snap, p, st, 0.25).materialize();
  EXPECT_EQ(wt, 1.25 * Mat::Identity(1, 1));
}

TEST(WTilde, ScalarBlocksByHand) {
  QpProblem p;
  p.stages.push_back({SetConstraint::full_space(1)});
  p.stages.push_back({SetConstraint::full_space(1)});
  p.h.a.push_back(rows({{1.0}}));
  p.h.b.push_back(rows({{1.0}}));
  p.cone.rows.push_back({1, 0});
  p.q = Vec::Zero(2);
  p.g = Vec::Zero(1);
  // alpha = beta = rho = 1 gives U = I and alpha beta = 1.
  const StepSizes st{1.0, 1.0};
  const JacobianSnapshot snap = snapshot_jacobians(p, st, Vec::Zero(2), Vec::Zero(1));
  EXPECT_DOUBLE_EQ(build_w_tilde(snap, p, st, 0.0).materialize()(0, 0), 2.0);
}

TEST(WTilde, MatchesDenseAndIsSymmetric) {
  testing::Rng rng(42);
  for (int t = 0; t < 20; ++t) {
    testing::RandomProblemOptions opt;
    opt.min_stages = opt.max_stages = 3 + t % 4;
    const QpProblem p = testing::random_problem(rng, opt);
    const StepSizes st = choose_step_sizes(p);
    Vec z, w;
    ASSERT_TRUE(testing::random_differentiable_iterate(rng, p, st, z, w));
    const JacobianSnapshot snap = snapshot_jacobians(p, st, z, w);
    const double delta = testing::uniform(rng, 0.0, 0.1);
    const Mat wt = build_w_tilde(snap, p, st, delta).materialize();
    const Mat ref = dense_w_tilde(p, st, snap, delta);
    EXPECT_LE((wt - ref).norm(), 1e-10 * (1.0 + ref.norm()));
    EXPECT_LT((wt - wt.transpose()).norm(), 1e-12 * std::max(1.0, wt.norm()));
  }
}

TEST(BlockCholesky, TwoScalarStages) {
  BlockTridiagonal wt;
  wt.diag = {Mat::Constant(1, 1, 4.0), Mat::Constant(1, 1, 5.0)};
  wt.lower = {Mat::Constant(1, 1, 2.0)};
  const NewtonFactorization f = block_cholesky(wt);
  Mat expected(2, 2);
  expected << 2, 0, 1, 2;
  EXPECT_LE((f.materialize_l() - expected).norm(), 1e-15);
}

TEST(BlockCholesky, IdentityGivesIdentity) {
  BlockTridiagonal wt;
  wt.diag = {Mat::Identity(2, 2), Mat::Identity(3, 3), Mat::Identity(1, 1)};
  wt.lower = {Mat::Zero(3, 2), Mat::Zero(1, 3)};
  EXPECT_EQ(block_cholesky(wt).materialize_l(), Mat::Identity(6, 6));
}

TEST(BlockCholesky, IndefiniteReportsStage) {
  BlockTridiagonal wt;
  wt.diag = {Mat::Identity(1, 1), Mat::Constant(1, 1, 0.5)};
  wt.lower = {Mat::Constant(1, 1, 1.0)};
  try {
    block_cholesky(wt);
    FAIL() << "expected NotPositiveDefinite";
  } catch (const NotPositiveDefinite& e) {
    EXPECT_EQ(e.stage(), 1);
  }
}

TEST(BlockCholesky, OscillatingMassesReconstruction) {
  OscMassConfig cfg;
  cfg.horizon = 5;
  const QpProblem p = gen_oscillating_masses(cfg);
  const StepSizes st = choose_step_sizes(p);
  testing::Rng rng(43);
  Vec z, w;
  ASSERT_TRUE(testing::random_differentiable_iterate(rng, p, st, z, w));
  const JacobianSnapshot snap = snapshot_jacobians(p, st, z, w);
  const BlockTridiagonal wt = build_w_tilde(snap, p, st, 1e-3);
  const NewtonFactorization f = block_cholesky(wt);
  const Mat l = f.materialize_l();
  const Mat dense = wt.materialize();
  EXPECT_LE((l * l.transpose() - dense).norm(), 1e-10 * dense.norm());
  const Eigen::LLT<Mat> ref(dense);
  EXPECT_LE((l - Mat(ref.matrixL())).norm(), 1e-10 * l.norm());
  for (const auto& d : f.diag_blocks) EXPECT_GT(d.diagonal().minCoeff(), 0.0);
  const Vec rhs = testing::gaussian(rng, p.nw());
  EXPECT_LE((dense * f.solve(rhs) - rhs).norm(), 1e-9 * rhs.norm());
}

TEST(NewtonDirection, ZeroAtFixedPoint) {
  const QpProblem p = testing::small_two_stage();
  const StepSizes st = choose_step_sizes(p);
  const JacobianSnapshot snap = snapshot_jacobians(p, st, Vec::Zero(3), Vec::Zero(1));
  const auto step = newton_direction(p, st, snap, Vec::Zero(4), 0.0);
  ASSERT_TRUE(step.has_value());
  EXPECT_TRUE(step->dz.isZero(0.0));
  EXPECT_TRUE(step->dw.isZero(0.0));
}

TEST(NewtonDirection, UnconstrainedReducesToScaledResidual) {
  QpProblem p;
  p.stages.push_back({SetConstraint::full_space(2, 2.0), SetConstraint::full_space(1, 0.5)});
  p.q = vec({1.0, -1.0, 3.0});
  p.g = Vec(0);
  const StepSizes st{0.3, 0.3};
  const Vec z = vec({0.2, 0.1, -0.4});
  const auto [r, rn] = residual(p, st, z, Vec(0));
  const JacobianSnapshot snap = snapshot_jacobians(p, st, z, Vec(0));
  const auto step = newton_direction(p, st, snap, r, 0.0);
  ASSERT_TRUE(step.has_value());
  const Vec expected = r.cwiseQuotient(st.alpha * p.p_diagonal());
  EXPECT_LE((step->dz - expected).norm(), 1e-14 * expected.norm());
  // The full step lands on the minimizer -q / rho.
  EXPECT_LE((z + step->dz + p.q.cwiseQuotient(p.p_diagonal())).norm(), 1e-13);
}

TEST(NewtonDirection, SolvesDenseSystemOnRandomIterates) {
  testing::Rng rng(44);
  int checked = 0;
  for (int t = 0; t < 40; ++t) {
    const QpProblem p = testing::random_problem(rng);
    const StepSizes st = choose_step_sizes(p);
    Vec z, w;
    ASSERT_TRUE(testing::random_differentiable_iterate(rng, p, st, z, w));
    const JacobianSnapshot snap = snapshot_jacobians(p, st, z, w);
    const auto [r, rn] = residual(p, st, z, w);
    const auto step = newton_direction(p, st, snap, r, 0.0, 0);
    if (!step) continue;  // reduced matrix singular at delta = 0
    // Rounding can let the factorization through on an exactly singular system.
    try {
      oracle::dense_newton_solve(p, st, snap, z, w);
    } catch (const oracle::SingularDense&) {
      continue;
    }
    const oracle::DenseSystem sys = oracle::dense_newton_system(p, st, snap, z, w);
    Vec x(p.nz() + p.nw());
    x << step->dz, step->dw;
    EXPECT_LE((sys.matrix * x - r).norm(), 1e-9 * rn);
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(NewtonDirection, RegularizationRetriesOnIndefinite) {
  // Point sets give U = 0, so W~ on an equality row is exactly zero and only
  // factors once delta > 0.
  QpProblem p;
  p.stages.push_back({SetConstraint::point(vec({1.0}))});
  p.stages.push_back({SetConstraint::point(vec({2.0}))});
  p.h.a.push_back(rows({{1.0}}));
  p.h.b.push_back(rows({{1.0}}));
  p.cone.rows.push_back({1, 0});
  p.q = Vec::Zero(2);
  p.g = vec({0.0});
  const StepSizes st = choose_step_sizes(p);
  const Vec z = vec({1.0, 2.0});
  const Vec w = vec({0.0});
  const JacobianSnapshot snap = snapshot_jacobians(p, st, z, w);
  const auto [r, rn] = residual(p, st, z, w);
  ASSERT_GT(rn, 0.0);
  EXPECT_FALSE(newton_direction(p, st, snap, r, 0.0, 0).has_value());
  const auto step = newton_direction(p, st, snap, r, 0.0, 3);
  ASSERT_TRUE(step.has_value());
  EXPECT_EQ(step->retries, 1);
  EXPECT_DOUBLE_EQ(step->regularization, 1e-10);
}

TEST(NewtonDirection, FactorizationNonsingularNearStrictlyComplementarySolution) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 6 && checked < 3; ++seed) {
    OscMassConfig cfg;
    cfg.horizon = 10;
    cfg.seed = seed;
    const QpProblem p = gen_oscillating_masses(cfg);
    const auto ref = oracle::reference_solve(p, 1e-11);
    const StepSizes st = choose_step_sizes(p);
    const OperatorImage img = apply_t_full(p, st, ref.z, ref.w);
    if (oracle::breakpoint_distance(p, img) <= 1e-6) continue;
    const JacobianSnapshot snap = snapshot_from_image(p, img);
    ASSERT_TRUE(snap.differentiable);
    EXPECT_NO_THROW(block_cholesky(build_w_tilde(snap, p, st, 0.0))) << "seed " << seed;
    ++checked;
  }
  EXPECT_GE(checked, 1);
}

}  // namespace
}  // namespace npipg
