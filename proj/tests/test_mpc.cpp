#include "dkoia/mpc.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace dkoia;
using namespace dkoia::testing;

namespace {

// Linear model x+ = a x + b u with identity lift and output.
std::shared_ptr<KoopmanModel> linear_model(const Matrix& a, const Matrix& b) {
  auto m = std::make_shared<KoopmanModel>();
  const Index n = a.rows();
  m->variant = Variant::DKO;
  m->A = a;
  m->Bu = b;
  m->Bp = Matrix::Zero(n, 0);
  m->Bphi = Matrix::Zero(n, 0);
  m->C = Matrix::Identity(n, n);
  m->psi = identity_network(n);
  m->normalizer = Normalizer::identity(n, b.cols(), 0);
  m->validate();
  return m;
}

MpcProblem base_problem(std::shared_ptr<const KoopmanModel> m, Index N) {
  MpcProblem pb;
  pb.model = std::move(m);
  const Index n = pb.model->state_dim(), mu = pb.model->input_dim();
  pb.Q = Matrix::Identity(n, n);
  pb.R = 0.1 * Matrix::Identity(mu, mu);
  pb.horizon = N;
  pb.max_iterations = 2;
  pb.x_s = Vector::Zero(n);
  pb.u_s = Vector::Zero(mu);
  pb.input_lower = Vector::Constant(mu, -1.0);
  pb.input_upper = Vector::Constant(mu, 1.0);
  return pb;
}

}  // namespace

TEST(WarmStart, ShiftsAndDuplicatesLast) {
  const auto m = linear_model(Matrix::Constant(1, 1, 0.5), Matrix::Ones(1, 1));
  const MpcController c(base_problem(m, 3));
  ControllerState st;
  st.has_history = true;
  st.sequence = (Matrix(1, 3) << 0.1, 0.2, 0.3).finished();
  EXPECT_EQ(c.warm_start(st), (Matrix(1, 3) << 0.2, 0.3, 0.3).finished());
  st.sequence = Matrix::Constant(1, 3, 0.4);
  EXPECT_EQ(c.warm_start(st), Matrix::Constant(1, 3, 0.4));
}

TEST(WarmStart, ColdStartUsesClippedSetPointInput) {
  const auto m = linear_model(Matrix::Constant(1, 1, 0.5), Matrix::Ones(1, 1));
  auto pb = base_problem(m, 4);
  pb.u_s = Vector::Constant(1, 0.25);
  EXPECT_EQ(MpcController(pb).warm_start(ControllerState{}), Matrix::Constant(1, 4, 0.25));
  pb.u_s = Vector::Constant(1, 3.0);
  EXPECT_EQ(MpcController(pb).warm_start(ControllerState{}), Matrix::Constant(1, 4, 1.0));
}

TEST(Mpc, SingleStepClosedForm) {
  // N = 1, scalar input: u* = clip((b'Q(x_s - A x) + R u_s) / (b'Qb + R)).
  const Matrix a = (Matrix(2, 2) << 0.9, 0.1, 0.0, 0.8).finished();
  const Matrix b = (Matrix(2, 1) << 0.5, 1.0).finished();
  const auto m = linear_model(a, b);
  auto pb = base_problem(m, 1);
  pb.Q = (Vector(2) << 2.0, 0.5).finished().asDiagonal();
  pb.R = Matrix::Constant(1, 1, 0.3);
  pb.x_s = (Vector(2) << 0.2, -0.1).finished();
  pb.u_s = Vector::Constant(1, 0.1);
  pb.input_lower = Vector::Constant(1, -0.4);
  pb.input_upper = Vector::Constant(1, 0.4);
  const MpcController c(pb);
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vector(2, rng, 2.0);
    ControllerState st;
    const auto r = c.control_step(st, x, Matrix(0, 1));
    const double num = (b.transpose() * pb.Q * (pb.x_s - a * x))(0, 0) + pb.R(0, 0) * pb.u_s[0];
    const double den = (b.transpose() * pb.Q * b)(0, 0) + pb.R(0, 0);
    EXPECT_NEAR(r.input[0], std::clamp(num / den, -0.4, 0.4), 1e-8);
  }
}

TEST(Mpc, PhiFreeIteratesAreIdentical) {
  std::mt19937_64 rng(32);
  const KoopmanModel km = toy_model(Variant::DKO, 2, 1, 1, 4, 0, rng);
  auto pb = base_problem(std::make_shared<const KoopmanModel>(km), 5);
  pb.max_iterations = 3;
  const MpcController c(pb);
  ControllerState st;
  for (int k = 0; k < 10; ++k) {
    const auto r = c.control_step(st, random_vector(2, rng), random_matrix(1, 5, rng));
    ASSERT_EQ(r.trace.size(), 3u);
    EXPECT_EQ(r.trace[0].inputs, r.trace[1].inputs);
    EXPECT_EQ(r.trace[1].inputs, r.trace[2].inputs);
  }
}

TEST(Mpc, EquilibriumIsHeld) {
  // x_s = A x_s + B u_s with u_s interior.
  const Matrix a = (Matrix(2, 2) << 0.7, 0.2, -0.1, 0.9).finished();
  const Matrix b = (Matrix(2, 1) << 1.0, 0.5).finished();
  const Vector us = Vector::Constant(1, 0.3);
  const Vector xs = (Matrix::Identity(2, 2) - a).lu().solve(b * us);
  auto pb = base_problem(linear_model(a, b), 10);
  pb.x_s = xs;
  pb.u_s = us;
  const MpcController c(pb);
  ControllerState st;
  const auto r = c.control_step(st, xs, Matrix(0, 10));
  EXPECT_LT((st.sequence.array() - 0.3).abs().maxCoeff(), 1e-7);
  EXPECT_NEAR(r.input[0], 0.3, 1e-7);
}

TEST(Mpc, IterationBudgetAndEarlyStop) {
  std::mt19937_64 rng(33);
  const KoopmanModel km = toy_model(Variant::DKOIA, 2, 1, 0, 4, 2, rng);
  auto pb = base_problem(std::make_shared<const KoopmanModel>(km), 4);
  pb.max_iterations = 1;
  ControllerState st;
  EXPECT_EQ(MpcController(pb).control_step(st, Vector::Ones(2), Matrix(0, 4)).trace.size(), 1u);
  pb.max_iterations = 5;
  pb.stop_tolerance = 1e300;
  ControllerState st2;
  EXPECT_EQ(MpcController(pb).control_step(st2, Vector::Ones(2), Matrix(0, 4)).trace.size(), 1u);
  pb.stop_tolerance = std::numeric_limits<double>::infinity();
  ControllerState st3;
  EXPECT_EQ(MpcController(pb).control_step(st3, Vector::Ones(2), Matrix(0, 4)).trace.size(), 5u);
}

TEST(Mpc, IterateReturnsAffineConsistentStates) {
  std::mt19937_64 rng(34);
  const KoopmanModel km = toy_model(Variant::DKOIA, 2, 1, 1, 4, 2, rng);
  const MpcController c(base_problem(std::make_shared<const KoopmanModel>(km), 6));
  const Vector z0 = lift(km, Vector::Ones(2));
  const Matrix p = random_matrix(1, 6, rng);
  const auto rec = c.iterate_once(z0, p, Matrix::Zero(1, 6));
  ASSERT_EQ(rec.lifted.cols(), 7);
  EXPECT_EQ(rec.lifted.col(0), z0);
  EXPECT_TRUE((rec.inputs.array().abs() <= 1.0).all());
  EXPECT_THROW(c.iterate_once(z0, random_matrix(1, 3, rng), Matrix::Zero(1, 6)), ShapeError);
}

TEST(Mpc, FeasibilityFuzz) {
  std::mt19937_64 rng(35);
  const KoopmanModel km = toy_model(Variant::DKOIA, 3, 2, 0, 5, 2, rng);
  auto pb = base_problem(std::make_shared<const KoopmanModel>(km), 6);
  pb.input_lower = (Vector(2) << -0.5, 0.0).finished();
  pb.input_upper = (Vector(2) << 0.2, 2.0).finished();
  pb.u_s = (Vector(2) << 1.0, -1.0).finished();  // outside the box on purpose
  const MpcController c(pb);
  ControllerState st;
  for (int k = 0; k < 1000; ++k) {
    const auto r = c.control_step(st, random_vector(3, rng, 3.0), Matrix(0, 6));
    ASSERT_TRUE((r.input.array() >= pb.input_lower.array()).all());
    ASSERT_TRUE((r.input.array() <= pb.input_upper.array()).all());
  }
}

TEST(Mpc, ProblemValidation) {
  const auto m = linear_model(Matrix::Constant(1, 1, 0.5), Matrix::Ones(1, 1));
  auto pb = base_problem(m, 3);
  pb.Q = Matrix::Constant(1, 1, -1.0);
  EXPECT_THROW(MpcController{pb}, ConfigError);
  pb = base_problem(m, 0);
  EXPECT_THROW(MpcController{pb}, ConfigError);
  pb = base_problem(m, 3);
  pb.max_iterations = 0;
  EXPECT_THROW(MpcController{pb}, ConfigError);
}

TEST(ClosedLoop, RegulatesLinearPlantAndLogs) {
  const Matrix a = Matrix::Constant(1, 1, 0.9), b = Matrix::Constant(1, 1, 1.0);
  auto pb = base_problem(linear_model(a, b), 5);
  pb.x_s = Vector::Constant(1, 1.0);
  pb.u_s = Vector::Constant(1, 0.1);
  // x' = ln(0.9) x + c u sampled at dt = 1 is x+ = 0.9 x + u.
  const double lam = std::log(0.9);
  const double gain = lam / (0.9 - 1.0);
  PlantModel plant;
  plant.state_dim = 1;
  plant.input_dim = 1;
  plant.disturbance_dim = 0;
  plant.rhs = [lam, gain](const Vector& x, const Vector& u, const Vector&) { return Vector(lam * x + gain * u); };
  plant.input_lower = pb.input_lower;
  plant.input_upper = pb.input_upper;
  const MpcController c(pb);
  const std::vector<Vector> dist(45, Vector(0));
  ClosedLoopOptions opt;
  opt.keep_traces = true;
  const auto log = run_closed_loop(c, plant, Vector::Constant(1, -2.0), dist, 40, 1.0, opt);
  ASSERT_EQ(log.states.size(), 40u);
  EXPECT_EQ(log.traces.size(), 40u);
  EXPECT_LT(log.rmse.back(), 1e-4);
  EXPECT_NEAR(log.rmse[0], 3.0, 1e-12);
  std::ostringstream out;
  write_closed_loop_csv(log, out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "k,t,x1,u1,rmse_k,qp_iters,mpc_iters");
  EXPECT_THROW(run_closed_loop(c, plant, Vector::Zero(1), std::vector<Vector>(10, Vector(0)), 40, 1.0), ConfigError);
}
