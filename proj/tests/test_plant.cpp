#include "dkoia/plant.hpp"
#include "dkoia/reactor_separator.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace dkoia;

namespace {

PlantModel decay_plant() {
  PlantModel p;
  p.state_dim = 1;
  p.input_dim = 1;
  p.disturbance_dim = 0;
  p.rhs = [](const Vector& x, const Vector& u, const Vector&) { return Vector(-x + u); };
  p.input_lower = Vector::Constant(1, -1.0);
  p.input_upper = Vector::Constant(1, 1.0);
  return p;
}

PlantModel reactor() { return reactor_separator::load_plant(DKOIA_DATA_DIR "/reactor_separator.params"); }

}  // namespace

TEST(Rk4, ExponentialDecay) {
  const auto p = decay_plant();
  const Vector x = integrate_step(p, Vector::Ones(1), Vector::Zero(1), Vector(0), 0.1, 10);
  EXPECT_NEAR(x[0], 0.904837418, 1e-9);
  // Single RK4 step: Taylor polynomial of e^{-h} to fourth order.
  const Vector one = integrate_step(p, Vector::Ones(1), Vector::Zero(1), Vector(0), 0.1, 1);
  EXPECT_NEAR(one[0], 1.0 - 0.1 + 0.005 - 0.1 * 0.1 * 0.1 / 6.0 + 1e-4 / 24.0, 1e-15);
}

TEST(Rk4, FourthOrderConvergence) {
  const auto p = decay_plant();
  const double exact = std::exp(-1.0);
  const double e2 = std::abs(integrate_step(p, Vector::Ones(1), Vector::Zero(1), Vector(0), 1.0, 4)[0] - exact);
  const double e4 = std::abs(integrate_step(p, Vector::Ones(1), Vector::Zero(1), Vector(0), 1.0, 8)[0] - exact);
  const double ratio = e2 / e4;
  EXPECT_GE(ratio, 14.0);
  EXPECT_LE(ratio, 18.0);
}

TEST(Rk4, DivergenceNamesChannel) {
  PlantModel p = decay_plant();
  p.rhs = [](const Vector& x, const Vector&, const Vector&) { return Vector(x.array().square() * 1e300); };
  try {
    integrate_step(p, Vector::Constant(1, 10.0), Vector::Zero(1), Vector(0), 1.0, 1);
    FAIL() << "expected IntegrationDiverged";
  } catch (const IntegrationDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("0"), std::string::npos);
  }
}

TEST(Rk4, RejectsBadArguments) {
  const auto p = decay_plant();
  EXPECT_THROW(integrate_step(p, Vector::Ones(2), Vector::Zero(1), Vector(0), 0.1), ShapeError);
  EXPECT_THROW(integrate_step(p, Vector::Ones(1), Vector::Zero(1), Vector(0), 0.0), ConfigError);
}

TEST(Simulate, LengthAndNoiseDeterminism) {
  const auto p = decay_plant();
  const std::vector<Vector> u(5, Vector::Zero(1)), d(5, Vector(0));
  ProcessNoiseConfig nc{Vector::Constant(1, 0.1), Vector::Constant(1, 0.15), 7};
  const auto a = simulate(p, Vector::Ones(1), u, d, 0.1, nc);
  const auto b = simulate(p, Vector::Ones(1), u, d, 0.1, nc);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k][0], b[k][0]);
  // Each step's noise respects the clip.
  for (std::size_t k = 0; k + 1 < a.size(); ++k) {
    const double clean = integrate_step(p, a[k], u[k], d[k], 0.1)[0];
    EXPECT_LE(std::abs(a[k + 1][0] - clean), 0.15 + 1e-15);
  }
}

TEST(ReactorSeparator, SteadyStateIsStationary) {
  const auto plant = reactor();
  const Vector xs = reactor_separator::nominal_steady_state();
  const Vector us = reactor_separator::nominal_input();
  const Vector f = plant.rhs(xs, us, Vector(0));
  EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-8);
  // One hour of integration stays put.
  const Vector x = reactor_separator::relax_to_steady_state(plant, xs, us, 1.0);
  EXPECT_LT(((x - xs).array() / xs.array()).abs().maxCoeff(), 1e-8);
}

TEST(ReactorSeparator, ParameterFileErrors) {
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_THROW(parse_parameter_text(dup), ConfigError);
  std::istringstream bad("a = x\n");
  EXPECT_THROW(parse_parameter_text(bad), ConfigError);
  std::istringstream missing("F10 = 1\n");
  EXPECT_THROW(reactor_separator::make_plant(parse_parameter_text(missing)), ConfigError);
  EXPECT_THROW(reactor_separator::load_plant("/nonexistent/params"), IoError);
}

TEST(Excitation, StepHoldProperties) {
  const auto plant = reactor();
  ExcitationConfig cfg;
  cfg.hold_steps = 20;
  cfg.noise_std = Vector::Zero(3);
  cfg.seed = 11;
  const auto u = generate_excitation(cfg, plant, 200);
  ASSERT_EQ(u.size(), 200u);
  for (std::size_t k = 0; k < u.size(); ++k) {
    EXPECT_TRUE((u[k].array() >= plant.input_lower.array()).all());
    EXPECT_TRUE((u[k].array() <= plant.input_upper.array()).all());
    if (k % 20 != 0) {
      EXPECT_EQ(u[k], u[k - 1]);
    }
  }
  EXPECT_NE(u[0], u[20]);
  cfg.noise_std = reactor_separator::excitation_noise_std();
  const auto a = generate_excitation(cfg, plant, 100);
  const auto b = generate_excitation(cfg, plant, 100);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
}

TEST(Excitation, SineWave) {
  const auto plant = reactor();
  ExcitationConfig cfg;
  cfg.kind = ExcitationKind::SineWave;
  cfg.hold_steps = 1;
  cfg.noise_std = Vector::Zero(3);
  cfg.amplitude = Vector::Constant(3, 1e5);
  cfg.bias = reactor_separator::nominal_input();
  cfg.omega_min = cfg.omega_max = 0.5;
  cfg.phase = Vector::Zero(3);
  const auto u = generate_excitation(cfg, plant, 10);
  for (std::size_t k = 0; k < u.size(); ++k) {
    EXPECT_NEAR(u[k][0], 2.9e6 + 1e5 * std::sin(0.5 * static_cast<double>(k)), 1e-6);
  }
  cfg.amplitude = Vector::Constant(3, 3e6);
  EXPECT_THROW(generate_excitation(cfg, plant, 10), ConfigError);
}

TEST(TrajectoryCsv, RoundTrip) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<Vector> x, u, p;
  for (int k = 0; k < 4; ++k) {
    x.push_back(Vector::NullaryExpr(2, [&] { return g(rng); }));
    u.push_back(Vector::NullaryExpr(1, [&] { return g(rng); }));
    p.push_back(Vector::NullaryExpr(1, [&] { return g(rng); }));
  }
  std::stringstream ss;
  write_trajectory_csv(ss, 0.005, 0.0, x, u, p);
  const auto t = read_trajectory_csv(ss);
  ASSERT_EQ(t.states.size(), 4u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(t.states[k], x[k]);
    EXPECT_EQ(t.inputs[k], u[k]);
    EXPECT_EQ(t.disturbances[k], p[k]);
  }
}
