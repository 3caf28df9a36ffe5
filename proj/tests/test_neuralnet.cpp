#include "dkoia/neuralnet.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace dkoia;
using dkoia::testing::random_matrix;

namespace {

// Per-sample forward pass written from the definition.
Vector naive_forward(const LiftingNetwork& net, Vector a) {
  for (std::size_t i = 0; i < net.layers(); ++i) {
    Vector z(net.weights[i].rows());
    for (Index r = 0; r < z.size(); ++r) {
      double s = net.biases[i][r];
      for (Index c = 0; c < a.size(); ++c) s += net.weights[i](r, c) * a[c];
      z[r] = (i + 1 < net.layers()) ? std::max(0.0, s) : s;
    }
    a = z;
  }
  return a;
}

LiftingNetwork random_net(const std::vector<Index>& sizes, std::mt19937_64& rng) {
  auto net = LiftingNetwork::he_uniform(sizes, rng);
  for (auto& b : net.biases) b = dkoia::testing::random_vector(b.size(), rng, 0.3);
  return net;
}

}  // namespace

TEST(Network, BatchedMatchesNaive) {
  std::mt19937_64 rng(1);
  const auto net = random_net({4, 7, 5, 3}, rng);
  const Matrix in = random_matrix(4, 9, rng);
  const Matrix out = forward(net, in);
  for (Index b = 0; b < in.cols(); ++b) {
    EXPECT_LT((out.col(b) - naive_forward(net, in.col(b))).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Network, HeUniformRange) {
  std::mt19937_64 rng(2);
  const auto net = LiftingNetwork::he_uniform({6, 50, 2}, rng);
  EXPECT_LE(net.weights[0].cwiseAbs().maxCoeff(), std::sqrt(6.0 / 6.0));
  EXPECT_LE(net.weights[1].cwiseAbs().maxCoeff(), std::sqrt(6.0 / 50.0));
  EXPECT_EQ(net.biases[0].squaredNorm(), 0.0);
  EXPECT_EQ(net.layer_sizes(), (std::vector<Index>{6, 50, 2}));
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto net = random_net({3, 6, 4, 2}, rng);
  const Matrix in = random_matrix(3, 5, rng);
  const Matrix w = random_matrix(2, 5, rng);  // loss = sum(w .* f(in))
  auto loss = [&](const LiftingNetwork& n, const Matrix& x) { return forward(n, x).cwiseProduct(w).sum(); };
  ForwardCache cache;
  forward(net, in, &cache);
  const BackwardResult r = backward(net, w, cache);
  const double h = 1e-6;
  auto params = net.parameters("net");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto map = params[k].map();
    for (Index i = 0; i < map.size(); ++i) {
      const double saved = map.data()[i];
      map.data()[i] = saved + h;
      const double fp = loss(net, in);
      map.data()[i] = saved - h;
      const double fm = loss(net, in);
      map.data()[i] = saved;
      EXPECT_NEAR(r.params[k].data()[i], (fp - fm) / (2 * h), 1e-6) << params[k].name;
    }
  }
  for (Index i = 0; i < in.size(); ++i) {
    Matrix xp = in, xm = in;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    EXPECT_NEAR(r.input.data()[i], (loss(net, xp) - loss(net, xm)) / (2 * h), 1e-6);
  }
}

TEST(Network, BackwardNeedsCache) {
  std::mt19937_64 rng(4);
  const auto net = random_net({2, 3, 1}, rng);
  ForwardCache empty;
  EXPECT_THROW(backward(net, Matrix::Ones(1, 1), empty), UsageError);
}

TEST(Network, ParameterOrderAndDecay) {
  auto net = LiftingNetwork::zeros({2, 3, 1});
  const auto p = net.parameters("psi");
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0].name, "psi.W0");
  EXPECT_TRUE(p[0].decay);
  EXPECT_EQ(p[1].name, "psi.b0");
  EXPECT_FALSE(p[1].decay);
  EXPECT_EQ(p[2].rows, 1);
  EXPECT_EQ(p[2].cols, 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix w = Matrix::Constant(2, 2, 1.0);
  std::vector<ParamRef> params{{"w", w.data(), 2, 2, true}};
  AdamState st;
  st.config.learning_rate = 0.01;
  Matrix g(2, 2);
  g << 3.0, -0.5, 1e-3, -20.0;
  adam_step(st, params, {g});
  // Bias-corrected m/sqrt(v) = g/|g| on the first step.
  for (Index i = 0; i < 4; ++i) {
    const double gi = g.data()[i];
    const double expect = 1.0 - 0.01 * gi / (std::abs(gi) + 1e-8);
    EXPECT_NEAR(w.data()[i], expect, 1e-12);
  }
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MatchesReferenceRecursion) {
  Matrix w = Matrix::Constant(1, 1, 0.5);
  std::vector<ParamRef> params{{"w", w.data(), 1, 1, true}};
  AdamState st;
  double m = 0, v = 0, x = 0.5;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * x - 0.3 * t;
    adam_step(st, params, {Matrix::Constant(1, 1, g)});
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 1e-3 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(w(0, 0), x, 1e-15);
  }
}

TEST(Adam, RejectsNonFiniteGradient) {
  Matrix a = Matrix::Zero(1, 1), b = Matrix::Zero(2, 1);
  std::vector<ParamRef> params{{"a", a.data(), 1, 1, true}, {"b", b.data(), 2, 1, false}};
  AdamState st;
  Matrix bad = Matrix::Zero(2, 1);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(st, params, {Matrix::Zero(1, 1), bad});
    FAIL();
  } catch (const OptimizerError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_THROW(adam_step(st, params, {Matrix::Zero(1, 1)}), ShapeError);
}
