#pragma once

// Independent reference implementations used as test oracles. They share no
// code with the library beyond the data structures they inspect.

#include "dkoia/condense.hpp"
#include "dkoia/koopman.hpp"
#include "dkoia/qp.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace dkoia::testing {

inline Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// Identity single-layer network n -> n.
inline LiftingNetwork identity_network(Index n) {
  LiftingNetwork net = LiftingNetwork::zeros({n, n});
  net.weights[0].setIdentity();
  return net;
}

/// Small random model with nonzero networks and a stable-ish A.
inline KoopmanModel toy_model(Variant v, Index n, Index m, Index p, Index N, Index M, std::mt19937_64& rng,
                              std::vector<Index> hidden = {5, 5}) {
  TrainingConfig cfg;
  cfg.lift_dim = N;
  cfg.phi_dim = M;
  cfg.psi_hidden = hidden;
  cfg.phi_hidden = hidden;
  cfg.init_scale = 0.4;
  KoopmanModel model = init_model(v, n, m, p, cfg, rng);
  model.A = 0.8 * Matrix::Identity(N, N) + random_matrix(N, N, rng, 0.1);
  for (auto& b : model.psi.biases) b = random_vector(b.size(), rng, 0.2);
  for (auto& b : model.phi.biases) b = random_vector(b.size(), rng, 0.2);
  return model;
}

/// Random normalized window batch.
inline WindowBatch random_batch(Index n, Index m, Index p, Index H, Index B, std::mt19937_64& rng) {
  WindowBatch batch;
  for (Index j = 0; j <= H; ++j) batch.x.push_back(random_matrix(n, B, rng));
  for (Index j = 0; j < H; ++j) {
    batch.u.push_back(random_matrix(m, B, rng));
    batch.p.push_back(random_matrix(p, B, rng));
  }
  return batch;
}

/// Naive per-sample loss: plain loops over windows and steps.
inline double reference_loss(const KoopmanModel& model, const WindowBatch& batch, double l2) {
  const Index B = batch.size(), H = batch.horizon();
  double total = 0.0;
  for (Index b = 0; b < B; ++b) {
    Vector z = forward(model.psi, Vector(batch.x[0].col(b)));
    for (Index j = 0; j <= H; ++j) {
      const Vector xhat = model.C * z;
      total += (xhat - batch.x[static_cast<std::size_t>(j)].col(b)).squaredNorm();
      if (j == H) break;
      const Vector u = batch.u[static_cast<std::size_t>(j)].col(b);
      const Vector pv = batch.p[static_cast<std::size_t>(j)].col(b);
      Vector next = model.A * z + model.Bu * u + model.Bp * pv;
      if (model.has_phi()) {
        Vector in(xhat.size() + u.size() + pv.size());
        in << xhat, u, pv;
        next += model.Bphi * forward(model.phi, in);
      }
      z = next;
    }
  }
  double penalty = 0.0;
  for (const Matrix* w : {&model.A, &model.Bu, &model.Bp, &model.Bphi}) penalty += w->squaredNorm();
  for (const auto& w : model.psi.weights) penalty += w.squaredNorm();
  for (const auto& w : model.phi.weights) penalty += w.squaredNorm();
  return total / static_cast<double>(B) + l2 * penalty;
}

struct GradientCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Central finite differences over every parameter entry. Relative error is
/// |a - f| / max(|a|, |f|, floor).
inline GradientCheck finite_difference_check(KoopmanModel& model, const WindowBatch& batch, double l2,
                                             double h = 1e-6, double floor = 1e-4, bool train_psi = true) {
  const LossResult analytic = batch_loss(model, batch, l2, true, train_psi);
  GradientCheck out;
  const auto params = model.parameters(train_psi);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto map = params[k].map();
    for (Index i = 0; i < map.size(); ++i) {
      double* v = map.data() + i;
      const double saved = *v;
      *v = saved + h;
      const double fp = batch_loss(model, batch, l2, false, train_psi).total;
      *v = saved - h;
      const double fm = batch_loss(model, batch, l2, false, train_psi).total;
      *v = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic.gradient[k].data()[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = params[k].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

/// Random strongly convex box QP.
inline QpProblem random_qp(Index n, std::mt19937_64& rng, double min_eig = 0.1) {
  const Matrix a = random_matrix(n, n, rng);
  QpProblem qp;
  qp.hessian = a * a.transpose() + min_eig * Matrix::Identity(n, n);
  qp.linear = random_vector(n, rng, 3.0);
  qp.lower = random_vector(n, rng, 1.0).array() - 0.5;
  qp.upper = qp.lower.array() + 0.2 + random_vector(n, rng, 1.0).array().abs();
  qp.constant = 0.0;
  return qp;
}

/// Exhaustive active-set enumeration: every variable at its lower bound, its
/// upper bound, or free. The free subsystem is solved directly; the best
/// feasible candidate is the global minimizer of a strictly convex QP.
inline Vector enumerate_box_qp(const QpProblem& qp) {
  const Index n = qp.dim();
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  Vector best;
  double best_f = std::numeric_limits<double>::infinity();
  Vector u(n);
  for (;;) {
    std::vector<Index> free;
    for (Index i = 0; i < n; ++i) {
      const int s = state[static_cast<std::size_t>(i)];
      if (s == 0) free.push_back(i);
      else u[i] = s == 1 ? qp.lower[i] : qp.upper[i];
    }
    bool feasible = true;
    if (!free.empty()) {
      const auto nf = static_cast<Index>(free.size());
      Matrix hff(nf, nf);
      Vector rhs(nf);
      for (Index a = 0; a < nf; ++a) {
        const Index ia = free[static_cast<std::size_t>(a)];
        rhs[a] = -qp.linear[ia];
        for (Index j = 0; j < n; ++j) {
          if (state[static_cast<std::size_t>(j)] != 0) rhs[a] -= qp.hessian(ia, j) * u[j];
        }
        for (Index b = 0; b < nf; ++b) hff(a, b) = qp.hessian(ia, free[static_cast<std::size_t>(b)]);
      }
      const Vector sol = hff.llt().solve(rhs);
      for (Index a = 0; a < nf; ++a) {
        const Index ia = free[static_cast<std::size_t>(a)];
        u[ia] = sol[a];
        if (sol[a] < qp.lower[ia] - 1e-12 || sol[a] > qp.upper[ia] + 1e-12) feasible = false;
      }
    }
    if (feasible) {
      const double f = qp.objective(u);
      if (f < best_f) {
        best_f = f;
        best = u;
      }
    }
    Index k = 0;
    while (k < n && state[static_cast<std::size_t>(k)] == 2) state[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
    ++state[static_cast<std::size_t>(k)];
  }
  return best;
}

/// Explicit rollout of the affine lifted model and the stage costs
/// sum_{i=1..N} ||C z_i - x_s||_Q^2 + sum_{j=0..N-1} ||u_j - u_s||_R^2.
inline double rollout_cost(const KoopmanModel& model, const Vector& z0, const Matrix& offsets, const Vector& U,
                           const Matrix& Q, const Matrix& R, const Vector& x_s, const Vector& u_s) {
  const Index m = model.input_dim(), N = offsets.cols();
  Vector z = z0;
  double cost = 0.0;
  for (Index j = 0; j < N; ++j) {
    const Vector u = U.segment(j * m, m);
    z = model.A * z + model.Bu * u + offsets.col(j);
    const Vector e = model.C * z - x_s;
    cost += e.dot(Q * e) + (u - u_s).dot(R * (u - u_s));
  }
  return cost;
}

}  // namespace dkoia::testing
