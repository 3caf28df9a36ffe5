#pragma once

// Box-constrained convex QPs from the condensed Koopman MPC problem:
//
//   minimize   1/2 U' H U + g' U + c     subject to  lower <= U <= upper
//
// U stacks the N control moves [u_0; ...; u_{N-1}].

#include "dkoia/core.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

namespace dkoia {

struct QpProblem {
  Matrix hessian;  // H, symmetric PSD
  Vector linear;   // g
  Vector lower;
  Vector upper;
  double constant = 0.0;

  Index dim() const { return linear.size(); }

  double objective(const Vector& u) const { return 0.5 * u.dot(hessian * u) + linear.dot(u) + constant; }
  Vector gradient(const Vector& u) const { return hessian * u + linear; }
  Vector project(const Vector& u) const { return clip(u, lower, upper); }

  /// ||U - P(U - grad f(U))||_inf, zero exactly at the optimum.
  double stationarity(const Vector& u) const { return (u - project(u - gradient(u))).lpNorm<Eigen::Infinity>(); }

  void validate() const {
    const Index n = dim();
    require_shape(hessian, n, n, "QP hessian");
    require_size(lower.size(), n, "QP lower bound");
    require_size(upper.size(), n, "QP upper bound");
    if ((lower.array() > upper.array()).any()) throw ConfigError("QP: lower bound exceeds upper bound");
    if (!hessian.allFinite() || !linear.allFinite() || !std::isfinite(constant)) {
      throw NumericalError("QP data is not finite");
    }
    const double scale = std::max(1.0, hessian.cwiseAbs().maxCoeff());
    if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw ConfigError("QP hessian is not symmetric");
    }
  }
};

enum class QpStatus { Converged, MaxIter };

struct QpSolution {
  Vector u;
  double objective = 0.0;
  int iterations = 0;
  QpStatus status = QpStatus::MaxIter;
  std::vector<double> objective_trace;  // accepted iterates, non-increasing (accumulated decreases)
};

struct QpSettings {
  double tolerance = 1e-8;
  int max_iter = 20000;
  int polish_every = 25;  // active-set Newton polish period, 0 disables
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_method(const Matrix& h, int iters = 100) {
  if (h.rows() == 0) return 0.0;
  Vector v = Vector::Ones(h.rows()) / std::sqrt(static_cast<double>(h.rows()));
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    const Vector w = h * v;
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / nrm;
    if (std::abs(next - lambda) <= 1e-10 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  // Power iteration approaches from below; pad so 1/L stays a safe step.
  return std::max(lambda, h.diagonal().maxCoeff()) * 1.05;
}

namespace detail {
/// Newton step on the variables strictly inside the box; bounded ones stay put.
inline bool polish(const QpProblem& qp, const Vector& u, Vector& out) {
  const Vector grad = qp.gradient(u);
  std::vector<Index> free;
  for (Index i = 0; i < qp.dim(); ++i) {
    const bool at_lower = u[i] <= qp.lower[i] && grad[i] > 0.0;
    const bool at_upper = u[i] >= qp.upper[i] && grad[i] < 0.0;
    if (!at_lower && !at_upper) free.push_back(i);
  }
  if (free.empty()) return false;
  const auto nf = static_cast<Index>(free.size());
  Matrix hff(nf, nf);
  Vector rhs(nf);
  for (Index a = 0; a < nf; ++a) {
    rhs[a] = -grad[free[static_cast<std::size_t>(a)]];
    for (Index b = 0; b < nf; ++b) hff(a, b) = qp.hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
  }
  const Eigen::LDLT<Matrix> ldlt(hff);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  const Vector step = ldlt.solve(rhs);
  if (!step.allFinite()) return false;
  out = u;
  for (Index a = 0; a < nf; ++a) out[free[static_cast<std::size_t>(a)]] += step[a];
  out = qp.project(out);
  return true;
}
}  // namespace detail

/// Monotone accelerated projected gradient (FISTA with restart) plus a
/// periodic active-set Newton polish. Every iterate is feasible; the
/// returned point is the best one seen.
inline QpSolution solve(const QpProblem& qp, const Vector* warm_start = nullptr, const QpSettings& settings = {}) {
  qp.validate();
  QpSolution sol;
  if (warm_start) require_size(warm_start->size(), qp.dim(), "QP warm start");
  Vector x = warm_start ? qp.project(*warm_start) : qp.project(Vector::Zero(qp.dim()));
  double fx = qp.objective(x);
  sol.objective_trace.push_back(fx);

  auto finish = [&](QpStatus status, int iters) {
    sol.u = x;
    sol.objective = qp.objective(x);
    sol.iterations = iters;
    sol.status = status;
    return sol;
  };
  if (qp.dim() == 0 || qp.stationarity(x) < settings.tolerance) return finish(QpStatus::Converged, 0);

  const double lipschitz = power_method(qp.hessian);
  if (lipschitz <= 0.0) {
    // Linear objective: the minimizer sits on the bounds the gradient points to.
    Vector y = x;
    for (Index i = 0; i < qp.dim(); ++i) {
      if (qp.linear[i] > 0.0) y[i] = qp.lower[i];
      else if (qp.linear[i] < 0.0) y[i] = qp.upper[i];
    }
    const double fy = qp.objective(y);
    if (fy <= fx) {
      x = y;
      fx = fy;
    }
    sol.objective_trace.push_back(fx);
    return finish(qp.stationarity(x) < settings.tolerance ? QpStatus::Converged : QpStatus::MaxIter, 1);
  }
  const double step = 1.0 / lipschitz;

  // f(y) - f(x) evaluated as (grad f(x) + H d / 2)' d with d = y - x, which
  // stays accurate when the decrease is far below the rounding level of f.
  auto change = [&](const Vector& from, const Vector& grad_from, const Vector& to) {
    const Vector d = to - from;
    return (grad_from + 0.5 * (qp.hessian * d)).dot(d);
  };

  Vector y = x;
  double t = 1.0;
  for (int it = 1; it <= settings.max_iter; ++it) {
    const Vector gx = qp.gradient(x);
    Vector cand = qp.project(y - step * qp.gradient(y));
    double dc = change(x, gx, cand);
    if (dc > 0.0) {
      // Momentum overshot: restart from the accepted point.
      t = 1.0;
      cand = qp.project(x - step * gx);
      dc = change(x, gx, cand);
    }
    const Vector prev = x;
    if (dc <= 0.0) {
      x = std::move(cand);
      fx += dc;
    }
    if (settings.polish_every > 0 && it % settings.polish_every == 0) {
      Vector p;
      if (detail::polish(qp, x, p)) {
        const double dp = change(x, qp.gradient(x), p);
        if (dp <= 0.0) {
          x = std::move(p);
          fx += dp;
          t = 1.0;
        }
      }
    }
    sol.objective_trace.push_back(fx);
    if (qp.stationarity(x) < settings.tolerance) return finish(QpStatus::Converged, it);

    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x + ((t - 1.0) / t_next) * (x - prev);
    t = t_next;
  }
  return finish(QpStatus::MaxIter, settings.max_iter);
}

/// Dense dump for cross-checking with other solvers: one CSV block per field.
inline void dump_qp_csv(const QpProblem& qp, std::ostream& out) {
  const Eigen::IOFormat csv(Eigen::FullPrecision, Eigen::DontAlignCols, ",", "\n");
  out << "# hessian " << qp.dim() << "x" << qp.dim() << '\n' << qp.hessian.format(csv) << '\n';
  out << "# linear\n" << qp.linear.transpose().format(csv) << '\n';
  out << "# lower\n" << qp.lower.transpose().format(csv) << '\n';
  out << "# upper\n" << qp.upper.transpose().format(csv) << '\n';
  out << "# constant\n" << std::setprecision(17) << qp.constant << '\n';
}

}  // namespace dkoia
