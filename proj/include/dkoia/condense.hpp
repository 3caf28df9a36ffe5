#pragma once

// Dense condensation of the Koopman MPC subproblem. With the nonlinear input
// terms frozen as per-step offsets d_j the lifted dynamics are affine,
//
//   z_{j+1} = A z_j + B_u u_j + d_j,   y_j = C z_j,
//
// so the stage costs sum_{i=1..N} ||y_i - x_s||_Q^2 + sum_{j=0..N-1}
// ||u_j - u_s||_R^2 become 1/2 U'HU + g'U + c. Everything is in normalized
// units.

#include "dkoia/koopman.hpp"
#include "dkoia/qp.hpp"

#include <optional>

namespace dkoia {

/// Soft state bounds: weight * (violation)^2 on every output component whose
/// reference prediction lies outside [lower, upper].
struct StatePenalty {
  Vector lower;
  Vector upper;
  double weight = 0.0;
};

struct CondensedPrediction {
  Matrix free_outputs;  // n x N: y_i with U = 0, i = 1..N
  Matrix gain;          // (N n) x (N m): the G with Y = G U + free
};

/// Stacked outputs y_1..y_N as an affine map of U.
inline CondensedPrediction condense_outputs(const KoopmanModel& model, const Vector& z0, const Matrix& offsets,
                                            Index horizon) {
  const Index n = model.state_dim(), m = model.input_dim(), N = model.lift_dim();
  if (horizon < 1) throw ConfigError("condense: horizon must be >= 1");
  require_size(z0.size(), N, "condense initial lifted state");
  require_shape(offsets, N, horizon, "condense offsets");

  CondensedPrediction out;
  out.free_outputs.resize(n, horizon);
  out.gain = Matrix::Zero(horizon * n, horizon * m);

  // CA^k B_u for k = 0..horizon-1.
  std::vector<Matrix> markov;
  markov.reserve(static_cast<std::size_t>(horizon));
  Matrix power_b = model.Bu;
  for (Index k = 0; k < horizon; ++k) {
    markov.push_back(model.C * power_b);
    power_b = model.A * power_b;
  }
  Vector z = z0;
  for (Index i = 1; i <= horizon; ++i) {
    z = model.A * z + offsets.col(i - 1);
    out.free_outputs.col(i - 1) = model.C * z;
    for (Index j = 0; j < i; ++j) out.gain.block((i - 1) * n, j * m, n, m) = markov[static_cast<std::size_t>(i - 1 - j)];
  }
  return out;
}

/// Builds the box QP. `reference_outputs` (n x N, outputs y_1..y_N of the
/// previous iterate) selects which soft state bounds are active.
inline QpProblem condense(const KoopmanModel& model, const Vector& z0, const Matrix& offsets, const Matrix& Q,
                          const Matrix& R, const Vector& x_s, const Vector& u_s, Index horizon,
                          const Vector& input_lower, const Vector& input_upper,
                          const std::optional<StatePenalty>& penalty = std::nullopt,
                          const Matrix* reference_outputs = nullptr) {
  const Index n = model.state_dim(), m = model.input_dim();
  require_shape(Q, n, n, "condense Q");
  require_shape(R, m, m, "condense R");
  require_size(x_s.size(), n, "condense x_s");
  require_size(u_s.size(), m, "condense u_s");
  require_size(input_lower.size(), m, "condense input lower bound");
  require_size(input_upper.size(), m, "condense input upper bound");

  const CondensedPrediction pred = condense_outputs(model, z0, offsets, horizon);
  const Matrix& G = pred.gain;

  // Residual at U = 0 and weighted gain, one block row per step.
  Vector e(horizon * n);
  Matrix qg(horizon * n, horizon * m);
  for (Index i = 0; i < horizon; ++i) {
    e.segment(i * n, n) = pred.free_outputs.col(i) - x_s;
    qg.middleRows(i * n, n) = Q * G.middleRows(i * n, n);
  }
  QpProblem qp;
  qp.hessian = G.transpose() * qg;
  Vector qe(horizon * n);
  for (Index i = 0; i < horizon; ++i) qe.segment(i * n, n) = Q * e.segment(i * n, n);
  qp.linear = G.transpose() * qe;
  qp.constant = e.dot(qe);
  for (Index j = 0; j < horizon; ++j) {
    qp.hessian.block(j * m, j * m, m, m) += R;
    qp.linear.segment(j * m, m) -= R * u_s;
    qp.constant += u_s.dot(R * u_s);
  }

  if (penalty && penalty->weight > 0.0) {
    require_size(penalty->lower.size(), n, "state penalty lower bound");
    require_size(penalty->upper.size(), n, "state penalty upper bound");
    const Matrix& ref = reference_outputs ? *reference_outputs : pred.free_outputs;
    require_shape(ref, n, horizon, "state penalty reference outputs");
    for (Index i = 0; i < horizon; ++i) {
      for (Index c = 0; c < n; ++c) {
        double bound;
        if (ref(c, i) > penalty->upper[c]) bound = penalty->upper[c];
        else if (ref(c, i) < penalty->lower[c]) bound = penalty->lower[c];
        else continue;
        const auto row = G.row(i * n + c);
        const double r0 = pred.free_outputs(c, i) - bound;
        qp.hessian.noalias() += penalty->weight * row.transpose() * row;
        qp.linear += penalty->weight * r0 * row.transpose();
        qp.constant += penalty->weight * r0 * r0;
      }
    }
  }

  qp.hessian = 2.0 * qp.hessian;
  qp.hessian = 0.5 * (qp.hessian + qp.hessian.transpose()).eval();
  qp.linear = 2.0 * qp.linear;
  qp.lower = input_lower.replicate(horizon, 1);
  qp.upper = input_upper.replicate(horizon, 1);
  return qp;
}

/// Lifted states z_0..z_N of the affine model for a given stacked U.
inline Matrix affine_states(const KoopmanModel& model, const Vector& z0, const Matrix& offsets, const Vector& U) {
  const Index m = model.input_dim();
  const Index horizon = offsets.cols();
  require_size(U.size(), horizon * m, "affine_states input sequence");
  Matrix z(model.lift_dim(), horizon + 1);
  z.col(0) = z0;
  for (Index j = 0; j < horizon; ++j) z.col(j + 1) = model.A * z.col(j) + model.Bu * U.segment(j * m, m) + offsets.col(j);
  return z;
}

}  // namespace dkoia
