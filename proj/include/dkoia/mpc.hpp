#pragma once

// Iterative convex Koopman MPC. At each sampling instant the phi term of the
// lifted model is frozen along the previous iterate (u^[l-1], z^[l-1]), the
// resulting box QP is solved for u^[l], and this repeats l_max times (or
// until consecutive iterates agree to `stop_tolerance`). The first move of
// the final sequence is applied; the sequence, shifted by one, seeds the next
// instant.

#include "dkoia/condense.hpp"
#include "dkoia/koopman.hpp"
#include "dkoia/plant.hpp"
#include "dkoia/qp.hpp"

#include <limits>
#include <memory>
#include <optional>
#include <vector>

namespace dkoia {

/// Controller definition. Q and R weight normalized errors; set-points and
/// bounds are raw units.
struct MpcProblem {
  std::shared_ptr<const KoopmanModel> model;
  Matrix Q;
  Matrix R;
  Index horizon = 20;
  int max_iterations = 2;  // l_max
  Vector x_s;
  Vector u_s;
  Vector input_lower;
  Vector input_upper;
  std::optional<StatePenalty> state_penalty;  // raw-unit bounds
  double stop_tolerance = std::numeric_limits<double>::infinity();  // early stop off when infinite
  QpSettings qp;

  void validate() const {
    if (!model) throw ConfigError("mpc: no model");
    const Index n = model->state_dim(), m = model->input_dim();
    require_shape(Q, n, n, "mpc Q");
    require_shape(R, m, m, "mpc R");
    require_size(x_s.size(), n, "mpc x_s");
    require_size(u_s.size(), m, "mpc u_s");
    require_size(input_lower.size(), m, "mpc input lower bound");
    require_size(input_upper.size(), m, "mpc input upper bound");
    if (horizon < 1) throw ConfigError("mpc: horizon must be >= 1");
    if (max_iterations < 1) throw ConfigError("mpc: l_max must be >= 1");
    if ((input_lower.array() > input_upper.array()).any()) throw ConfigError("mpc: input lower bound exceeds upper");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 || (R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw ConfigError("mpc: Q and R must be symmetric");
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> eq(Q), er(R);
    if (eq.eigenvalues().minCoeff() <= 0.0) throw ConfigError("mpc: Q must be positive definite");
    if (er.eigenvalues().minCoeff() < 0.0) throw ConfigError("mpc: R must be positive semidefinite");
    if (state_penalty) {
      require_size(state_penalty->lower.size(), n, "mpc state lower bound");
      require_size(state_penalty->upper.size(), n, "mpc state upper bound");
      if (state_penalty->weight < 0.0) throw ConfigError("mpc: state penalty weight must be >= 0");
    }
  }
};

/// Warm-start memory: the last applied sequence (normalized, m x N).
struct ControllerState {
  Matrix sequence;
  bool has_history = false;
  long k = 0;
};

struct IterationRecord {
  Matrix inputs;        // m x N, normalized
  Matrix lifted;        // N_lift x (N + 1), affine-model prediction
  double objective = 0.0;
  double step_norm = 0.0;  // ||u^[l] - u^[l-1]||_2
  int qp_iterations = 0;
  QpStatus qp_status = QpStatus::Converged;
};

using IterationTrace = std::vector<IterationRecord>;

/// Normalized-unit view of an MpcProblem, built once per controller.
class MpcController {
 public:
  explicit MpcController(MpcProblem problem) : problem_(std::move(problem)) {
    problem_.validate();
    const KoopmanModel& mdl = *problem_.model;
    const auto& nz = mdl.normalizer;
    xs_n_ = nz.state.apply(problem_.x_s);
    us_n_ = nz.input.apply(problem_.u_s);
    lower_n_ = nz.input.apply(problem_.input_lower);
    upper_n_ = nz.input.apply(problem_.input_upper);
    if (problem_.state_penalty) {
      penalty_n_ = StatePenalty{nz.state.apply(problem_.state_penalty->lower),
                                nz.state.apply(problem_.state_penalty->upper), problem_.state_penalty->weight};
    }
  }

  const MpcProblem& problem() const { return problem_; }
  const KoopmanModel& model() const { return *problem_.model; }

  /// Shift-by-one of the stored sequence with the last move repeated; u_s
  /// (clipped) when there is no history.
  Matrix warm_start(const ControllerState& state) const {
    const Index m = model().input_dim(), N = problem_.horizon;
    if (!state.has_history) {
      const Vector u0 = clip(us_n_, lower_n_, upper_n_);
      return u0.replicate(1, N);
    }
    require_shape(state.sequence, m, N, "stored input sequence");
    Matrix out(m, N);
    if (N > 1) out.leftCols(N - 1) = state.sequence.rightCols(N - 1);
    out.col(N - 1) = state.sequence.col(N - 1);
    return out;
  }

  /// One convexified solve. `disturbances` is the normalized forecast (p x >=N),
  /// `previous` the normalized u^[l-1].
  IterationRecord iterate_once(const Vector& z0, const Matrix& disturbances, const Matrix& previous) const {
    const KoopmanModel& mdl = model();
    const Index N = problem_.horizon, m = mdl.input_dim(), n = mdl.state_dim();
    require_shape(previous, m, N, "previous input sequence");
    if (disturbances.rows() != mdl.disturbance_dim() || disturbances.cols() < N) {
      throw ShapeError("mpc: disturbance forecast shorter than the horizon");
    }

    // Nonlinear propagation along u^[l-1]; freeze d_j = B_p p_j + B_phi phi(.).
    Matrix offsets(mdl.lift_dim(), N);
    Matrix reference(n, N);
    Vector z = z0;
    for (Index j = 0; j < N; ++j) {
      const Vector xhat = mdl.C * z;
      Vector d = Vector::Zero(mdl.lift_dim());
      if (mdl.disturbance_dim() > 0) d.noalias() += mdl.Bp * disturbances.col(j);
      if (mdl.has_phi()) {
        d.noalias() += mdl.Bphi * forward(mdl.phi, Vector(phi_input(xhat, previous.col(j), disturbances.col(j)).col(0)));
      }
      offsets.col(j) = d;
      z = mdl.A * z + mdl.Bu * previous.col(j) + d;
      if (!z.allFinite()) throw ControlError("mpc: model prediction diverged at step " + std::to_string(j), static_cast<long>(j));
      reference.col(j) = mdl.C * z;
    }

    const QpProblem qp = condense(mdl, z0, offsets, problem_.Q, problem_.R, xs_n_, us_n_, N, lower_n_, upper_n_,
                                  penalty_n_, &reference);
    const Vector warm = previous.reshaped();
    const QpSolution sol = solve(qp, &warm, problem_.qp);

    IterationRecord rec;
    rec.inputs = sol.u.reshaped(m, N);
    rec.lifted = affine_states(mdl, z0, offsets, sol.u);
    rec.objective = sol.objective;
    rec.step_norm = (sol.u - warm).norm();
    rec.qp_iterations = sol.iterations;
    rec.qp_status = sol.status;
    return rec;
  }

  struct StepResult {
    Vector input;  // raw, within bounds
    IterationTrace trace;
  };

  /// Runs up to l_max iterations, stores the final sequence and returns its
  /// first move in raw units.
  StepResult control_step(ControllerState& state, const Vector& x, const Matrix& disturbance_forecast_raw) const {
    const KoopmanModel& mdl = model();
    require_size(x.size(), mdl.state_dim(), "mpc state");
    if (!x.allFinite()) throw ControlError("mpc: state is not finite", state.k);
    const Vector z0 = lift(mdl, x);
    const Matrix p_n = mdl.normalizer.disturbance.apply_cols(disturbance_forecast_raw);

    StepResult out;
    Matrix u = warm_start(state);
    for (int l = 1; l <= problem_.max_iterations; ++l) {
      IterationRecord rec = iterate_once(z0, p_n, u);
      u = rec.inputs;
      const bool done = std::isfinite(problem_.stop_tolerance) && rec.step_norm < problem_.stop_tolerance;
      out.trace.push_back(std::move(rec));
      if (done) break;
    }
    state.sequence = u;
    state.has_history = true;
    ++state.k;
    out.input = clip(mdl.normalizer.input.invert(Vector(u.col(0))), problem_.input_lower, problem_.input_upper);
    return out;
  }

 private:
  MpcProblem problem_;
  Vector xs_n_, us_n_, lower_n_, upper_n_;
  std::optional<StatePenalty> penalty_n_;
};

// ---------------------------------------------------------------------------
// Closed loop

/// Normalized RMSE to the set-point: sqrt(mean_i ((x_i - x_s,i) / std_i)^2).
inline double normalized_rmse(const Vector& x, const Vector& x_s, const Vector& std) {
  return std::sqrt(((x - x_s).cwiseQuotient(std)).squaredNorm() / static_cast<double>(x.size()));
}

struct ClosedLoopLog {
  double dt = 0.0;
  std::vector<Vector> states;        // x_0..x_{steps-1}, state when u_k was chosen
  std::vector<Vector> inputs;        // applied u_k
  std::vector<Vector> disturbances;  // p_k
  std::vector<double> rmse;          // normalized RMSE of x_k
  std::vector<int> qp_iterations;    // summed over MPC iterations at step k
  std::vector<int> mpc_iterations;
  std::vector<IterationTrace> traces;
  Vector final_state;
};

struct ClosedLoopOptions {
  std::optional<ProcessNoiseConfig> plant_noise;  // noise-free by default
  bool keep_traces = false;
};

/// Alternates control_step and one plant sampling period for `steps` steps.
/// `disturbances` must cover steps + N entries (forecast window).
inline ClosedLoopLog run_closed_loop(const MpcController& controller, const PlantModel& plant, const Vector& x0,
                                     const std::vector<Vector>& disturbances, long steps, double dt,
                                     const ClosedLoopOptions& options = {}) {
  const MpcProblem& pb = controller.problem();
  const KoopmanModel& mdl = controller.model();
  if (plant.state_dim != mdl.state_dim() || plant.input_dim != mdl.input_dim() ||
      plant.disturbance_dim != mdl.disturbance_dim()) {
    throw ShapeError("closed loop: plant and model dimensions differ");
  }
  if (steps < 0) throw ConfigError("closed loop: steps must be >= 0");
  if (static_cast<long>(disturbances.size()) < steps + pb.horizon) {
    throw ConfigError("closed loop: disturbance trajectory must cover steps + horizon");
  }
  std::optional<ProcessNoise> noise;
  if (options.plant_noise) noise.emplace(*options.plant_noise);

  ClosedLoopLog log;
  log.dt = dt;
  ControllerState state;
  Vector x = x0;
  Matrix forecast(mdl.disturbance_dim(), pb.horizon);
  for (long k = 0; k < steps; ++k) {
    for (Index j = 0; j < pb.horizon; ++j) forecast.col(j) = disturbances[static_cast<std::size_t>(k + j)];
    MpcController::StepResult step;
    try {
      step = controller.control_step(state, x, forecast);
    } catch (const NumericalError& e) {
      throw ControlError(std::string(e.what()) + " (closed-loop step " + std::to_string(k) + ")", k);
    }
    int qp_iters = 0;
    for (const auto& r : step.trace) qp_iters += r.qp_iterations;

    log.states.push_back(x);
    log.inputs.push_back(step.input);
    log.disturbances.push_back(disturbances[static_cast<std::size_t>(k)]);
    log.rmse.push_back(normalized_rmse(x, pb.x_s, mdl.normalizer.state.std));
    log.qp_iterations.push_back(qp_iters);
    log.mpc_iterations.push_back(static_cast<int>(step.trace.size()));
    if (options.keep_traces) log.traces.push_back(std::move(step.trace));

    try {
      x = integrate_step(plant, x, step.input, disturbances[static_cast<std::size_t>(k)], dt);
    } catch (const IntegrationDiverged& e) {
      throw IntegrationDiverged(std::string(e.what()) + " (closed-loop step " + std::to_string(k) + ")", k);
    }
    if (noise) x += noise->draw();
  }
  log.final_state = x;
  return log;
}

/// CSV: `k,t,x1..xn,u1..um,p1..pp,rmse_k,qp_iters,mpc_iters`.
inline void write_closed_loop_csv(const ClosedLoopLog& log, std::ostream& out) {
  const Index n = log.states.empty() ? 0 : log.states.front().size();
  const Index m = log.inputs.empty() ? 0 : log.inputs.front().size();
  const Index p = log.disturbances.empty() ? 0 : log.disturbances.front().size();
  out << "k,t";
  for (Index i = 1; i <= n; ++i) out << ",x" << i;
  for (Index i = 1; i <= m; ++i) out << ",u" << i;
  for (Index i = 1; i <= p; ++i) out << ",p" << i;
  out << ",rmse_k,qp_iters,mpc_iters\n";
  out << std::setprecision(17);
  for (std::size_t k = 0; k < log.states.size(); ++k) {
    out << k << ',' << log.dt * static_cast<double>(k);
    for (Index i = 0; i < n; ++i) out << ',' << log.states[k][i];
    for (Index i = 0; i < m; ++i) out << ',' << log.inputs[k][i];
    for (Index i = 0; i < p; ++i) out << ',' << log.disturbances[k][i];
    out << ',' << log.rmse[k] << ',' << log.qp_iterations[k] << ',' << log.mpc_iterations[k] << '\n';
  }
}

}  // namespace dkoia
