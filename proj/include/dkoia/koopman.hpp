#pragma once

// Deep Koopman models with input augmentation (DKOIA) and the plain deep
// Koopman baseline (DKO):
//
//   z_{j+1} = A z_j + B_u u_j + B_p p_j + B_phi phi(x^_j, u_j, p_j)
//   x^_j    = C z_j,      z_0 = psi(x_0)
//
// All arithmetic happens in normalized units; the public raw-unit entry points
// go through the embedded Normalizer. DKO is the same model with no phi
// network (M = 0).

#include "dkoia/core.hpp"
#include "dkoia/dataset.hpp"
#include "dkoia/neuralnet.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dkoia {

enum class Variant { DKOIA, DKO };

inline const char* variant_name(Variant v) { return v == Variant::DKOIA ? "dkoia" : "dko"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "dkoia" || s == "DKOIA") return Variant::DKOIA;
  if (s == "dko" || s == "DKO") return Variant::DKO;
  throw ConfigError("unknown model variant `" + s + "` (expected dkoia or dko)");
}

struct KoopmanModel {
  Variant variant = Variant::DKOIA;
  Matrix A;     // N x N
  Matrix Bu;    // N x m
  Matrix Bp;    // N x p
  Matrix Bphi;  // N x M
  Matrix C;     // n x N
  LiftingNetwork psi;  // n -> N
  LiftingNetwork phi;  // n + m + p -> M, empty for DKO
  Normalizer normalizer;

  Index state_dim() const { return C.rows(); }
  Index input_dim() const { return Bu.cols(); }
  Index disturbance_dim() const { return Bp.cols(); }
  Index lift_dim() const { return A.rows(); }
  Index phi_dim() const { return Bphi.cols(); }
  bool has_phi() const { return !phi.empty(); }

  /// Shape audit for every product used by predict_one.
  void validate() const {
    const Index n = state_dim(), m = input_dim(), p = disturbance_dim(), N = lift_dim(), M = phi_dim();
    require_shape(A, N, N, "A");
    require_shape(Bu, N, m, "B_u");
    require_shape(Bp, N, p, "B_p");
    require_shape(Bphi, N, M, "B_phi");
    require_shape(C, n, N, "C");
    psi.validate();
    if (psi.input_dim() != n || psi.output_dim() != N) throw ShapeError("psi must map n -> N");
    if (M == 0) {
      if (has_phi()) throw ShapeError("phi present but B_phi has no columns");
    } else {
      if (variant == Variant::DKO) throw ShapeError("DKO model cannot carry a phi block");
      phi.validate();
      if (phi.input_dim() != n + m + p || phi.output_dim() != M) throw ShapeError("phi must map n+m+p -> M");
    }
    require_size(normalizer.state.mean.size(), n, "normalizer state");
    require_size(normalizer.input.mean.size(), m, "normalizer input");
    require_size(normalizer.disturbance.mean.size(), p, "normalizer disturbance");
    for (const Matrix* mat : {&A, &Bu, &Bp, &Bphi, &C}) {
      if (!mat->allFinite()) throw ShapeError("Koopman matrices must be finite");
    }
  }

  /// Trainable blocks: A, B_u, B_p, B_phi, C, then psi and phi layers.
  std::vector<ParamRef> parameters(bool include_psi = true) {
    std::vector<ParamRef> out{{"A", A.data(), A.rows(), A.cols(), true},
                              {"B_u", Bu.data(), Bu.rows(), Bu.cols(), true},
                              {"B_p", Bp.data(), Bp.rows(), Bp.cols(), true},
                              {"B_phi", Bphi.data(), Bphi.rows(), Bphi.cols(), true},
                              {"C", C.data(), C.rows(), C.cols(), false}};
    if (include_psi) {
      for (auto& r : psi.parameters("psi")) out.push_back(std::move(r));
    }
    for (auto& r : phi.parameters("phi")) out.push_back(std::move(r));
    return out;
  }
};

/// Network sizes and training hyperparameters.
struct TrainingConfig {
  Index horizon = 20;
  int epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double l2 = 0.1;
  std::uint64_t seed = 0;

  Index lift_dim = 13;
  Index phi_dim = 6;
  std::vector<Index> psi_hidden{32, 64, 32};
  std::vector<Index> phi_hidden{16, 32, 16};
  double init_scale = 0.1;  // B and C entries ~ U(-s, s)

  bool normalize = true;  // false: identity normalizer (raw units)
  std::optional<LiftingNetwork> fixed_psi;  // use this psi and keep it frozen

  void validate() const {
    if (horizon < 1) throw ConfigError("training.horizon must be >= 1");
    if (epochs < 0) throw ConfigError("training.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
    if (l2 < 0.0) throw ConfigError("training.l2 must be non-negative");
    if (lift_dim < 1) throw ConfigError("training.lift_dim must be >= 1");
    if (phi_dim < 0) throw ConfigError("training.phi_dim must be >= 0");
  }
};

/// Fresh model: A = I, B and C small uniform, networks He-initialized.
inline KoopmanModel init_model(Variant variant, Index n, Index m, Index p, const TrainingConfig& cfg,
                               std::mt19937_64& rng) {
  cfg.validate();
  const Index N = cfg.fixed_psi ? cfg.fixed_psi->output_dim() : cfg.lift_dim;
  const Index M = variant == Variant::DKOIA ? cfg.phi_dim : 0;
  KoopmanModel model;
  model.variant = variant;
  if (cfg.fixed_psi) {
    model.psi = *cfg.fixed_psi;
  } else {
    std::vector<Index> sizes{n};
    sizes.insert(sizes.end(), cfg.psi_hidden.begin(), cfg.psi_hidden.end());
    sizes.push_back(N);
    model.psi = LiftingNetwork::he_uniform(sizes, rng);
  }
  if (M > 0) {
    std::vector<Index> sizes{n + m + p};
    sizes.insert(sizes.end(), cfg.phi_hidden.begin(), cfg.phi_hidden.end());
    sizes.push_back(M);
    model.phi = LiftingNetwork::he_uniform(sizes, rng);
  }
  std::uniform_real_distribution<double> small(-cfg.init_scale, cfg.init_scale);
  auto fill = [&](Index r, Index c) {
    Matrix out(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) out(i, j) = small(rng);
    return out;
  };
  model.A = Matrix::Identity(N, N);
  model.Bu = fill(N, m);
  model.Bp = fill(N, p);
  model.Bphi = fill(N, M);
  model.C = fill(n, N);
  model.normalizer = Normalizer::identity(n, m, p);
  return model;
}

// ---------------------------------------------------------------------------
// Normalized-unit primitives

/// [x; u; p] stacked column-wise for phi.
inline Matrix phi_input(const Matrix& xhat, const Matrix& u, const Matrix& p) {
  Matrix in(xhat.rows() + u.rows() + p.rows(), xhat.cols());
  in << xhat, u, p;
  return in;
}

/// One lifted step in normalized units (batched over columns).
inline Matrix step_normalized(const KoopmanModel& model, const Matrix& z, const Matrix& xhat, const Matrix& u,
                              const Matrix& p, ForwardCache* phi_cache = nullptr) {
  Matrix next = model.A * z;
  next.noalias() += model.Bu * u;
  if (p.rows() > 0) next.noalias() += model.Bp * p;
  if (model.has_phi()) next.noalias() += model.Bphi * forward(model.phi, phi_input(xhat, u, p), phi_cache);
  return next;
}

// ---------------------------------------------------------------------------
// Raw-unit API

inline Vector lift(const KoopmanModel& model, const Vector& x) {
  require_size(x.size(), model.state_dim(), "lift state");
  return forward(model.psi, model.normalizer.state.apply(x));
}

/// Decoded state C z in raw units.
inline Vector decode(const KoopmanModel& model, const Vector& z) {
  require_size(z.size(), model.lift_dim(), "decode lifted state");
  return model.normalizer.state.invert(model.C * z);
}

/// [u; p; phi(x, u, p)] in normalized units.
inline Vector lift_input(const KoopmanModel& model, const Vector& x, const Vector& u, const Vector& p) {
  require_size(x.size(), model.state_dim(), "lift_input state");
  require_size(u.size(), model.input_dim(), "lift_input input");
  require_size(p.size(), model.disturbance_dim(), "lift_input disturbance");
  const Vector un = model.normalizer.input.apply(u);
  const Vector pn = model.normalizer.disturbance.apply(p);
  Vector out(un.size() + pn.size() + model.phi_dim());
  out.head(un.size()) = un;
  out.segment(un.size(), pn.size()) = pn;
  if (model.has_phi()) {
    const Vector xn = model.normalizer.state.apply(x);
    out.tail(model.phi_dim()) = forward(model.phi, Vector(phi_input(xn, un, pn).col(0)));
  }
  return out;
}

/// z+ = A z + B_u u + B_p p + B_phi phi(x^, u, p); z in normalized units,
/// x^, u, p raw.
inline Vector predict_one(const KoopmanModel& model, const Vector& z, const Vector& xhat, const Vector& u,
                          const Vector& p) {
  require_size(z.size(), model.lift_dim(), "predict_one lifted state");
  require_size(xhat.size(), model.state_dim(), "predict_one decoded state");
  require_size(u.size(), model.input_dim(), "predict_one input");
  require_size(p.size(), model.disturbance_dim(), "predict_one disturbance");
  const auto& nz = model.normalizer;
  return step_normalized(model, z, nz.state.apply(xhat), nz.input.apply(u), nz.disturbance.apply(p)).col(0);
}

/// Open-loop prediction x^_{k..k+H} (raw) from x_k. The first entry is the
/// decoded lift C psi(x_k), not x_k itself.
inline std::vector<Vector> rollout(const KoopmanModel& model, const Vector& x0, const std::vector<Vector>& inputs,
                                   const std::vector<Vector>& disturbances) {
  if (inputs.size() != disturbances.size()) throw ShapeError("rollout: inputs and disturbances differ in length");
  const auto& nz = model.normalizer;
  Vector z = lift(model, x0);
  std::vector<Vector> out;
  out.reserve(inputs.size() + 1);
  for (std::size_t j = 0;; ++j) {
    const Vector xn = model.C * z;
    if (!xn.allFinite() || !z.allFinite()) {
      throw RolloutDiverged("rollout diverged at step " + std::to_string(j), static_cast<long>(j));
    }
    out.push_back(nz.state.invert(xn));
    if (j == inputs.size()) break;
    require_size(inputs[j].size(), model.input_dim(), "rollout input");
    require_size(disturbances[j].size(), model.disturbance_dim(), "rollout disturbance");
    z = step_normalized(model, z, xn, nz.input.apply(inputs[j]), nz.disturbance.apply(disturbances[j])).col(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-step loss and its gradient (backpropagation through the rollout)

struct LossResult {
  double total = 0.0;       // prediction + penalty
  double prediction = 0.0;  // batch mean of the summed squared error
  double penalty = 0.0;
  ParameterGradient gradient;  // layout of KoopmanModel::parameters(train_psi)
};

/// Stacked normalized data for a batch of windows: x[j], u[j], p[j] hold
/// column b = window b at offset j.
struct WindowBatch {
  std::vector<Matrix> x;
  std::vector<Matrix> u;
  std::vector<Matrix> p;

  static WindowBatch gather(const NormalizedData& data, std::span<const RolloutWindow> windows) {
    if (windows.empty()) throw UsageError("empty window batch");
    const Index H = windows.front().horizon;
    const auto B = static_cast<Index>(windows.size());
    WindowBatch out;
    out.x.assign(static_cast<std::size_t>(H + 1), Matrix(data.states.rows(), B));
    out.u.assign(static_cast<std::size_t>(H), Matrix(data.inputs.rows(), B));
    out.p.assign(static_cast<std::size_t>(H), Matrix(data.disturbances.rows(), B));
    for (Index b = 0; b < B; ++b) {
      const RolloutWindow& w = windows[static_cast<std::size_t>(b)];
      if (w.horizon != H) throw UsageError("window batch mixes horizons");
      if (w.last_state() >= data.states.cols()) throw ShapeError("window exceeds the data");
      for (Index j = 0; j <= H; ++j) out.x[static_cast<std::size_t>(j)].col(b) = data.states.col(w.start + j);
      for (Index j = 0; j < H; ++j) {
        out.u[static_cast<std::size_t>(j)].col(b) = data.inputs.col(w.start + j);
        out.p[static_cast<std::size_t>(j)].col(b) = data.disturbances.col(w.start + j);
      }
    }
    return out;
  }

  Index horizon() const { return static_cast<Index>(u.size()); }
  Index size() const { return x.front().cols(); }
};

/// L2 penalty l2 * sum ||W||^2 over parameters flagged `decay`.
inline double l2_penalty(KoopmanModel& model, double l2, bool train_psi) {
  if (l2 == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& r : model.parameters(train_psi))
    if (r.decay) s += r.map().squaredNorm();
  return l2 * s;
}

/// Per-window summed squared prediction error, without gradients.
inline Vector window_errors(const KoopmanModel& model, const WindowBatch& batch) {
  const Index H = batch.horizon();
  Matrix z = forward(model.psi, batch.x[0]);
  Vector err = Vector::Zero(batch.size());
  for (Index j = 0;; ++j) {
    const Matrix xhat = model.C * z;
    err += (xhat - batch.x[static_cast<std::size_t>(j)]).colwise().squaredNorm().transpose();
    if (j == H) break;
    z = step_normalized(model, z, xhat, batch.u[static_cast<std::size_t>(j)], batch.p[static_cast<std::size_t>(j)]);
  }
  return err;
}

/// Batch-mean, horizon-summed squared error plus L2 penalty, with the exact
/// gradient through the whole recursion (including phi's dependence on x^).
inline LossResult batch_loss(KoopmanModel& model, const WindowBatch& batch, double l2, bool with_gradient = true,
                             bool train_psi = true) {
  const Index H = batch.horizon();
  const auto B = static_cast<double>(batch.size());
  const auto steps = static_cast<std::size_t>(H);

  ForwardCache psi_cache;
  std::vector<ForwardCache> phi_cache(model.has_phi() ? steps : 0);
  std::vector<Matrix> z(steps + 1);
  std::vector<Matrix> residual(steps + 1);

  z[0] = forward(model.psi, batch.x[0], with_gradient ? &psi_cache : nullptr);
  LossResult out;
  for (std::size_t j = 0;; ++j) {
    const Matrix xhat = model.C * z[j];
    residual[j] = xhat - batch.x[j];
    out.prediction += residual[j].squaredNorm();
    if (j == steps) break;
    z[j + 1] = step_normalized(model, z[j], xhat, batch.u[j], batch.p[j],
                               (with_gradient && model.has_phi()) ? &phi_cache[j] : nullptr);
    if (!z[j + 1].allFinite()) {
      throw TrainingError("loss: lifted state diverged at step " + std::to_string(j + 1), static_cast<long>(j + 1));
    }
  }
  out.prediction /= B;
  out.penalty = l2_penalty(model, l2, train_psi);
  out.total = out.prediction + out.penalty;
  if (!std::isfinite(out.total)) throw TrainingError("loss is not finite");
  if (!with_gradient) return out;

  const auto params = model.parameters(train_psi);
  out.gradient = zero_gradient(params);
  auto& g = out.gradient;
  Matrix& gA = g[0];
  Matrix& gBu = g[1];
  Matrix& gBp = g[2];
  Matrix& gBphi = g[3];
  Matrix& gC = g[4];
  const std::size_t psi_offset = 5;
  const std::size_t phi_offset = psi_offset + (train_psi ? 2 * model.psi.layers() : 0);
  const Index n = model.state_dim();

  // dL/dx^_j = 2 r_j / B; dz carries dL/dz_{j+1} backwards.
  Matrix dxhat = (2.0 / B) * residual[steps];
  gC.noalias() += dxhat * z[steps].transpose();
  Matrix dz = model.C.transpose() * dxhat;
  for (std::size_t j = steps; j-- > 0;) {
    gA.noalias() += dz * z[j].transpose();
    gBu.noalias() += dz * batch.u[j].transpose();
    if (batch.p[j].rows() > 0) gBp.noalias() += dz * batch.p[j].transpose();
    dxhat = (2.0 / B) * residual[j];
    if (model.has_phi()) {
      const Matrix& phi_out = phi_cache[j].preactivate.back();
      gBphi.noalias() += dz * phi_out.transpose();
      const Matrix dphi = model.Bphi.transpose() * dz;
      const Matrix din = backward_accumulate(model.phi, dphi, phi_cache[j], g, phi_offset);
      dxhat += din.topRows(n);
    }
    gC.noalias() += dxhat * z[j].transpose();
    Matrix dz_prev = model.A.transpose() * dz;
    dz_prev.noalias() += model.C.transpose() * dxhat;
    dz = std::move(dz_prev);
  }
  if (train_psi) backward_accumulate(model.psi, dz, psi_cache, g, psi_offset);

  if (l2 != 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].decay) g[i] += (2.0 * l2) * params[i].map();
  }
  return out;
}

/// Loss of a single window against normalized data.
inline LossResult loss(KoopmanModel& model, const NormalizedData& data, const RolloutWindow& window, double l2,
                       bool train_psi = true) {
  return batch_loss(model, WindowBatch::gather(data, std::span<const RolloutWindow>(&window, 1)), l2, true, train_psi);
}

// ---------------------------------------------------------------------------
// Evaluation

/// Mean over windows of (summed squared normalized error) / (H + 1).
inline double evaluate(const KoopmanModel& model, const TrajectoryDataset& dataset, SplitId split, Index horizon,
                       std::size_t chunk = 512) {
  const auto windows = make_windows(dataset, split, horizon);
  const NormalizedData data = normalize(dataset, model.normalizer);
  double sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); i += chunk) {
    const auto len = std::min(chunk, windows.size() - i);
    const auto batch = WindowBatch::gather(data, std::span<const RolloutWindow>(windows.data() + i, len));
    sum += window_errors(model, batch).sum();
  }
  return sum / static_cast<double>(horizon + 1) / static_cast<double>(windows.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;       // mean batch objective including the penalty
  double validation_loss = 0.0;  // mean per-window summed squared error
};

struct TrainResult {
  KoopmanModel model;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no epoch ran
};

inline double mean_window_loss(const KoopmanModel& model, const NormalizedData& data,
                               const std::vector<RolloutWindow>& windows, std::size_t chunk = 512) {
  double sum = 0.0;
  for (std::size_t i = 0; i < windows.size(); i += chunk) {
    const auto len = std::min(chunk, windows.size() - i);
    sum += window_errors(model, WindowBatch::gather(data, std::span<const RolloutWindow>(windows.data() + i, len))).sum();
  }
  return sum / static_cast<double>(windows.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam over A, B, C, psi and phi jointly on stride-1 windows of the training
/// split. Keeps the parameters with the lowest validation loss.
inline TrainResult train(Variant variant, const TrajectoryDataset& dataset, const TrainingConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  dataset.validate();
  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  result.model = init_model(variant, dataset.state_dim(), dataset.input_dim(), dataset.disturbance_dim(), cfg, rng);
  result.model.normalizer = cfg.normalize ? fit_normalizer(dataset)
                                          : Normalizer::identity(dataset.state_dim(), dataset.input_dim(),
                                                                 dataset.disturbance_dim());
  if (cfg.epochs == 0) return result;

  const bool train_psi = !cfg.fixed_psi.has_value();
  const NormalizedData data = normalize(dataset, result.model.normalizer);
  const auto val_windows = make_windows(dataset, SplitId::Validation, cfg.horizon);
  BatchIterator batches(make_windows(dataset, SplitId::Train, cfg.horizon), cfg.batch_size, rng());

  KoopmanModel model = result.model;
  AdamState adam;
  adam.config.learning_rate = cfg.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_sum = 0.0;
    const auto epoch_batches = batches.next_epoch();
    for (const auto& b : epoch_batches) {
      LossResult lr;
      try {
        lr = batch_loss(model, WindowBatch::gather(data, b), cfg.l2, true, train_psi);
        adam_step(adam, model.parameters(train_psi), lr.gradient);
      } catch (const NumericalError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")", epoch);
      }
      train_sum += lr.total;
    }
    EpochRecord rec{epoch, train_sum / static_cast<double>(epoch_batches.size()),
                    mean_window_loss(model, data, val_windows)};
    if (!std::isfinite(rec.validation_loss)) {
      throw TrainingError("validation loss is not finite (epoch " + std::to_string(epoch) + ")", epoch);
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model file (structured text, format tag "dkoia-model/1")

namespace detail {
inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const char* what) {
  const auto r = j.at("rows").get<Index>();
  const auto c = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (r < 0 || c < 0 || static_cast<Index>(data.size()) != r) {
    throw ShapeError(std::string("model file: bad row count for ") + what);
  }
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    const auto row = data[static_cast<std::size_t>(i)].get<std::vector<double>>();
    if (static_cast<Index>(row.size()) != c) throw ShapeError(std::string("model file: ragged matrix ") + what);
    for (Index k = 0; k < c; ++k) m(i, k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

inline nlohmann::json network_to_json(const LiftingNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layers(); ++i) {
    layers.push_back({{"W", matrix_to_json(net.weights[i])}, {"b", matrix_to_json(Matrix(net.biases[i]))}});
  }
  return layers;
}

inline LiftingNetwork network_from_json(const nlohmann::json& j) {
  LiftingNetwork net;
  for (const auto& layer : j) {
    net.weights.push_back(matrix_from_json(layer.at("W"), "W"));
    const Matrix b = matrix_from_json(layer.at("b"), "b");
    if (b.cols() != 1) throw ShapeError("model file: bias must be a column");
    net.biases.push_back(b.col(0));
  }
  return net;
}
}  // namespace detail

inline constexpr const char* kModelFormat = "dkoia-model/1";

inline nlohmann::json model_to_json(const KoopmanModel& m) {
  return {{"format", kModelFormat},
          {"variant", variant_name(m.variant)},
          {"dims",
           {{"n", m.state_dim()}, {"m", m.input_dim()}, {"p", m.disturbance_dim()}, {"N", m.lift_dim()}, {"M", m.phi_dim()}}},
          {"A", detail::matrix_to_json(m.A)},
          {"B_u", detail::matrix_to_json(m.Bu)},
          {"B_p", detail::matrix_to_json(m.Bp)},
          {"B_phi", detail::matrix_to_json(m.Bphi)},
          {"C", detail::matrix_to_json(m.C)},
          {"psi", detail::network_to_json(m.psi)},
          {"phi", detail::network_to_json(m.phi)},
          {"normalizer", normalizer_to_json(m.normalizer)}};
}

inline KoopmanModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kModelFormat) throw IoError("model file: missing or unknown format tag");
  KoopmanModel m;
  try {
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.A = detail::matrix_from_json(j.at("A"), "A");
    m.Bu = detail::matrix_from_json(j.at("B_u"), "B_u");
    m.Bp = detail::matrix_from_json(j.at("B_p"), "B_p");
    m.Bphi = detail::matrix_from_json(j.at("B_phi"), "B_phi");
    m.C = detail::matrix_from_json(j.at("C"), "C");
    m.psi = detail::network_from_json(j.at("psi"));
    m.phi = detail::network_from_json(j.at("phi"));
    m.normalizer = normalizer_from_json(j.at("normalizer"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model file: ") + e.what());
  }
  const auto& d = j.at("dims");
  if (d.at("n").get<Index>() != m.state_dim() || d.at("m").get<Index>() != m.input_dim() ||
      d.at("p").get<Index>() != m.disturbance_dim() || d.at("N").get<Index>() != m.lift_dim() ||
      d.at("M").get<Index>() != m.phi_dim()) {
    throw ShapeError("model file: declared dims disagree with the stored matrices");
  }
  m.validate();
  return m;
}

inline void save_model(const KoopmanModel& m, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write model file " + file.string());
  out << model_to_json(m).dump(1) << '\n';
}

inline KoopmanModel load_model(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open model file " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model file " + file.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace dkoia
