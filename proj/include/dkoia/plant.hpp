#pragma once

#include "dkoia/core.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dkoia {

using StateSequence = std::vector<Vector>;

/// Continuous-time process dx/dt = f(x, u, p).
///
/// Immutable once built; `rhs` must be a pure function so a model can be shared
/// between threads.
struct PlantModel {
  using Rhs = std::function<Vector(const Vector& x, const Vector& u, const Vector& p)>;

  Index state_dim = 0;
  Index input_dim = 0;
  Index disturbance_dim = 0;
  Rhs rhs;
  Vector input_lower;
  Vector input_upper;
  std::string parameter_set_name;
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;

  void validate() const {
    if (state_dim <= 0 || input_dim <= 0 || disturbance_dim < 0) {
      throw ConfigError("plant dimensions must be positive (disturbances may be empty)");
    }
    require_size(input_lower.size(), input_dim, "plant input_lower");
    require_size(input_upper.size(), input_dim, "plant input_upper");
    if ((input_lower.array() > input_upper.array()).any()) {
      throw ConfigError("plant input bounds: lower exceeds upper");
    }
    if (!rhs) throw ConfigError("plant has no right-hand side");
  }
};

inline constexpr int kDefaultSubsteps = 10;

/// One sampling period of the plant by classical RK4 with `substeps` equal
/// internal steps.
inline Vector integrate_step(const PlantModel& model, const Vector& x, const Vector& u,
                             const Vector& p, double dt, int substeps = kDefaultSubsteps) {
  require_size(x.size(), model.state_dim, "integrate_step state");
  require_size(u.size(), model.input_dim, "integrate_step input");
  require_size(p.size(), model.disturbance_dim, "integrate_step disturbance");
  if (!(dt > 0.0) || substeps < 1) throw ConfigError("integrate_step: need dt > 0 and substeps >= 1");

  const double h = dt / substeps;
  Vector s = x;
  for (int i = 0; i < substeps; ++i) {
    const Vector k1 = model.rhs(s, u, p);
    const Vector k2 = model.rhs(s + 0.5 * h * k1, u, p);
    const Vector k3 = model.rhs(s + 0.5 * h * k2, u, p);
    const Vector k4 = model.rhs(s + h * k3, u, p);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  for (Index c = 0; c < s.size(); ++c) {
    if (!std::isfinite(s[c])) {
      throw IntegrationDiverged("integration diverged in state channel " + std::to_string(c),
                                static_cast<long>(c));
    }
  }
  return s;
}

/// Additive process noise, drawn per step and clipped per channel.
struct ProcessNoiseConfig {
  Vector std;       // sigma per state channel
  Vector clip_abs;  // |noise| bound per channel, raw units
  std::uint64_t seed = 0;
};

/// Generator for clipped Gaussian process noise. One per simulation.
class ProcessNoise {
 public:
  explicit ProcessNoise(const ProcessNoiseConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    if (cfg_.clip_abs.size() != cfg_.std.size()) {
      throw ConfigError("process noise: std and clip_abs lengths differ");
    }
    if ((cfg_.clip_abs.array() < 0.0).any() || (cfg_.std.array() < 0.0).any()) {
      throw ConfigError("process noise: std and clip_abs must be non-negative");
    }
  }

  Vector draw() {
    Vector e(cfg_.std.size());
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index i = 0; i < e.size(); ++i) {
      const double v = cfg_.std[i] * gauss(rng_);
      e[i] = std::clamp(v, -cfg_.clip_abs[i], cfg_.clip_abs[i]);
    }
    return e;
  }

 private:
  ProcessNoiseConfig cfg_;
  std::mt19937_64 rng_;
};

/// Simulate L sampling periods. Returns L + 1 states, starting with x0.
inline StateSequence simulate(const PlantModel& model, const Vector& x0,
                              const std::vector<Vector>& inputs,
                              const std::vector<Vector>& disturbances, double dt,
                              const std::optional<ProcessNoiseConfig>& noise = std::nullopt,
                              int substeps = kDefaultSubsteps) {
  if (inputs.size() != disturbances.size()) {
    throw ShapeError("simulate: inputs and disturbances differ in length");
  }
  require_size(x0.size(), model.state_dim, "simulate x0");
  std::optional<ProcessNoise> gen;
  if (noise) {
    require_size(noise->std.size(), model.state_dim, "process noise std");
    gen.emplace(*noise);
  }

  StateSequence xs;
  xs.reserve(inputs.size() + 1);
  xs.push_back(x0);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Vector next;
    try {
      next = integrate_step(model, xs.back(), inputs[k], disturbances[k], dt, substeps);
    } catch (const IntegrationDiverged& e) {
      throw IntegrationDiverged(std::string(e.what()) + " at step " + std::to_string(k),
                                static_cast<long>(k));
    }
    if (gen) next += gen->draw();
    xs.push_back(std::move(next));
  }
  return xs;
}

// ---------------------------------------------------------------------------
// Excitation signals

enum class ExcitationKind { StepHold, SineWave };

struct ExcitationConfig {
  ExcitationKind kind = ExcitationKind::StepHold;
  int hold_steps = 20;
  Vector noise_std;  // per input channel
  // SineWave only.
  Vector amplitude;
  Vector bias;
  double omega_min = 0.0;
  double omega_max = 0.0;
  std::optional<Vector> phase;  // drawn uniformly in [0, 2 pi) when absent
  std::uint64_t seed = 0;
};

/// Input sequence u_k = ubar_k + eps_k clipped to the plant bounds.
///
/// StepHold draws ubar uniformly within the bounds and holds it for
/// `hold_steps`. SineWave samples A sin(w k + phi) + B at the start of each
/// hold block; w and phi are drawn once per channel. eps_k ~ N(0, noise_std)
/// is fresh every step.
inline std::vector<Vector> generate_excitation(const ExcitationConfig& cfg,
                                               const PlantModel& model, Index length) {
  if (length < 1) throw ConfigError("generate_excitation: length must be >= 1");
  if (cfg.hold_steps < 1) throw ConfigError("generate_excitation: hold_steps must be >= 1");
  const Index m = model.input_dim;
  require_size(cfg.noise_std.size(), m, "excitation noise_std");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Vector omega(m);
  Vector phase(m);
  if (cfg.kind == ExcitationKind::SineWave) {
    require_size(cfg.amplitude.size(), m, "excitation amplitude");
    require_size(cfg.bias.size(), m, "excitation bias");
    if (!(cfg.omega_min > 0.0) || cfg.omega_max < cfg.omega_min) {
      throw ConfigError("excitation: need 0 < omega_min <= omega_max");
    }
    for (Index i = 0; i < m; ++i) {
      const double a = std::abs(cfg.amplitude[i]);
      if (cfg.bias[i] - a < model.input_lower[i] || cfg.bias[i] + a > model.input_upper[i]) {
        throw ConfigError("excitation: bias +/- amplitude leaves input bounds on channel " +
                          std::to_string(i));
      }
    }
    for (Index i = 0; i < m; ++i) omega[i] = cfg.omega_min + (cfg.omega_max - cfg.omega_min) * unit(rng);
    if (cfg.phase) {
      require_size(cfg.phase->size(), m, "excitation phase");
      phase = *cfg.phase;
    } else {
      for (Index i = 0; i < m; ++i) phase[i] = 2.0 * std::numbers::pi * unit(rng);
    }
  }

  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(length));
  Vector level(m);
  for (Index k = 0; k < length; ++k) {
    if (k % cfg.hold_steps == 0) {
      for (Index i = 0; i < m; ++i) {
        if (cfg.kind == ExcitationKind::StepHold) {
          level[i] = model.input_lower[i] + (model.input_upper[i] - model.input_lower[i]) * unit(rng);
        } else {
          level[i] = cfg.amplitude[i] * std::sin(omega[i] * static_cast<double>(k) + phase[i]) + cfg.bias[i];
        }
      }
    }
    Vector u = level;
    for (Index i = 0; i < m; ++i) u[i] += cfg.noise_std[i] * gauss(rng);
    out.push_back(clip(u, model.input_lower, model.input_upper));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter files: one `name = value` per line, `#` starts a comment.

using ParameterSet = std::map<std::string, double>;

inline ParameterSet parse_parameter_text(std::istream& in, const std::string& origin = "<stream>") {
  ParameterSet params;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `name = value`");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(val, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (key.empty() || used != val.size()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad entry for `" + key + "`");
    }
    if (!params.emplace(key, v).second) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate parameter `" + key + "`");
    }
  }
  return params;
}

inline ParameterSet load_parameter_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open parameter file " + path);
  return parse_parameter_text(in, path);
}

inline double require_param(const ParameterSet& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) throw ConfigError("missing plant parameter `" + key + "`");
  return it->second;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: header `t, x1..xn, u1..um, p1..pp`, one row per sample.

inline void write_trajectory_csv(std::ostream& out, double dt, double t0,
                                 const std::vector<Vector>& states, const std::vector<Vector>& inputs,
                                 const std::vector<Vector>& disturbances) {
  if (states.size() != inputs.size() || inputs.size() != disturbances.size()) {
    throw ShapeError("write_trajectory_csv: column groups differ in length");
  }
  const Index n = states.empty() ? 0 : states.front().size();
  const Index m = inputs.empty() ? 0 : inputs.front().size();
  const Index p = disturbances.empty() ? 0 : disturbances.front().size();
  out << "t";
  for (Index i = 1; i <= n; ++i) out << ",x" << i;
  for (Index i = 1; i <= m; ++i) out << ",u" << i;
  for (Index i = 1; i <= p; ++i) out << ",p" << i;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t k = 0; k < states.size(); ++k) {
    out << t0 + dt * static_cast<double>(k);
    for (Index i = 0; i < n; ++i) out << ',' << states[k][i];
    for (Index i = 0; i < m; ++i) out << ',' << inputs[k][i];
    for (Index i = 0; i < p; ++i) out << ',' << disturbances[k][i];
    out << '\n';
  }
}

struct TrajectoryTable {
  std::vector<double> t;
  std::vector<Vector> states;
  std::vector<Vector> inputs;
  std::vector<Vector> disturbances;
};

inline TrajectoryTable read_trajectory_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(origin + ": empty trajectory file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(' '));
      header.push_back(cell);
    }
  }
  if (header.empty() || header.front() != "t") throw IoError(origin + ": header must start with t");
  Index n = 0, m = 0, p = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const char c = header[i].empty() ? '?' : header[i][0];
    if (c == 'x' && m == 0 && p == 0) ++n;
    else if (c == 'u' && p == 0) ++m;
    else if (c == 'p') ++p;
    else throw IoError(origin + ": unexpected column `" + header[i] + "`");
  }

  TrajectoryTable table;
  const std::size_t width = header.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(width);
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != width) throw IoError(origin + ": ragged row " + std::to_string(table.t.size() + 2));
    table.t.push_back(row[0]);
    table.states.push_back(Eigen::Map<Vector>(row.data() + 1, n));
    table.inputs.push_back(Eigen::Map<Vector>(row.data() + 1 + n, m));
    table.disturbances.push_back(Eigen::Map<Vector>(row.data() + 1 + n + m, p));
  }
  return table;
}

}  // namespace dkoia
