#pragma once

// Experiment pipeline behind the `dkoia` CLI: data generation, training,
// evaluation, closed-loop control and the paired DKOIA/DKO comparison.
// Every artifact is written next to a `<file>.meta.json` that records the
// resolved configuration and git-style hashes of the input files.

#include "dkoia/dataset.hpp"
#include "dkoia/koopman.hpp"
#include "dkoia/mpc.hpp"
#include "dkoia/plant.hpp"
#include "dkoia/reactor_separator.hpp"

#include <openssl/evp.h>

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dkoia::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
  Index samples = 3000;
  std::optional<std::array<Index, 3>> split_sizes;  // default: 9000/1000/2000 proportions
  double dt = reactor_separator::kSamplingPeriod;
  Vector initial_state;
  ExcitationConfig excitation;
  Vector noise_std;
  Vector noise_clip;
  double noise_scale = 1.0;
};

struct VariantWeights {
  Vector q_diag;
  Vector r_diag;
};

struct InitialStates {
  std::string mode = "random_hold";  // or "fixed"
  Vector fixed;                      // used by "fixed"
  double hold_hours = 0.5;           // random_hold: hold a uniform random input this long from x_s
};

struct ControlConfig {
  Index horizon = 20;
  int l_max = 2;
  long steps = 300;
  Vector x_s;
  Vector u_s;
  double static_fraction = 1.0 / 6.0;
  VariantWeights dkoia;
  VariantWeights dko;
  double stop_tolerance = std::numeric_limits<double>::infinity();
  bool plant_noise = false;
  InitialStates initial;
  QpSettings qp;
  std::optional<StatePenalty> state_penalty;

  const VariantWeights& weights(Variant v) const { return v == Variant::DKOIA ? dkoia : dko; }
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string plant = "reactor_separator";
  fs::path parameter_file;
  DataConfig data;
  TrainingConfig training_dkoia;
  TrainingConfig training_dko;
  ControlConfig control;
  std::vector<std::uint64_t> seeds{1};
  fs::path output_dir = "out";
  json resolved;  // the configuration as loaded, with defaults filled in

  const TrainingConfig& training(Variant v) const { return v == Variant::DKOIA ? training_dkoia : training_dko; }
};

namespace detail {

inline Vector vec_from(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]: expected a number");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json vec_to(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& path) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

inline Vector vec_or(const json& obj, const char* key, const Vector& fallback, const std::string& path) {
  return obj.contains(key) ? vec_from(obj.at(key), path + "." + key) : fallback;
}

inline TrainingConfig parse_training(const json& j, TrainingConfig t, const std::string& path) {
  t.horizon = get_or<Index>(j, "horizon", t.horizon, path);
  t.epochs = get_or<int>(j, "epochs", t.epochs, path);
  t.batch_size = get_or<std::size_t>(j, "batch_size", t.batch_size, path);
  t.learning_rate = get_or<double>(j, "learning_rate", t.learning_rate, path);
  t.l2 = get_or<double>(j, "l2", t.l2, path);
  t.lift_dim = get_or<Index>(j, "lift_dim", t.lift_dim, path);
  t.phi_dim = get_or<Index>(j, "phi_dim", t.phi_dim, path);
  t.psi_hidden = get_or<std::vector<Index>>(j, "psi_hidden", t.psi_hidden, path);
  t.phi_hidden = get_or<std::vector<Index>>(j, "phi_hidden", t.phi_hidden, path);
  t.init_scale = get_or<double>(j, "init_scale", t.init_scale, path);
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return t;
}

inline json training_to_json(const TrainingConfig& t) {
  return {{"horizon", t.horizon},       {"epochs", t.epochs},         {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate}, {"l2", t.l2},          {"lift_dim", t.lift_dim},
          {"phi_dim", t.phi_dim},       {"psi_hidden", t.psi_hidden}, {"phi_hidden", t.phi_hidden},
          {"init_scale", t.init_scale}};
}

inline void need_size(Index got, Index want, const std::string& path) {
  if (got != want) {
    throw ConfigError(path + ": expected length " + std::to_string(want) + ", got " + std::to_string(got));
  }
}

inline void require_positive(const Vector& v, const std::string& path) {
  if ((v.array() <= 0.0).any()) throw ConfigError(path + ": entries must be positive");
}

}  // namespace detail

inline PlantModel make_plant(const ExperimentConfig& cfg) {
  if (cfg.plant != "reactor_separator") throw ConfigError("plant.name: unknown plant `" + cfg.plant + "`");
  if (!fs::exists(cfg.parameter_file)) {
    throw ConfigError("plant.parameter_file: " + cfg.parameter_file.string() + " does not exist");
  }
  return reactor_separator::load_plant(cfg.parameter_file.string());
}

/// Parses a configuration document; relative paths resolve against `base_dir`.
inline ExperimentConfig parse_config(const json& doc, const fs::path& base_dir = ".") {
  using namespace detail;
  namespace rs = reactor_separator;
  ExperimentConfig cfg;
  cfg.name = get_or<std::string>(doc, "name", cfg.name, "config");

  const json plant = doc.value("plant", json::object());
  cfg.plant = get_or<std::string>(plant, "name", cfg.plant, "plant");
  cfg.parameter_file = base_dir / get_or<std::string>(plant, "parameter_file", "data/reactor_separator.params", "plant");
  const PlantModel model = make_plant(cfg);
  const Index n = model.state_dim, m = model.input_dim;

  const json data = doc.value("data", json::object());
  DataConfig& d = cfg.data;
  d.samples = get_or<Index>(data, "samples", d.samples, "data");
  d.dt = get_or<double>(data, "dt", d.dt, "data");
  if (d.samples < 3) throw ConfigError("data.samples: need at least 3 samples");
  if (!(d.dt > 0.0)) throw ConfigError("data.dt: must be positive");
  if (data.contains("splits")) {
    const auto s = get_or<std::array<Index, 3>>(data, "splits", {}, "data");
    if (s[0] < 1 || s[1] < 1 || s[2] < 1) throw ConfigError("data.splits: every split needs samples");
    if (s[0] + s[1] + s[2] > d.samples) {
      throw ConfigError("data.splits: train + validation + test exceeds data.samples");
    }
    d.split_sizes = s;
  }
  d.initial_state = vec_or(data, "initial_state", rs::data_initial_state(), "data");
  need_size(d.initial_state.size(), n, "data.initial_state");
  const json ex = data.value("excitation", json::object());
  const std::string kind = get_or<std::string>(ex, "kind", "step_hold", "data.excitation");
  if (kind == "step_hold") d.excitation.kind = ExcitationKind::StepHold;
  else if (kind == "sine_wave") d.excitation.kind = ExcitationKind::SineWave;
  else throw ConfigError("data.excitation.kind: expected step_hold or sine_wave");
  d.excitation.hold_steps = get_or<int>(ex, "hold_steps", 20, "data.excitation");
  if (d.excitation.hold_steps < 1) throw ConfigError("data.excitation.hold_steps: must be >= 1");
  d.excitation.noise_std = vec_or(ex, "noise_std", rs::excitation_noise_std(), "data.excitation");
  need_size(d.excitation.noise_std.size(), m, "data.excitation.noise_std");
  if (d.excitation.kind == ExcitationKind::SineWave) {
    d.excitation.amplitude = vec_from(ex.at("amplitude"), "data.excitation.amplitude");
    d.excitation.bias = vec_from(ex.at("bias"), "data.excitation.bias");
    d.excitation.omega_min = get_or<double>(ex, "omega_min", 0.0, "data.excitation");
    d.excitation.omega_max = get_or<double>(ex, "omega_max", 0.0, "data.excitation");
  }
  const json noise = data.value("process_noise", json::object());
  d.noise_std = vec_or(noise, "std", rs::data_noise_std(), "data.process_noise");
  need_size(d.noise_std.size(), n, "data.process_noise.std");
  d.noise_clip = vec_or(noise, "clip_abs", Vector::Constant(n, 5.0), "data.process_noise");
  need_size(d.noise_clip.size(), n, "data.process_noise.clip_abs");
  d.noise_scale = get_or<double>(noise, "scale", d.noise_scale, "data.process_noise");
  if (d.noise_scale < 0.0) throw ConfigError("data.process_noise.scale: must be >= 0");

  const json tr = doc.value("training", json::object());
  const TrainingConfig shared = parse_training(tr, TrainingConfig{}, "training");
  cfg.training_dkoia = parse_training(tr.value("dkoia", json::object()), shared, "training.dkoia");
  cfg.training_dko = parse_training(tr.value("dko", json::object()), shared, "training.dko");

  const json ctl = doc.value("control", json::object());
  ControlConfig& c = cfg.control;
  c.horizon = get_or<Index>(ctl, "horizon", c.horizon, "control");
  c.l_max = get_or<int>(ctl, "l_max", c.l_max, "control");
  c.steps = get_or<long>(ctl, "steps", c.steps, "control");
  if (c.horizon < 1) throw ConfigError("control.horizon: must be >= 1");
  if (c.l_max < 1) throw ConfigError("control.l_max: must be >= 1");
  if (c.steps < 1) throw ConfigError("control.steps: must be >= 1");
  c.x_s = vec_or(ctl, "x_s", rs::nominal_steady_state(), "control");
  c.u_s = vec_or(ctl, "u_s", rs::nominal_input(), "control");
  need_size(c.x_s.size(), n, "control.x_s");
  need_size(c.u_s.size(), m, "control.u_s");
  c.static_fraction = get_or<double>(ctl, "static_fraction", c.static_fraction, "control");
  if (!(c.static_fraction > 0.0 && c.static_fraction <= 1.0)) throw ConfigError("control.static_fraction: must be in (0, 1]");
  if (ctl.contains("stop_tolerance") && !ctl.at("stop_tolerance").is_null()) {
    c.stop_tolerance = get_or<double>(ctl, "stop_tolerance", c.stop_tolerance, "control");
  }
  c.plant_noise = get_or<bool>(ctl, "plant_noise", c.plant_noise, "control");
  c.qp.tolerance = get_or<double>(ctl, "qp_tolerance", c.qp.tolerance, "control");
  c.qp.max_iter = get_or<int>(ctl, "qp_max_iter", c.qp.max_iter, "control");
  const json weights = ctl.value("weights", json::object());
  auto parse_weights = [&](const char* key, const Vector& q, const Vector& r) {
    const json w = weights.value(key, json::object());
    const std::string path = std::string("control.weights.") + key;
    VariantWeights out{vec_or(w, "Q", q, path), vec_or(w, "R", r, path)};
    need_size(out.q_diag.size(), n, path + ".Q");
    need_size(out.r_diag.size(), m, path + ".R");
    require_positive(out.q_diag, path + ".Q");
    require_positive(out.r_diag, path + ".R");
    return out;
  };
  c.dkoia = parse_weights("dkoia", (Vector(9) << 1.5, 0.1, 3.3, 2.4, 0.4, 1.5, 1.5, 0.1, 3.3).finished().head(n),
                          (Vector(3) << 0.002, 0.002, 0.0001).finished().head(m));
  c.dko = parse_weights("dko", (Vector(9) << 1.7, 0.2, 1.3, 1.7, 0.2, 0.5, 1.9, 0.2, 2.1).finished().head(n),
                        (Vector(3) << 0.01, 0.005, 0.001).finished().head(m));
  const json init = ctl.value("initial_state", json::object());
  c.initial.mode = get_or<std::string>(init, "mode", c.initial.mode, "control.initial_state");
  if (c.initial.mode == "fixed") {
    c.initial.fixed = vec_from(init.at("state"), "control.initial_state.state");
    need_size(c.initial.fixed.size(), n, "control.initial_state.state");
  } else if (c.initial.mode != "random_hold") {
    throw ConfigError("control.initial_state.mode: expected random_hold or fixed");
  }
  c.initial.hold_hours = get_or<double>(init, "hold_hours", c.initial.hold_hours, "control.initial_state");
  if (ctl.contains("state_bounds")) {
    const json sb = ctl.at("state_bounds");
    StatePenalty pen{vec_from(sb.at("lower"), "control.state_bounds.lower"),
                     vec_from(sb.at("upper"), "control.state_bounds.upper"),
                     get_or<double>(sb, "weight", 0.0, "control.state_bounds")};
    need_size(pen.lower.size(), n, "control.state_bounds.lower");
    need_size(pen.upper.size(), n, "control.state_bounds.upper");
    c.state_penalty = pen;
  }

  cfg.seeds = get_or<std::vector<std::uint64_t>>(doc, "seeds", cfg.seeds, "config");
  if (cfg.seeds.empty()) throw ConfigError("seeds: need at least one seed");
  cfg.output_dir = base_dir / get_or<std::string>(doc, "output_dir", "out", "config");

  // Resolved view with every default materialized.
  json resolved;
  resolved["name"] = cfg.name;
  resolved["plant"] = {{"name", cfg.plant}, {"parameter_file", cfg.parameter_file.lexically_normal().string()}};
  resolved["data"] = {{"samples", d.samples},
                      {"dt", d.dt},
                      {"initial_state", vec_to(d.initial_state)},
                      {"excitation", {{"kind", kind}, {"hold_steps", d.excitation.hold_steps}, {"noise_std", vec_to(d.excitation.noise_std)}}},
                      {"process_noise", {{"std", vec_to(d.noise_std)}, {"clip_abs", vec_to(d.noise_clip)}, {"scale", d.noise_scale}}}};
  if (d.split_sizes) resolved["data"]["splits"] = *d.split_sizes;
  if (d.excitation.kind == ExcitationKind::SineWave) {
    resolved["data"]["excitation"]["amplitude"] = vec_to(d.excitation.amplitude);
    resolved["data"]["excitation"]["bias"] = vec_to(d.excitation.bias);
    resolved["data"]["excitation"]["omega_min"] = d.excitation.omega_min;
    resolved["data"]["excitation"]["omega_max"] = d.excitation.omega_max;
  }
  resolved["training"] = {{"dkoia", training_to_json(cfg.training_dkoia)}, {"dko", training_to_json(cfg.training_dko)}};
  resolved["control"] = {{"horizon", c.horizon},
                         {"l_max", c.l_max},
                         {"steps", c.steps},
                         {"x_s", vec_to(c.x_s)},
                         {"u_s", vec_to(c.u_s)},
                         {"static_fraction", c.static_fraction},
                         {"stop_tolerance", std::isfinite(c.stop_tolerance) ? json(c.stop_tolerance) : json(nullptr)},
                         {"plant_noise", c.plant_noise},
                         {"qp_tolerance", c.qp.tolerance},
                         {"qp_max_iter", c.qp.max_iter},
                         {"weights",
                          {{"dkoia", {{"Q", vec_to(c.dkoia.q_diag)}, {"R", vec_to(c.dkoia.r_diag)}}},
                           {"dko", {{"Q", vec_to(c.dko.q_diag)}, {"R", vec_to(c.dko.r_diag)}}}}},
                         {"initial_state", {{"mode", c.initial.mode}, {"hold_hours", c.initial.hold_hours}}}};
  if (c.initial.mode == "fixed") resolved["control"]["initial_state"]["state"] = vec_to(c.initial.fixed);
  if (c.state_penalty) {
    resolved["control"]["state_bounds"] = {{"lower", vec_to(c.state_penalty->lower)},
                                           {"upper", vec_to(c.state_penalty->upper)},
                                           {"weight", c.state_penalty->weight}};
  }
  resolved["seeds"] = cfg.seeds;
  resolved["output_dir"] = cfg.output_dir.lexically_normal().string();
  cfg.resolved = std::move(resolved);
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  // Paths inside a config are relative to the working directory unless the
  // config says otherwise.
  fs::path base = ".";
  if (doc.contains("base_dir")) base = file.parent_path() / doc.at("base_dir").get<std::string>();
  return parse_config(doc, base);
}

// ---------------------------------------------------------------------------
// Provenance

/// Hex SHA-1 of "blob <size>\0<content>", the hash git assigns to a file.
inline std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

inline std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_hash(const fs::path& file) { return git_blob_hash(read_file(file)); }

/// Writes `<artifact>.meta.json` next to an output file.
inline void write_meta(const fs::path& artifact, const ExperimentConfig* cfg, const std::vector<fs::path>& inputs,
                       const json& extra = json::object()) {
  json meta{{"artifact", artifact.filename().string()}, {"artifact_hash", file_hash(artifact)}};
  if (cfg) meta["config"] = cfg->resolved;
  json hashes = json::object();
  for (const auto& in : inputs) hashes[in.lexically_normal().string()] = file_hash(in);
  meta["inputs"] = hashes;
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  const fs::path file = artifact.string() + ".meta.json";
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << meta.dump(2) << '\n';
}

inline std::ofstream open_output(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline pieces (pure, no file I/O)

inline TrajectoryDataset generate_dataset(const ExperimentConfig& cfg, const PlantModel& plant, std::uint64_t seed) {
  const DataConfig& d = cfg.data;
  ExcitationConfig ex = d.excitation;
  ex.seed = seed;
  const auto inputs = generate_excitation(ex, plant, d.samples);
  const std::vector<Vector> dist(inputs.size(), Vector::Zero(plant.disturbance_dim));
  std::optional<ProcessNoiseConfig> noise;
  if (d.noise_scale > 0.0) noise = ProcessNoiseConfig{d.noise_scale * d.noise_std, d.noise_clip, seed ^ 0x9e3779b97f4a7c15ULL};
  const auto states = simulate(plant, d.initial_state, inputs, dist, d.dt, noise);
  std::array<IndexRange, 3> splits;
  if (d.split_sizes) {
    const auto& s = *d.split_sizes;
    splits = {IndexRange{0, s[0]}, IndexRange{s[0], s[0] + s[1]}, IndexRange{s[0] + s[1], s[0] + s[1] + s[2]}};
  } else {
    splits = proportional_splits(d.samples);
  }
  return make_dataset(states, inputs, dist, d.dt, splits, seed);
}

inline TrainingConfig training_for(const ExperimentConfig& cfg, Variant v, std::uint64_t seed) {
  TrainingConfig t = cfg.training(v);
  t.seed = seed;
  return t;
}

inline MpcProblem mpc_problem(const ExperimentConfig& cfg, std::shared_ptr<const KoopmanModel> model,
                              const PlantModel& plant) {
  const ControlConfig& c = cfg.control;
  const VariantWeights& w = c.weights(model->variant);
  MpcProblem pb;
  pb.model = std::move(model);
  pb.Q = w.q_diag.asDiagonal();
  pb.R = w.r_diag.asDiagonal();
  pb.horizon = c.horizon;
  pb.max_iterations = c.l_max;
  pb.x_s = c.x_s;
  pb.u_s = c.u_s;
  pb.input_lower = plant.input_lower;
  pb.input_upper = plant.input_upper;
  pb.stop_tolerance = c.stop_tolerance;
  pb.qp = c.qp;
  pb.state_penalty = c.state_penalty;
  return pb;
}

/// Initial state for closed-loop run `seed`: hold a uniformly drawn input for
/// `hold_hours` starting at x_s, or the configured fixed state.
inline Vector initial_state(const ExperimentConfig& cfg, const PlantModel& plant, std::uint64_t seed) {
  const ControlConfig& c = cfg.control;
  if (c.initial.mode == "fixed") return c.initial.fixed;
  std::mt19937_64 rng(seed ^ 0xc2b2ae3d27d4eb4fULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector u(plant.input_dim);
  for (Index i = 0; i < u.size(); ++i) {
    u[i] = plant.input_lower[i] + (plant.input_upper[i] - plant.input_lower[i]) * unit(rng);
  }
  const auto steps = static_cast<long>(std::llround(c.initial.hold_hours / cfg.data.dt));
  Vector x = c.x_s;
  const Vector p = Vector::Zero(plant.disturbance_dim);
  for (long k = 0; k < steps; ++k) x = integrate_step(plant, x, u, p, cfg.data.dt);
  return x;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  std::vector<double> rmse;
  double overall = 0.0;       // sum of the per-step RMSE
  double static_error = 0.0;  // mean RMSE over the trailing window
  std::size_t static_window = 0;
  double min_rmse = 0.0;
  std::size_t input_violations = 0;
};

inline std::size_t static_window_length(std::size_t steps, double fraction) {
  const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(steps) * fraction));
  return std::clamp<std::size_t>(w, 1, std::max<std::size_t>(steps, 1));
}

inline MetricsReport compute_metrics(const std::vector<double>& rmse, double static_fraction) {
  MetricsReport r;
  r.rmse = rmse;
  if (rmse.empty()) return r;
  r.static_window = static_window_length(rmse.size(), static_fraction);
  r.min_rmse = rmse.front();
  for (std::size_t k = 0; k < rmse.size(); ++k) {
    r.overall += rmse[k];
    r.min_rmse = std::min(r.min_rmse, rmse[k]);
    if (k + r.static_window >= rmse.size()) r.static_error += rmse[k];
  }
  r.static_error /= static_cast<double>(r.static_window);
  return r;
}

inline std::size_t count_input_violations(const std::vector<Vector>& inputs, const Vector& lower, const Vector& upper) {
  std::size_t bad = 0;
  for (const auto& u : inputs) bad += ((u.array() < lower.array()) || (u.array() > upper.array())).count();
  return bad;
}

/// Recomputes the metrics from an emitted closed-loop CSV, using only the
/// logged states, the set-point and the normalizer std.
inline MetricsReport metrics_from_log_csv(std::istream& in, const Vector& x_s, const Vector& std, double static_fraction) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("closed-loop log is empty");
  const Index n = x_s.size();
  std::vector<double> rmse;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<Index>(row.size()) < 2 + n) throw IoError("closed-loop log row too short");
    rmse.push_back(normalized_rmse(Eigen::Map<const Vector>(row.data() + 2, n), x_s, std));
  }
  return compute_metrics(rmse, static_fraction);
}

// ---------------------------------------------------------------------------
// CSV helpers

inline void write_history_csv(const std::vector<EpochRecord>& h, std::ostream& out) {
  out << "epoch,train_loss,validation_loss\n" << std::setprecision(17);
  for (const auto& r : h) out << r.epoch << ',' << r.train_loss << ',' << r.validation_loss << '\n';
}

struct EvaluationReport {
  double train = 0.0;
  double validation = 0.0;
  double test = 0.0;
};

inline EvaluationReport evaluate_all(const KoopmanModel& model, const TrajectoryDataset& d, Index horizon) {
  return {evaluate(model, d, SplitId::Train, horizon), evaluate(model, d, SplitId::Validation, horizon),
          evaluate(model, d, SplitId::Test, horizon)};
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateSummary {
  TrajectoryDataset dataset;
  Vector state_min, state_max, state_mean;
};

inline GenerateSummary cmd_generate(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  const PlantModel plant = make_plant(cfg);
  GenerateSummary s{generate_dataset(cfg, plant, seed), {}, {}, {}};
  s.state_min = s.dataset.states.rowwise().minCoeff();
  s.state_max = s.dataset.states.rowwise().maxCoeff();
  s.state_mean = s.dataset.states.rowwise().mean();
  save_dataset(s.dataset, out_dir);
  for (const char* f : {"trajectory.csv", "train.csv", "validation.csv", "test.csv", "dataset.json"}) {
    write_meta(out_dir / f, &cfg, {cfg.parameter_file}, {{"seed", seed}});
  }
  return s;
}

struct TrainSummary {
  TrainResult result;
  EvaluationReport errors;
};

inline TrainSummary cmd_train(const ExperimentConfig& cfg, Variant variant, const fs::path& data_dir, std::uint64_t seed,
                              const fs::path& model_file, const EpochCallback& on_epoch = {}) {
  const TrajectoryDataset d = load_dataset(data_dir);
  const TrainingConfig t = training_for(cfg, variant, seed);
  TrainSummary s{train(variant, d, t, on_epoch), {}};
  s.errors = evaluate_all(s.result.model, d, t.horizon);
  if (model_file.has_parent_path()) fs::create_directories(model_file.parent_path());
  save_model(s.result.model, model_file);
  const fs::path history = model_file.string() + ".history.csv";
  {
    auto out = open_output(history);
    write_history_csv(s.result.history, out);
  }
  const std::vector<fs::path> inputs{data_dir / "trajectory.csv", data_dir / "dataset.json"};
  const json extra{{"seed", seed}, {"variant", variant_name(variant)}, {"best_epoch", s.result.best_epoch}};
  write_meta(model_file, &cfg, inputs, extra);
  write_meta(history, &cfg, inputs, extra);
  return s;
}

inline EvaluationReport cmd_evaluate(const fs::path& model_file, const fs::path& data_dir, Index horizon,
                                     const fs::path& report_file) {
  const KoopmanModel model = load_model(model_file);
  const TrajectoryDataset d = load_dataset(data_dir);
  for (SplitId s : kAllSplits) {
    if (d.split(s).size() < horizon + 1) {
      throw ConfigError("evaluate: horizon " + std::to_string(horizon) + " longer than the `" + split_name(s) + "` split");
    }
  }
  const EvaluationReport r = evaluate_all(model, d, horizon);
  if (!report_file.empty()) {
    {
      auto out = open_output(report_file);
      out << "split,horizon,mean_step_error\n" << std::setprecision(17);
      out << "train," << horizon << ',' << r.train << '\n';
      out << "validation," << horizon << ',' << r.validation << '\n';
      out << "test," << horizon << ',' << r.test << '\n';
    }
    write_meta(report_file, nullptr, {model_file, data_dir / "trajectory.csv", data_dir / "dataset.json"},
               {{"variant", variant_name(model.variant)}});
  }
  return r;
}

struct ControlOutcome {
  ClosedLoopLog log;
  MetricsReport metrics;
  Vector initial_state;
};

/// Closed-loop run of a trained model on the configured plant (no files).
inline ControlOutcome run_control(const ExperimentConfig& cfg, const PlantModel& plant,
                                  std::shared_ptr<const KoopmanModel> model, std::uint64_t seed) {
  const ControlConfig& c = cfg.control;
  const MpcController controller(mpc_problem(cfg, model, plant));
  ControlOutcome out;
  out.initial_state = initial_state(cfg, plant, seed);
  const std::vector<Vector> dist(static_cast<std::size_t>(c.steps + c.horizon), Vector::Zero(plant.disturbance_dim));
  ClosedLoopOptions opts;
  if (c.plant_noise) {
    opts.plant_noise = ProcessNoiseConfig{cfg.data.noise_scale * cfg.data.noise_std, cfg.data.noise_clip, seed ^ 0x632be59bd9b4e019ULL};
  }
  out.log = run_closed_loop(controller, plant, out.initial_state, dist, c.steps, cfg.data.dt, opts);
  out.metrics = compute_metrics(out.log.rmse, c.static_fraction);
  out.metrics.input_violations = count_input_violations(out.log.inputs, plant.input_lower, plant.input_upper);
  return out;
}

inline void write_metrics_csv(const MetricsReport& m, std::ostream& out) {
  out << "metric,value\n" << std::setprecision(17);
  out << "overall_error," << m.overall << '\n';
  out << "static_error," << m.static_error << '\n';
  out << "static_window," << m.static_window << '\n';
  out << "min_rmse," << m.min_rmse << '\n';
  out << "input_violations," << m.input_violations << '\n';
}

inline ControlOutcome cmd_control(const ExperimentConfig& cfg, const fs::path& model_file, std::uint64_t seed,
                                  const fs::path& out_dir) {
  const PlantModel plant = make_plant(cfg);
  auto model = std::make_shared<const KoopmanModel>(load_model(model_file));
  ControlOutcome o = run_control(cfg, plant, model, seed);
  const std::string tag = std::string(variant_name(model->variant)) + "_seed" + std::to_string(seed);
  const fs::path log_file = out_dir / ("closed_loop_" + tag + ".csv");
  const fs::path metrics_file = out_dir / ("metrics_" + tag + ".csv");
  {
    auto out = open_output(log_file);
    write_closed_loop_csv(o.log, out);
  }
  {
    auto out = open_output(metrics_file);
    write_metrics_csv(o.metrics, out);
  }
  const json extra{{"seed", seed}, {"variant", variant_name(model->variant)}};
  write_meta(log_file, &cfg, {model_file, cfg.parameter_file}, extra);
  write_meta(metrics_file, &cfg, {model_file, cfg.parameter_file}, extra);
  return o;
}

// ---------------------------------------------------------------------------
// Paired comparison

struct CompareRow {
  std::uint64_t seed = 0;
  Variant variant = Variant::DKOIA;
  int best_epoch = 0;
  EvaluationReport prediction;
  MetricsReport control;
};

/// Everything produced for one seed; index 0 is DKOIA, 1 is DKO.
struct SeedOutcome {
  std::array<CompareRow, 2> rows;
  std::array<std::vector<EpochRecord>, 2> history;
  std::array<ClosedLoopLog, 2> logs;
  std::array<std::shared_ptr<const KoopmanModel>, 2> models;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // seed-major, DKOIA then DKO
  std::vector<SeedOutcome> outcomes;
};

/// Data, training, evaluation and closed loop for both variants at one seed.
inline SeedOutcome run_seed(const ExperimentConfig& cfg, const PlantModel& plant, std::uint64_t seed) {
  const TrajectoryDataset d = generate_dataset(cfg, plant, seed);
  SeedOutcome out;
  const std::array<Variant, 2> variants{Variant::DKOIA, Variant::DKO};
  for (std::size_t i = 0; i < 2; ++i) {
    const Variant v = variants[i];
    const TrainingConfig t = training_for(cfg, v, seed);
    TrainResult tr = train(v, d, t);
    auto model = std::make_shared<const KoopmanModel>(std::move(tr.model));
    ControlOutcome co = run_control(cfg, plant, model, seed);
    out.rows[i] = CompareRow{seed, v, tr.best_epoch, evaluate_all(*model, d, t.horizon), std::move(co.metrics)};
    out.history[i] = std::move(tr.history);
    out.logs[i] = std::move(co.log);
    out.models[i] = std::move(model);
  }
  return out;
}

inline void write_compare_csv(const std::vector<CompareRow>& rows, std::ostream& out) {
  out << "seed,variant,best_epoch,train_error,validation_error,test_error,overall_error,static_error,min_rmse,input_violations\n";
  out << std::setprecision(17);
  auto emit = [&](const std::string& seed, const char* variant, const std::string& epoch, const EvaluationReport& e,
                  const MetricsReport& m, const std::string& viol) {
    out << seed << ',' << variant << ',' << epoch << ',' << e.train << ',' << e.validation << ',' << e.test << ','
        << m.overall << ',' << m.static_error << ',' << m.min_rmse << ',' << viol << '\n';
  };
  for (const auto& r : rows) {
    emit(std::to_string(r.seed), variant_name(r.variant), std::to_string(r.best_epoch), r.prediction, r.control,
         std::to_string(r.control.input_violations));
  }
  for (Variant v : {Variant::DKOIA, Variant::DKO}) {
    EvaluationReport e;
    MetricsReport m;
    std::size_t count = 0, viol = 0;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      e.train += r.prediction.train;
      e.validation += r.prediction.validation;
      e.test += r.prediction.test;
      m.overall += r.control.overall;
      m.static_error += r.control.static_error;
      m.min_rmse += r.control.min_rmse;
      viol += r.control.input_violations;
      ++count;
    }
    if (count == 0) continue;
    const double c = static_cast<double>(count);
    e.train /= c;
    e.validation /= c;
    e.test /= c;
    m.overall /= c;
    m.static_error /= c;
    m.min_rmse /= c;
    emit("mean", variant_name(v), "", e, m, std::to_string(viol));
  }
}

struct PairedSummary {
  std::size_t seeds = 0;
  std::size_t dkoia_better_test = 0;    // strict: DKOIA test error < DKO
  std::size_t dkoia_better_static = 0;  // DKOIA static error <= DKO
  double dkoia_mean_static = 0.0;
  double dko_mean_static = 0.0;
  double dkoia_mean_test = 0.0;
  double dko_mean_test = 0.0;
};

inline PairedSummary summarize(const std::vector<CompareRow>& rows) {
  PairedSummary s;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const CompareRow& a = rows[i];
    const CompareRow& b = rows[i + 1];
    if (a.variant != Variant::DKOIA || b.variant != Variant::DKO || a.seed != b.seed) {
      throw UsageError("compare rows must alternate DKOIA/DKO per seed");
    }
    ++s.seeds;
    if (a.prediction.test < b.prediction.test) ++s.dkoia_better_test;
    if (a.control.static_error <= b.control.static_error) ++s.dkoia_better_static;
    s.dkoia_mean_static += a.control.static_error;
    s.dko_mean_static += b.control.static_error;
    s.dkoia_mean_test += a.prediction.test;
    s.dko_mean_test += b.prediction.test;
  }
  if (s.seeds > 0) {
    const double c = static_cast<double>(s.seeds);
    s.dkoia_mean_static /= c;
    s.dko_mean_static /= c;
    s.dkoia_mean_test /= c;
    s.dko_mean_test /= c;
  }
  return s;
}

inline void write_summary_csv(const PairedSummary& s, std::ostream& out) {
  out << "metric,dkoia_mean,dko_mean,dkoia_better_count,seeds\n" << std::setprecision(17);
  out << "test_error," << s.dkoia_mean_test << ',' << s.dko_mean_test << ',' << s.dkoia_better_test << ',' << s.seeds << '\n';
  out << "static_error," << s.dkoia_mean_static << ',' << s.dko_mean_static << ',' << s.dkoia_better_static << ','
      << s.seeds << '\n';
}

/// Seed sweep over both variants. Seeds run on up to `jobs` workers; results
/// are collected by seed index so the output does not depend on scheduling.
inline CompareResult cmd_compare(const ExperimentConfig& cfg, const fs::path& out_dir, unsigned jobs = 1) {
  const PlantModel plant = make_plant(cfg);
  const std::size_t n = cfg.seeds.size();
  std::vector<SeedOutcome> outcomes(n);
  jobs = std::max(1u, jobs);
  for (std::size_t start = 0; start < n; start += jobs) {
    std::vector<std::future<SeedOutcome>> batch;
    for (std::size_t i = start; i < std::min(n, start + jobs); ++i) {
      batch.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                 [&cfg, &plant, seed = cfg.seeds[i]] { return run_seed(cfg, plant, seed); }));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) outcomes[start + i] = batch[i].get();
  }

  CompareResult result;
  for (const auto& o : outcomes) {
    result.rows.push_back(o.rows[0]);
    result.rows.push_back(o.rows[1]);
  }

  fs::create_directories(out_dir);
  const std::vector<fs::path> inputs{cfg.parameter_file};
  const fs::path compare_file = out_dir / "compare.csv";
  {
    auto out = open_output(compare_file);
    write_compare_csv(result.rows, out);
  }
  write_meta(compare_file, &cfg, inputs);
  const fs::path summary_file = out_dir / "compare_summary.csv";
  {
    auto out = open_output(summary_file);
    write_summary_csv(summarize(result.rows), out);
  }
  write_meta(summary_file, &cfg, inputs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t v = 0; v < 2; ++v) {
      const std::string tag = std::string(variant_name(outcomes[i].rows[v].variant)) + "_seed" + std::to_string(cfg.seeds[i]);
      {
        auto out = open_output(out_dir / ("loss_" + tag + ".csv"));
        write_history_csv(outcomes[i].history[v], out);
      }
      {
        auto out = open_output(out_dir / ("closed_loop_" + tag + ".csv"));
        write_closed_loop_csv(outcomes[i].logs[v], out);
      }
    }
  }
  result.outcomes = std::move(outcomes);
  return result;
}

}  // namespace dkoia::harness
