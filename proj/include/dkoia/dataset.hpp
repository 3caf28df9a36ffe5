#pragma once

#include "dkoia/core.hpp"
#include "dkoia/plant.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace dkoia {

enum class SplitId { Train = 0, Validation = 1, Test = 2 };

inline const char* split_name(SplitId s) {
  switch (s) {
    case SplitId::Train: return "train";
    case SplitId::Validation: return "validation";
    case SplitId::Test: return "test";
  }
  return "?";
}

inline constexpr std::array<SplitId, 3> kAllSplits{SplitId::Train, SplitId::Validation, SplitId::Test};

/// Half-open sample range [begin, end).
struct IndexRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
};

/// Samples (x_k, u_k, p_k), one column per k, with contiguous train <
/// validation < test splits.
struct TrajectoryDataset {
  Matrix states;        // n x T
  Matrix inputs;        // m x T
  Matrix disturbances;  // p x T
  double dt = 0.0;
  std::array<IndexRange, 3> splits{};
  std::uint64_t source_seed = 0;

  Index samples() const { return states.cols(); }
  Index state_dim() const { return states.rows(); }
  Index input_dim() const { return inputs.rows(); }
  Index disturbance_dim() const { return disturbances.rows(); }
  const IndexRange& split(SplitId s) const { return splits[static_cast<std::size_t>(s)]; }

  void validate() const {
    if (inputs.cols() != samples() || disturbances.cols() != samples()) {
      throw ShapeError("dataset: state, input and disturbance columns differ");
    }
    Index cursor = 0;
    for (SplitId s : kAllSplits) {
      const IndexRange& r = split(s);
      if (r.begin != cursor || r.end < r.begin) {
        throw ConfigError(std::string("dataset: split `") + split_name(s) +
                          "` is not contiguous with its predecessor");
      }
      cursor = r.end;
    }
    if (cursor > samples()) throw ConfigError("dataset: splits exceed the trajectory length");
  }
};

/// Splits in the 9000/1000/2000 proportion of a 12000-sample trajectory.
inline std::array<IndexRange, 3> proportional_splits(Index total) {
  if (total < 3) throw ConfigError("dataset: need at least 3 samples to split");
  const Index train = static_cast<Index>(std::llround(static_cast<double>(total) * 0.75));
  const Index val = static_cast<Index>(std::llround(static_cast<double>(total) / 12.0));
  return {IndexRange{0, train}, IndexRange{train, train + val}, IndexRange{train + val, total}};
}

/// Builds a dataset from a simulated trajectory. The trailing state (which has
/// no input) is dropped so every sample is a full (x, u, p) tuple.
inline TrajectoryDataset make_dataset(const std::vector<Vector>& states, const std::vector<Vector>& inputs,
                                      const std::vector<Vector>& disturbances, double dt,
                                      const std::array<IndexRange, 3>& splits, std::uint64_t seed) {
  if (inputs.empty() || states.size() < inputs.size() || disturbances.size() != inputs.size()) {
    throw ShapeError("make_dataset: need one state per input and equal disturbance count");
  }
  const auto T = static_cast<Index>(inputs.size());
  TrajectoryDataset d;
  d.states.resize(states.front().size(), T);
  d.inputs.resize(inputs.front().size(), T);
  d.disturbances.resize(disturbances.front().size(), T);
  for (Index k = 0; k < T; ++k) {
    d.states.col(k) = states[static_cast<std::size_t>(k)];
    d.inputs.col(k) = inputs[static_cast<std::size_t>(k)];
    d.disturbances.col(k) = disturbances[static_cast<std::size_t>(k)];
  }
  d.dt = dt;
  d.splits = splits;
  d.source_seed = seed;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------

/// Per-channel affine scaling to zero mean and unit standard deviation.
struct Normalizer {
  struct Channel {
    Vector mean;
    Vector std;
    Vector apply(const Vector& v) const { return (v - mean).cwiseQuotient(std); }
    Vector invert(const Vector& v) const { return v.cwiseProduct(std) + mean; }
    Matrix apply_cols(const Matrix& m) const {
      return (m.colwise() - mean).array().colwise() / std.array();
    }
    Matrix invert_cols(const Matrix& m) const {
      return (m.array().colwise() * std.array()).matrix().colwise() + mean;
    }
  };
  Channel state;
  Channel input;
  Channel disturbance;
  std::vector<std::string> degenerate_channels;

  static Channel identity(Index dim) { return Channel{Vector::Zero(dim), Vector::Ones(dim)}; }
  static Normalizer identity(Index n, Index m, Index p) {
    return Normalizer{identity(n), identity(m), identity(p), {}};
  }
};

inline constexpr double kStdFloor = 1e-8;

/// Population mean/std over the training split. Constant channels are
/// floored to kStdFloor and listed in `degenerate_channels`.
inline Normalizer fit_normalizer(const TrajectoryDataset& d) {
  d.validate();
  const IndexRange& tr = d.split(SplitId::Train);
  if (tr.size() < 1) throw ConfigError("fit_normalizer: empty training split");
  Normalizer out;
  auto fit = [&](const Matrix& all, const char* prefix) {
    const auto block = all.middleCols(tr.begin, tr.size());
    Normalizer::Channel c;
    c.mean = block.rowwise().mean();
    c.std.resize(block.rows());
    for (Index i = 0; i < block.rows(); ++i) {
      const double var = (block.row(i).array() - c.mean[i]).square().mean();
      double s = std::sqrt(var);
      if (!(s > kStdFloor)) {
        out.degenerate_channels.push_back(prefix + std::to_string(i + 1));
        s = kStdFloor;
      }
      c.std[i] = s;
    }
    return c;
  };
  out.state = fit(d.states, "x");
  out.input = fit(d.inputs, "u");
  out.disturbance = fit(d.disturbances, "p");
  return out;
}

/// The dataset expressed in normalized units, shared by windows and batches.
struct NormalizedData {
  Matrix states;
  Matrix inputs;
  Matrix disturbances;
};

inline NormalizedData normalize(const TrajectoryDataset& d, const Normalizer& nz) {
  return NormalizedData{nz.state.apply_cols(d.states), nz.input.apply_cols(d.inputs),
                        nz.disturbance.apply_cols(d.disturbances)};
}

// ---------------------------------------------------------------------------

/// Horizon-H window: states start..start+H, inputs start..start+H-1.
struct RolloutWindow {
  Index start = 0;
  Index horizon = 0;
  SplitId split = SplitId::Train;

  Index last_state() const { return start + horizon; }

  template <typename M>
  auto states(const M& m) const { return m.middleCols(start, horizon + 1); }
  template <typename M>
  auto inputs(const M& m) const { return m.middleCols(start, horizon); }
};

/// Stride-1 windows inside one split; split_length - H of them.
inline std::vector<RolloutWindow> make_windows(const TrajectoryDataset& d, SplitId split, Index horizon) {
  if (horizon < 1) throw ConfigError("make_windows: horizon must be >= 1");
  const IndexRange& r = d.split(split);
  if (r.size() < horizon + 1) {
    throw ConfigError(std::string("make_windows: horizon ") + std::to_string(horizon) +
                      " does not fit the `" + split_name(split) + "` split of length " +
                      std::to_string(r.size()));
  }
  std::vector<RolloutWindow> out;
  out.reserve(static_cast<std::size_t>(r.size() - horizon));
  for (Index k = r.begin; k + horizon < r.end; ++k) out.push_back(RolloutWindow{k, horizon, split});
  return out;
}

/// Seeded shuffling into batches; the final partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::vector<RolloutWindow> windows, std::size_t batch_size, std::uint64_t seed)
      : windows_(std::move(windows)), batch_size_(batch_size), rng_(seed) {
    if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  }

  /// Reshuffles and returns the batches of one epoch.
  std::vector<std::vector<RolloutWindow>> next_epoch() {
    std::vector<std::size_t> order(windows_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with an explicit draw so the order does not depend on the
    // standard library's shuffle implementation.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_() % i);
      std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<RolloutWindow>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size_) {
      std::vector<RolloutWindow> b;
      for (std::size_t j = i; j < std::min(order.size(), i + batch_size_); ++j) b.push_back(windows_[order[j]]);
      batches.push_back(std::move(b));
    }
    return batches;
  }

  std::size_t window_count() const { return windows_.size(); }

 private:
  std::vector<RolloutWindow> windows_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Persistence: trajectory.csv + one CSV per split + dataset.json metadata.

inline nlohmann::json normalizer_to_json(const Normalizer& nz) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto ch = [&](const Normalizer::Channel& c) { return nlohmann::json{{"mean", vec(c.mean)}, {"std", vec(c.std)}}; };
  return {{"state", ch(nz.state)}, {"input", ch(nz.input)}, {"disturbance", ch(nz.disturbance)}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
  };
  auto ch = [&](const nlohmann::json& c) {
    Normalizer::Channel out{vec(c.at("mean")), vec(c.at("std"))};
    if (out.mean.size() != out.std.size()) throw ShapeError("normalizer: mean/std length mismatch");
    if ((out.std.array() <= 0.0).any()) throw ConfigError("normalizer: std must be positive");
    return out;
  };
  return Normalizer{ch(j.at("state")), ch(j.at("input")), ch(j.at("disturbance")), {}};
}

namespace detail {
inline std::vector<Vector> columns(const Matrix& m, Index begin, Index end) {
  std::vector<Vector> out;
  for (Index k = begin; k < end; ++k) out.emplace_back(m.col(k));
  return out;
}

inline void write_split_csv(const std::filesystem::path& file, const TrajectoryDataset& d, IndexRange r) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  write_trajectory_csv(out, d.dt, d.dt * static_cast<double>(r.begin), columns(d.states, r.begin, r.end),
                       columns(d.inputs, r.begin, r.end), columns(d.disturbances, r.begin, r.end));
}
}  // namespace detail

inline nlohmann::json dataset_metadata(const TrajectoryDataset& d) {
  nlohmann::json splits;
  for (SplitId s : kAllSplits) splits[split_name(s)] = {d.split(s).begin, d.split(s).end};
  return {{"format", "dkoia-dataset/1"},
          {"dt", d.dt},
          {"samples", d.samples()},
          {"state_dim", d.state_dim()},
          {"input_dim", d.input_dim()},
          {"disturbance_dim", d.disturbance_dim()},
          {"splits", splits},
          {"seed", d.source_seed}};
}

inline void save_dataset(const TrajectoryDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_split_csv(dir / "trajectory.csv", d, IndexRange{0, d.samples()});
  for (SplitId s : kAllSplits) detail::write_split_csv(dir / (std::string(split_name(s)) + ".csv"), d, d.split(s));
  std::ofstream meta(dir / "dataset.json");
  if (!meta) throw IoError("cannot write " + (dir / "dataset.json").string());
  meta << dataset_metadata(d).dump(2) << '\n';
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) throw IoError("cannot open " + (dir / "dataset.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset.json: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "dkoia-dataset/1") throw IoError("dataset.json: unknown format tag");

  std::ifstream csv(dir / "trajectory.csv");
  if (!csv) throw IoError("cannot open " + (dir / "trajectory.csv").string());
  const TrajectoryTable table = read_trajectory_csv(csv, (dir / "trajectory.csv").string());
  std::array<IndexRange, 3> splits{};
  for (SplitId s : kAllSplits) {
    const auto r = meta.at("splits").at(split_name(s)).get<std::array<Index, 2>>();
    splits[static_cast<std::size_t>(s)] = IndexRange{r[0], r[1]};
  }
  auto d = make_dataset(table.states, table.inputs, table.disturbances, meta.at("dt").get<double>(), splits,
                        meta.at("seed").get<std::uint64_t>());
  if (d.state_dim() != meta.at("state_dim").get<Index>() || d.input_dim() != meta.at("input_dim").get<Index>()) {
    throw ShapeError("dataset: CSV columns disagree with dataset.json dimensions");
  }
  return d;
}

}  // namespace dkoia
