#include "dkoia/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace dkoia;

namespace {

TrajectoryDataset synthetic(Index T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Vector> x, u, p;
  for (Index k = 0; k <= T; ++k) x.push_back(Vector::NullaryExpr(3, [&] { return 5.0 + 2.0 * g(rng); }));
  for (Index k = 0; k < T; ++k) {
    u.push_back(Vector::NullaryExpr(2, [&] { return 1e6 * g(rng); }));
    p.push_back(Vector::NullaryExpr(1, [&] { return g(rng); }));
  }
  return make_dataset(x, u, p, 0.005, proportional_splits(T), seed);
}

}  // namespace

TEST(Splits, Proportional) {
  const auto a = proportional_splits(12000);
  EXPECT_EQ(a[0].size(), 9000);
  EXPECT_EQ(a[1].size(), 1000);
  EXPECT_EQ(a[2].size(), 2000);
  const auto b = proportional_splits(3000);
  EXPECT_EQ(b[0].size(), 2250);
  EXPECT_EQ(b[1].size(), 250);
  EXPECT_EQ(b[2].size(), 500);
  EXPECT_EQ(b[1].begin, 2250);
  EXPECT_EQ(b[2].end, 3000);
}

TEST(Dataset, DropsTrailingState) {
  const auto d = synthetic(40, 1);
  EXPECT_EQ(d.samples(), 40);
  EXPECT_EQ(d.state_dim(), 3);
  EXPECT_EQ(d.input_dim(), 2);
}

TEST(Windows, CountsAndBounds) {
  const auto d = synthetic(3000, 2);
  const auto w = make_windows(d, SplitId::Train, 20);
  EXPECT_EQ(w.size(), 2250u - 20u);
  EXPECT_EQ(w.front().start, 0);
  EXPECT_EQ(w.back().last_state(), 2249);
  EXPECT_EQ(make_windows(d, SplitId::Validation, 20).size(), 230u);
  EXPECT_EQ(make_windows(d, SplitId::Test, 1).size(), 499u);
  try {
    make_windows(d, SplitId::Validation, 250);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("validation"), std::string::npos);
  }
}

TEST(Windows, BatchIteratorCoversEachWindowOnce) {
  const auto d = synthetic(400, 3);
  const auto w = make_windows(d, SplitId::Train, 5);
  BatchIterator it(w, 64, 9);
  for (int epoch = 0; epoch < 2; ++epoch) {
    const auto batches = it.next_epoch();
    std::multiset<Index> seen;
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), 64u);
      for (const auto& x : b) seen.insert(x.start);
    }
    EXPECT_EQ(seen.size(), w.size());
    EXPECT_EQ(std::set<Index>(seen.begin(), seen.end()).size(), w.size());
    EXPECT_EQ(batches.back().size(), w.size() % 64);
  }
  BatchIterator a(w, 16, 5), b(w, 16, 5);
  EXPECT_EQ(a.next_epoch()[0][0].start, b.next_epoch()[0][0].start);
}

TEST(Normalizer, TrainingSplitStatistics) {
  const auto d = synthetic(400, 4);
  const auto nz = fit_normalizer(d);
  const NormalizedData n = normalize(d, nz);
  const auto tr = d.split(SplitId::Train);
  const Matrix block = n.states.middleCols(tr.begin, tr.size());
  EXPECT_LT(block.rowwise().mean().cwiseAbs().maxCoeff(), 1e-12);
  const Vector var = (block.array().square().rowwise().sum() / static_cast<double>(tr.size())).matrix();
  EXPECT_LT((var.array() - 1.0).abs().maxCoeff(), 1e-12);
  const Vector x = d.states.col(7);
  EXPECT_LT((nz.state.invert(nz.state.apply(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Normalizer, AffineInvariance) {
  auto d = synthetic(200, 5);
  const NormalizedData base = normalize(d, fit_normalizer(d));
  auto shifted = d;
  shifted.states = (3.0 * d.states.array() + 100.0).matrix();
  const NormalizedData moved = normalize(shifted, fit_normalizer(shifted));
  EXPECT_LT((base.states - moved.states).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Normalizer, DegenerateChannelFloored) {
  auto d = synthetic(100, 6);
  d.disturbances.setConstant(2.0);
  const auto nz = fit_normalizer(d);
  EXPECT_EQ(nz.disturbance.std[0], kStdFloor);
  ASSERT_EQ(nz.degenerate_channels.size(), 1u);
  EXPECT_EQ(nz.degenerate_channels[0], "p1");
  EXPECT_TRUE(normalize(d, nz).disturbances.allFinite());
}

TEST(Normalizer, JsonRoundTrip) {
  const auto d = synthetic(100, 7);
  const auto nz = fit_normalizer(d);
  const auto back = normalizer_from_json(normalizer_to_json(nz));
  EXPECT_EQ(back.state.mean, nz.state.mean);
  EXPECT_EQ(back.input.std, nz.input.std);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto d = synthetic(120, 8);
  const auto dir = std::filesystem::temp_directory_path() / "dkoia_dataset_rt";
  std::filesystem::remove_all(dir);
  save_dataset(d, dir);
  for (const char* f : {"trajectory.csv", "train.csv", "validation.csv", "test.csv", "dataset.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.states, d.states);
  EXPECT_EQ(back.inputs, d.inputs);
  EXPECT_EQ(back.disturbances, d.disturbances);
  EXPECT_EQ(back.source_seed, 8u);
  for (SplitId s : kAllSplits) EXPECT_EQ(back.split(s).begin, d.split(s).begin);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_dataset(dir), IoError);
}

TEST(Dataset, RejectsOverlongSplits) {
  const auto d = synthetic(50, 9);
  std::vector<Vector> x, u, p;
  for (Index k = 0; k < 50; ++k) {
    x.emplace_back(d.states.col(k));
    u.emplace_back(d.inputs.col(k));
    p.emplace_back(d.disturbances.col(k));
  }
  EXPECT_THROW(make_dataset(x, u, p, 0.005, {IndexRange{0, 40}, IndexRange{40, 50}, IndexRange{50, 60}}, 0),
               ConfigError);
}
