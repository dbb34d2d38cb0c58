#include <gtest/gtest.h>

#include "eval_oracles.hpp"
#include "test_support.hpp"
#include "trajformer/data.hpp"
#include "trajformer/eval.hpp"
#include "trajformer/training.hpp"

using namespace trajformer;
using trajformer::testing::ConstantPredictor;
using trajformer::testing::random_trajectory;
using trajformer::testing::TruthPredictor;

namespace {

std::vector<Trajectory> noisy_corpus(std::size_t n, std::size_t points, std::uint64_t seed = 1) {
  SyntheticConfig cfg;
  cfg.n_traj = n;
  cfg.points_per_traj = points;
  cfg.noise_sigma = 2e-4;
  cfg.interval_std = 15;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

ModelConfig small_model() {
  ModelConfig m;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.max_seq = 32;
  return m;
}

TEST(Haversine, OneDegreeOfLongitudeAtTheEquator) {
  EXPECT_NEAR(haversine(0, 0, 0, 1), 111'195.0, 1.0);
  EXPECT_NEAR(haversine(0, 0, 1, 0), 111'195.0, 1.0);
  EXPECT_EQ(haversine(12.5, -7.25, 12.5, -7.25), 0.0);
  EXPECT_NEAR(haversine(0, 0, 0, 180), kEarthRadiusM * M_PI, 1e-6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int i = 0; i < 1000; ++i) {
    const double a = lat(rng), b = lon(rng), c = lat(rng), d = lon(rng);
    EXPECT_EQ(haversine(a, b, c, d), haversine(c, d, a, b));
    EXPECT_LE(haversine(a, b, c, d), kEarthRadiusM * M_PI + 1e-6);
  }
}

TEST(Metrics, OraclePredictionsScoreZero) {
  const auto trajs = noisy_corpus(20, 30);
  const auto norm = compute_center(trajs);
  const TruthPredictor oracle(trajs, norm, 64);
  for (auto mode : {EvalMode::next_step, EvalMode::infill}) {
    EvalOptions opts;
    opts.mode = mode;
    const auto r = evaluate(oracle, from_vector(trajs), opts);
    EXPECT_EQ(r.ade_m, 0.0);
    EXPECT_EQ(r.fde_m, 0.0);
    EXPECT_EQ(r.time_mae_s, 0.0);
    EXPECT_GT(r.n_points, 0u);
    EXPECT_EQ(r.n_traj, 20u);
  }
  EvalOptions roll;
  roll.mode = EvalMode::rollout;
  const auto r = evaluate(oracle, from_vector(trajs), roll);
  EXPECT_LT(r.ade_m, 1e-6);
  EXPECT_LT(r.fde_m, 1e-6);
  EXPECT_EQ(r.time_mae_s, 0.0);
  EXPECT_EQ(r.n_points, 20u * 5);
  EXPECT_EQ(r.objective, "rollout(5)");
}

TEST(Metrics, ConstantOffsetHasKnownError) {
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 3; ++k) {
    Trajectory t{"s" + std::to_string(k), {}};
    for (int i = 0; i < 6; ++i) t.points.push_back({0.0, 0.0, 100 + 60 * i});
    trajs.push_back(t);
  }
  NormalizationParams norm;
  norm.scale_lat = norm.scale_lon = 1.0;
  norm.dt_scale = 60.0;
  const ConstantPredictor p({0.0, 1.0, 1.5}, norm, 16);
  const auto r = evaluate(p, from_vector(trajs), EvalOptions{});
  EXPECT_NEAR(r.ade_m, haversine(0, 0, 0, 1), 1e-6);
  EXPECT_NEAR(r.fde_m, haversine(0, 0, 0, 1), 1e-6);
  EXPECT_NEAR(r.time_mae_s, 30.0, 1e-9);
  EXPECT_EQ(r.n_points, 15u);
}

TEST(Metrics, InvariantToBatchSize) {
  const auto trajs = noisy_corpus(23, 20);
  auto varied = trajs;
  std::mt19937_64 rng(8);
  for (auto& t : varied) t.points.resize(8 + rng() % 13);
  const auto norm = compute_center(varied);
  const auto m = small_model();
  const ModelPredictor model(m, init_parameters(m, 4), norm);
  for (auto mode : {EvalMode::next_step, EvalMode::infill, EvalMode::rollout}) {
    EvalOptions opts;
    opts.mode = mode;
    opts.seed = 9;
    opts.batch_size = 1;
    const auto ref = evaluate(model, from_vector(varied), opts);
    for (std::size_t bs : {2u, 5u, 16u, 100u}) {
      opts.batch_size = bs;
      EXPECT_EQ(evaluate(model, from_vector(varied), opts), ref)
          << to_string(mode) << " batch " << bs;
    }
  }
}

TEST(Metrics, ReportsAreDeterministicAndInputsUntouched) {
  const auto trajs = noisy_corpus(12, 16);
  const auto norm = compute_center(trajs);
  const auto m = small_model();
  const auto params = init_parameters(m, 2);
  const ModelPredictor model(m, params, norm);
  const auto copy = trajs;
  for (auto mode : {EvalMode::next_step, EvalMode::infill, EvalMode::rollout}) {
    EvalOptions opts;
    opts.mode = mode;
    opts.seed = 3;
    EXPECT_EQ(to_csv(evaluate(model, from_vector(trajs), opts)),
              to_csv(evaluate(model, from_vector(trajs), opts)));
  }
  EXPECT_EQ(trajs, copy);
}

TEST(Metrics, InfillCoversExactlyTheMaskedPositions) {
  // 10 x 101 points: 1000 supervised positions.
  const auto trajs = noisy_corpus(10, 101, 4);
  const auto norm = compute_center(trajs);
  EvalOptions opts;
  opts.mode = EvalMode::infill;
  opts.seed = 17;
  opts.mask_ratio = 0.15;
  opts.max_len = 128;
  std::size_t expected = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    expected += eval_mask(100, opts.mask_ratio, opts.seed, i).positions.size();
  const TruthPredictor masked_only(trajs, norm, 128, true);
  const auto r = evaluate(masked_only, from_vector(trajs), opts);
  EXPECT_EQ(r.n_points, expected);
  EXPECT_NEAR(static_cast<double>(r.n_points), 150.0, 3.0 * std::sqrt(1000 * 0.15 * 0.85));
  EXPECT_EQ(r.ade_m, 0.0);
  EXPECT_EQ(r.time_mae_s, 0.0);
}

TEST(Rollout, ExtendsWithIncreasingTimestamps) {
  std::mt19937_64 rng(5);
  const auto traj = random_trajectory(rng, 6);
  NormalizationParams norm;
  const ConstantPredictor backwards({0.0, 0.0, -3.0}, norm, 32);
  EXPECT_TRUE(rollout(backwards, traj, 0).empty());
  const auto pts = rollout(backwards, traj, 10);
  ASSERT_EQ(pts.size(), 10u);
  std::int64_t prev = traj.points.back().t;
  for (const auto& p : pts) {
    EXPECT_EQ(p.t, prev + 1);
    prev = p.t;
  }
  const ConstantPredictor north({1e3, 1e3, 1.0}, norm, 32);
  for (const auto& p : rollout(north, traj, 3)) {
    EXPECT_EQ(p.lat, 90.0);
    EXPECT_EQ(p.lon, 180.0);
  }
  EXPECT_THROW(rollout(north, traj, 27), ConfigError);
  EXPECT_THROW(rollout(north, Trajectory{"x", {traj.points[0]}}, 2), DataError);
}

TEST(Evaluate, RejectsMismatchesAndEmptyInput) {
  const auto trajs = noisy_corpus(5, 10);
  const auto norm = compute_center(trajs);
  const TruthPredictor oracle(trajs, norm, 32);
  auto other = norm;
  other.center_lat += 0.5;
  EXPECT_THROW(evaluate(oracle, from_vector(trajs), EvalOptions{}, &other), DataError);
  EXPECT_NO_THROW(evaluate(oracle, from_vector(trajs), EvalOptions{}, &norm));
  EXPECT_THROW(evaluate(oracle, from_vector({}), EvalOptions{}), DataError);
  EvalOptions roll;
  roll.mode = EvalMode::rollout;
  roll.horizon = 31;
  EXPECT_THROW(evaluate(oracle, from_vector(trajs), roll), ConfigError);

  auto m = small_model();
  m.attention_mode = AttentionMode::bidirectional;
  const ModelPredictor bidir(m, init_parameters(m, 0), norm);
  roll.horizon = 3;
  EXPECT_THROW(evaluate(bidir, from_vector(trajs), roll), ConfigError);
  m = small_model();
  m.patch_len = 2;
  const ModelPredictor patched(m, init_parameters(m, 0), norm);
  EvalOptions infill;
  infill.mode = EvalMode::infill;
  EXPECT_THROW(evaluate(patched, from_vector(trajs), infill), ConfigError);
  EXPECT_NO_THROW(evaluate(patched, from_vector(trajs), EvalOptions{}));
}

TEST(Report, CsvAndJsonForms) {
  MetricsReport r;
  r.ade_m = 12.5;
  r.fde_m = 20.0;
  r.time_mae_s = 3.25;
  r.n_points = 40;
  r.n_traj = 4;
  r.objective = "next_step";
  EXPECT_EQ(to_csv(r), "ade_m,fde_m,time_mae_s,n_points,n_traj,objective\n12.5,20,3.25,40,4,next_step\n");
  const auto j = to_json(r);
  EXPECT_EQ(j.at("ade_m").get<double>(), 12.5);
  EXPECT_EQ(j.at("n_traj").get<std::size_t>(), 4u);
  EXPECT_EQ(j.at("objective").get<std::string>(), "next_step");
  EXPECT_EQ(parse_eval_mode("rollout"), EvalMode::rollout);
  EXPECT_THROW(parse_eval_mode("beam"), ConfigError);
}

}  // namespace
