#include <gtest/gtest.h>

#include <ctime>

#include "test_support.hpp"
#include "trajformer/geo.hpp"

using namespace trajformer;
using trajformer::testing::random_trajectory;

namespace {

TEST(Geo, ValidateRejectsBadTrajectories) {
  EXPECT_THROW(validate_trajectory({"a", {{0, 0, 0}}}), DataError);
  EXPECT_THROW(validate_trajectory({"a", {{0, 0, 5}, {0, 0, 5}}}), DataError);
  EXPECT_THROW(validate_trajectory({"a", {{91, 0, 0}, {0, 0, 1}}}), DataError);
  EXPECT_THROW(validate_trajectory({"a", {{0, 181, 0}, {0, 0, 1}}}), DataError);
  EXPECT_THROW(validate_trajectory({"a", {{0, 0, -1}, {0, 0, 1}}}), DataError);
  EXPECT_NO_THROW(validate_trajectory({"a", {{0, 0, 0}, {1, 1, 1}}}));
  try {
    validate_trajectory({"x", {{0, 0, 1}, {0, 0, 2}, {0, 0, 2}}});
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
  }
}

TEST(Geo, CenterOfUniformSquare) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Trajectory t{"u", {}};
  for (int i = 0; i < 1000; ++i) t.points.push_back({u(rng), u(rng), i});
  const auto p = compute_center(std::span<const Trajectory>(&t, 1));
  EXPECT_NEAR(p.scale_lat, 1.0 / std::sqrt(12.0), 0.03);
  EXPECT_NEAR(p.scale_lon, 1.0 / std::sqrt(12.0), 0.03);
}

TEST(Geo, CenterMatchesTwoPassOracle) {
  std::mt19937_64 rng(5);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 20; ++i) trajs.push_back(random_trajectory(rng, 30));
  double n = 0, slat = 0, slon = 0;
  for (auto& t : trajs)
    for (auto& p : t.points) { slat += p.lat; slon += p.lon; ++n; }
  const double mlat = slat / n, mlon = slon / n;
  double vlat = 0, vlon = 0;
  for (auto& t : trajs)
    for (auto& p : t.points) {
      vlat += (p.lat - mlat) * (p.lat - mlat);
      vlon += (p.lon - mlon) * (p.lon - mlon);
    }
  const auto c = compute_center(trajs);
  EXPECT_NEAR(c.center_lat, mlat, 1e-9);
  EXPECT_NEAR(c.center_lon, mlon, 1e-9);
  EXPECT_NEAR(c.scale_lat, std::sqrt(vlat / n), 1e-9);
  EXPECT_NEAR(c.scale_lon, std::sqrt(vlon / n), 1e-9);
  EXPECT_EQ(c.dt_scale, 60.0);
}

TEST(Geo, DegenerateScaleIsFloored) {
  Trajectory t{"s", {{10, 20, 0}, {10, 20, 1}}};
  const auto c = compute_center(std::span<const Trajectory>(&t, 1));
  EXPECT_EQ(c.scale_lat, kMinScale);
  EXPECT_GT(c.scale_lon, 0.0);
}

TEST(Geo, NormalizeRoundTrip) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180), s(1e-3, 10);
  for (int i = 0; i < 1000; ++i) {
    const NormalizationParams p{lat(rng), lon(rng), s(rng), s(rng), 60.0};
    const TrajPoint q{lat(rng), lon(rng), 0};
    const auto back = denormalize(normalize(q, p), p);
    EXPECT_NEAR(back[0], q.lat, 1e-9);
    EXPECT_NEAR(back[1], q.lon, 1e-9);
  }
}

TEST(Geo, TranslationCovariance) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Trajectory> trajs{random_trajectory(rng, 40), random_trajectory(rng, 25)};
    for (auto& t : trajs)
      for (auto& p : t.points) p.lat = std::clamp(p.lat, -80.0, 80.0);
    std::vector<Trajectory> moved = trajs;
    for (auto& t : moved)
      for (auto& p : t.points) { p.lat += 3.25; p.lon -= 7.5; }
    const auto a = compute_center(trajs), b = compute_center(moved);
    for (std::size_t k = 0; k < trajs.size(); ++k)
      for (std::size_t i = 0; i < trajs[k].points.size(); ++i) {
        const auto fa = normalize(trajs[k].points[i], a), fb = normalize(moved[k].points[i], b);
        EXPECT_NEAR(fa.x, fb.x, 1e-9);
        EXPECT_NEAR(fa.y, fb.y, 1e-9);
      }
  }
}

TEST(Geo, CalendarExamples) {
  EXPECT_EQ(decompose_time(0), (CalendarTime{3, 0, 0, 0}));
  EXPECT_EQ(decompose_time(86400), (CalendarTime{4, 0, 0, 0}));
  EXPECT_EQ(decompose_time(1'700'000'000), (CalendarTime{1, 22, 13, 20}));
  EXPECT_THROW(decompose_time(-1), DataError);
}

TEST(Geo, CalendarAgreesWithLibc) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::int64_t> t(0, (std::int64_t{1} << 31) - 1);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t ts = t(rng);
    const std::time_t tt = static_cast<std::time_t>(ts);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    const CalendarTime c = decompose_time(ts);
    EXPECT_EQ(c.dow, (tm.tm_wday + 6) % 7);
    EXPECT_EQ(c.hod, tm.tm_hour);
    EXPECT_EQ(c.moh, tm.tm_min);
    EXPECT_EQ(c.soh, tm.tm_sec);
  }
}

TEST(Geo, ScaledCalendarInUnitInterval) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::int64_t> t(1'672'531'200, 1'672'531'200 + 365 * 86400);
  const NormalizationParams p;
  for (int i = 0; i < 5000; ++i) {
    const auto f = point_features({0, 0, t(rng)}, p);
    for (double v : f.calendar_scaled) {
      EXPECT_GE(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Geo, DeltaExamples) {
  const Trajectory t{"d", {{1.0, 2.0, 100}, {1.5, 2.25, 160}, {1.25, 2.5, 175}, {2.0, 3.0, 300}}};
  const auto ds = delta_encode(t);
  ASSERT_EQ(ds.deltas.size(), 3u);
  EXPECT_EQ(ds.deltas[0], (Delta{0.5, 0.25, 60}));
  EXPECT_EQ(ds.deltas[1], (Delta{-0.25, 0.25, 15}));
  EXPECT_EQ(ds.deltas[2], (Delta{0.75, 0.5, 125}));
  EXPECT_EQ(delta_decode(ds), t);
  DeltaSequence bad = ds;
  bad.deltas[1].dt = 0;
  EXPECT_THROW(delta_decode(bad), DataError);
}

TEST(Geo, DeltaRoundTripProperty) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = random_trajectory(rng, 2 + rng() % 200);
    const auto ds = delta_encode(t);
    ASSERT_EQ(ds.deltas.size(), t.points.size() - 1);
    const auto back = delta_decode(ds);
    ASSERT_EQ(back.points.size(), t.points.size());
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      ASSERT_EQ(back.points[i].t, t.points[i].t);
      ASSERT_NEAR(back.points[i].lat, t.points[i].lat, 1e-12);
      ASSERT_NEAR(back.points[i].lon, t.points[i].lon, 1e-12);
    }
  }
}

TEST(Geo, FeaturizeLayout) {
  const NormalizationParams p{50.0, 4.0, 0.5, 0.25, 60.0};
  const Trajectory t{"f", {{50.5, 4.5, 0}, {51.0, 4.0, 90}}};
  const auto fs = featurize(t, p);
  ASSERT_EQ(fs.features.shape(), (Shape{2, feature::kWidth}));
  EXPECT_EQ(fs.features.at(0, feature::kX), 2.0);
  EXPECT_EQ(fs.features.at(0, feature::kY), 1.0);
  EXPECT_EQ(fs.features.at(0, feature::kDow), 3.0 / 7.0);
  EXPECT_EQ(fs.features.at(0, feature::kDt), 0.0);
  EXPECT_EQ(fs.features.at(1, feature::kMinute), 1.0 / 60.0);
  EXPECT_EQ(fs.features.at(1, feature::kSecond), 30.0 / 60.0);
  EXPECT_EQ(fs.features.at(1, feature::kDt), 1.5);
  const auto nd = normalize_delta(fs.deltas.deltas[0], p);
  EXPECT_EQ(nd[target::kDlat], 1.0);
  EXPECT_EQ(nd[target::kDlon], -2.0);
  EXPECT_EQ(nd[target::kDt], 1.5);
}

}  // namespace
