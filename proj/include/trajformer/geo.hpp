#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajformer/tensor.hpp"

namespace trajformer {

struct TrajPoint {
  double lat = 0.0;   // degrees, [-90, 90]
  double lon = 0.0;   // degrees, [-180, 180]
  std::int64_t t = 0; // unix seconds, UTC

  friend bool operator==(const TrajPoint&, const TrajPoint&) = default;
};

struct Trajectory {
  std::string id;
  std::vector<TrajPoint> points;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Throws DataError unless the trajectory has >= 2 in-bounds points with
/// strictly increasing timestamps.
void validate_trajectory(const Trajectory& traj);

/// Frame in which coordinates are fed to the model. `dt_scale` is the fixed
/// divisor applied to time deltas (seconds per unit).
struct NormalizationParams {
  double center_lat = 0.0;
  double center_lon = 0.0;
  double scale_lat = 1.0;
  double scale_lon = 1.0;
  double dt_scale = 60.0;

  friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;
};

inline constexpr double kMinScale = 1e-6;

/// Mean and (population) standard deviation of all points, floored at kMinScale.
NormalizationParams compute_center(std::span<const Trajectory> trajs);

/// Running accumulator for compute_center over a stream of trajectories.
class CenterAccumulator {
 public:
  void add(const Trajectory& traj);
  std::size_t count() const { return n_; }
  NormalizationParams finish(double dt_scale = 60.0) const;

 private:
  // Welford updates keep the variance stable for large coordinate offsets.
  std::size_t n_ = 0;
  double mean_lat_ = 0.0, mean_lon_ = 0.0;
  double m2_lat_ = 0.0, m2_lon_ = 0.0;
};

struct NormalizedXY {
  double x = 0.0;  // longitude offset
  double y = 0.0;  // latitude offset
};

NormalizedXY normalize(const TrajPoint& p, const NormalizationParams& params);
/// Inverse of normalize: returns {lat, lon}.
std::array<double, 2> denormalize(NormalizedXY xy, const NormalizationParams& params);

struct CalendarTime {
  int dow = 0;  // Monday = 0
  int hod = 0;
  int moh = 0;
  int soh = 0;

  friend bool operator==(const CalendarTime&, const CalendarTime&) = default;
};

/// UTC calendar decomposition of a non-negative unix timestamp.
CalendarTime decompose_time(std::int64_t t);

struct PointFeatures {
  NormalizedXY xy;
  CalendarTime calendar;
  // Calendar fields scaled to [0, 1): dow/7, hod/24, moh/60, soh/60.
  std::array<double, 4> calendar_scaled{};
};

PointFeatures point_features(const TrajPoint& p, const NormalizationParams& params);

struct Delta {
  double dlat = 0.0;
  double dlon = 0.0;
  std::int64_t dt = 0;

  friend bool operator==(const Delta&, const Delta&) = default;
};

struct DeltaSequence {
  std::string id;
  TrajPoint origin;
  std::vector<Delta> deltas;
};

DeltaSequence delta_encode(const Trajectory& traj);
/// Cumulative reconstruction from the origin. Throws DataError on dt <= 0.
Trajectory delta_decode(const DeltaSequence& ds);

/// Column layout of the per-point feature matrix.
namespace feature {
inline constexpr std::size_t kX = 0;
inline constexpr std::size_t kY = 1;
inline constexpr std::size_t kDow = 2;
inline constexpr std::size_t kHour = 3;
inline constexpr std::size_t kMinute = 4;
inline constexpr std::size_t kSecond = 5;
inline constexpr std::size_t kDt = 6;
inline constexpr std::size_t kWidth = 7;
inline constexpr std::size_t kSpatialBegin = 0, kSpatialWidth = 2;
inline constexpr std::size_t kTemporalBegin = 2, kTemporalWidth = 5;
}  // namespace feature

/// Column layout of delta targets and model outputs.
namespace target {
inline constexpr std::size_t kDlat = 0;
inline constexpr std::size_t kDlon = 1;
inline constexpr std::size_t kDt = 2;
inline constexpr std::size_t kWidth = 3;
}  // namespace target

struct FeatureSequence {
  Tensor features;  // [S, 7]
  DeltaSequence deltas;
};

FeatureSequence featurize(const Trajectory& traj, const NormalizationParams& params);

/// Delta in model units: (dlat/scale_lat, dlon/scale_lon, dt/dt_scale).
std::array<double, 3> normalize_delta(const Delta& d, const NormalizationParams& params);

}  // namespace trajformer
