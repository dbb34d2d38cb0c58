#include "trajformer/geo.hpp"

#include <algorithm>
#include <cmath>

namespace trajformer {

void validate_trajectory(const Trajectory& traj) {
  if (traj.points.size() < 2) {
    throw DataError("trajectory '" + traj.id + "' has fewer than 2 points");
  }
  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const auto& p = traj.points[i];
    if (!(p.lat >= -90.0 && p.lat <= 90.0) || !(p.lon >= -180.0 && p.lon <= 180.0) || p.t < 0) {
      throw DataError("trajectory '" + traj.id + "': point " + std::to_string(i) +
                      " out of range");
    }
    if (i > 0 && p.t <= traj.points[i - 1].t) {
      throw DataError("trajectory '" + traj.id + "': time not strictly increasing at index " +
                      std::to_string(i));
    }
  }
}

void CenterAccumulator::add(const Trajectory& traj) {
  for (const auto& p : traj.points) {
    ++n_;
    const double n = static_cast<double>(n_);
    const double dlat = p.lat - mean_lat_;
    const double dlon = p.lon - mean_lon_;
    mean_lat_ += dlat / n;
    mean_lon_ += dlon / n;
    m2_lat_ += dlat * (p.lat - mean_lat_);
    m2_lon_ += dlon * (p.lon - mean_lon_);
  }
}

NormalizationParams CenterAccumulator::finish(double dt_scale) const {
  if (n_ == 0) throw DataError("cannot compute a normalization center from zero points");
  const double n = static_cast<double>(n_);
  NormalizationParams params;
  params.center_lat = mean_lat_;
  params.center_lon = mean_lon_;
  params.scale_lat = std::max(std::sqrt(m2_lat_ / n), kMinScale);
  params.scale_lon = std::max(std::sqrt(m2_lon_ / n), kMinScale);
  params.dt_scale = dt_scale;
  return params;
}

NormalizationParams compute_center(std::span<const Trajectory> trajs) {
  CenterAccumulator acc;
  for (const auto& t : trajs) acc.add(t);
  return acc.finish();
}

NormalizedXY normalize(const TrajPoint& p, const NormalizationParams& params) {
  return {(p.lon - params.center_lon) / params.scale_lon,
          (p.lat - params.center_lat) / params.scale_lat};
}

std::array<double, 2> denormalize(NormalizedXY xy, const NormalizationParams& params) {
  return {xy.y * params.scale_lat + params.center_lat, xy.x * params.scale_lon + params.center_lon};
}

CalendarTime decompose_time(std::int64_t t) {
  if (t < 0) throw DataError("negative timestamp " + std::to_string(t));
  const std::int64_t days = t / 86400;
  const std::int64_t secs = t % 86400;
  CalendarTime c;
  c.dow = static_cast<int>((days + 3) % 7);  // 1970-01-01 was a Thursday
  c.hod = static_cast<int>(secs / 3600);
  c.moh = static_cast<int>((secs % 3600) / 60);
  c.soh = static_cast<int>(secs % 60);
  return c;
}

PointFeatures point_features(const TrajPoint& p, const NormalizationParams& params) {
  PointFeatures f;
  f.xy = normalize(p, params);
  f.calendar = decompose_time(p.t);
  f.calendar_scaled = {f.calendar.dow / 7.0, f.calendar.hod / 24.0, f.calendar.moh / 60.0,
                       f.calendar.soh / 60.0};
  return f;
}

DeltaSequence delta_encode(const Trajectory& traj) {
  if (traj.points.empty()) throw DataError("cannot delta-encode an empty trajectory");
  DeltaSequence ds;
  ds.id = traj.id;
  ds.origin = traj.points.front();
  ds.deltas.reserve(traj.points.size() - 1);
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    const auto& a = traj.points[i - 1];
    const auto& b = traj.points[i];
    if (b.t <= a.t) {
      throw DataError("trajectory '" + traj.id + "': time not strictly increasing at index " +
                      std::to_string(i));
    }
    ds.deltas.push_back({b.lat - a.lat, b.lon - a.lon, b.t - a.t});
  }
  return ds;
}

namespace {

// Neumaier-compensated running sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      carry += (sum - t) + v;
    } else {
      carry += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

Trajectory delta_decode(const DeltaSequence& ds) {
  Trajectory traj;
  traj.id = ds.id;
  traj.points.reserve(ds.deltas.size() + 1);
  traj.points.push_back(ds.origin);
  CompensatedSum lat{ds.origin.lat};
  CompensatedSum lon{ds.origin.lon};
  std::int64_t t = ds.origin.t;
  for (std::size_t i = 0; i < ds.deltas.size(); ++i) {
    const auto& d = ds.deltas[i];
    if (d.dt <= 0) {
      throw DataError("delta " + std::to_string(i) + " has non-positive dt " +
                      std::to_string(d.dt));
    }
    lat.add(d.dlat);
    lon.add(d.dlon);
    t += d.dt;
    traj.points.push_back({lat.value(), lon.value(), t});
  }
  return traj;
}

std::array<double, 3> normalize_delta(const Delta& d, const NormalizationParams& params) {
  return {d.dlat / params.scale_lat, d.dlon / params.scale_lon,
          static_cast<double>(d.dt) / params.dt_scale};
}

FeatureSequence featurize(const Trajectory& traj, const NormalizationParams& params) {
  FeatureSequence out;
  out.deltas = delta_encode(traj);
  const std::size_t n = traj.points.size();
  out.features = Tensor({n, feature::kWidth});
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = point_features(traj.points[i], params);
    auto& m = out.features;
    m.at(i, feature::kX) = f.xy.x;
    m.at(i, feature::kY) = f.xy.y;
    m.at(i, feature::kDow) = f.calendar_scaled[0];
    m.at(i, feature::kHour) = f.calendar_scaled[1];
    m.at(i, feature::kMinute) = f.calendar_scaled[2];
    m.at(i, feature::kSecond) = f.calendar_scaled[3];
    m.at(i, feature::kDt) =
        i == 0 ? 0.0 : static_cast<double>(out.deltas.deltas[i - 1].dt) / params.dt_scale;
  }
  return out;
}

}  // namespace trajformer
