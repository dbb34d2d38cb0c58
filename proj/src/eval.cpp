#include "trajformer/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "trajformer/embedding.hpp"
#include "trajformer/error.hpp"
#include "trajformer/training.hpp"
#include "trajformer/transformer.hpp"

namespace trajformer {

double haversine(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double p1 = lat1 * rad, p2 = lat2 * rad;
  const double dp = (lat2 - lat1) * rad, dl = (lon2 - lon1) * rad;
  const double a = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"ade_m", r.ade_m},       {"fde_m", r.fde_m},   {"time_mae_s", r.time_mae_s},
          {"n_points", r.n_points}, {"n_traj", r.n_traj}, {"objective", r.objective}};
}

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::string to_csv(const MetricsReport& r) {
  return "ade_m,fde_m,time_mae_s,n_points,n_traj,objective\n" + shortest(r.ade_m) + ',' +
         shortest(r.fde_m) + ',' + shortest(r.time_mae_s) + ',' + std::to_string(r.n_points) +
         ',' + std::to_string(r.n_traj) + ',' + r.objective + '\n';
}

std::array<double, 3> Predictor::predict_next(const Trajectory& running) const {
  const Trajectory one[] = {running};
  const Batch batch = make_batch(one, running.points.size(), normalization());
  const Tensor out = predict_batch(batch, {});
  const std::size_t row = patch_count(running.points.size(), patch_len()) - 1;
  const std::size_t w = target::kWidth;
  return {out[row * w + 0], out[row * w + 1], out[row * w + 2]};
}

ModelPredictor::ModelPredictor(ModelConfig cfg, ParameterSet params, NormalizationParams norm)
    : cfg_(cfg), params_(std::move(params)), norm_(norm) {
  cfg_.validate();
}

Tensor ModelPredictor::predict_batch(const Batch& batch, std::span<const MaskSpec> masks) const {
  return predict(batch, masks, params_, cfg_);
}

std::vector<TrajPoint> rollout(const Predictor& model, const Trajectory& prefix,
                               std::size_t horizon) {
  if (horizon == 0) return {};
  if (prefix.points.size() < 2) throw DataError("rollout prefix needs at least 2 points");
  if (prefix.points.size() + horizon > model.max_seq()) {
    throw ConfigError("rollout of " + std::to_string(horizon) + " steps from a " +
                      std::to_string(prefix.points.size()) + "-point prefix exceeds max_seq " +
                      std::to_string(model.max_seq()));
  }
  const auto& norm = model.normalization();
  Trajectory running = prefix;
  std::vector<TrajPoint> out;
  out.reserve(horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    const auto d = model.predict_next(running);
    if (!std::isfinite(d[0]) || !std::isfinite(d[1]) || !std::isfinite(d[2])) {
      throw NumericError("non-finite prediction at rollout step " + std::to_string(k));
    }
    const TrajPoint& last = running.points.back();
    TrajPoint next;
    next.lat = std::clamp(last.lat + d[target::kDlat] * norm.scale_lat, -90.0, 90.0);
    next.lon = std::clamp(last.lon + d[target::kDlon] * norm.scale_lon, -180.0, 180.0);
    const double dt = std::round(d[target::kDt] * norm.dt_scale);
    next.t = last.t + (dt >= 1.0 ? static_cast<std::int64_t>(dt) : 1);
    running.points.push_back(next);
    out.push_back(next);
  }
  return out;
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::next_step: return "next_step";
    case EvalMode::infill: return "infill";
    case EvalMode::rollout: return "rollout";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "next_step") return EvalMode::next_step;
  if (s == "infill") return EvalMode::infill;
  if (s == "rollout") return EvalMode::rollout;
  throw ConfigError("unknown eval mode '" + s + "'");
}

namespace {

struct Accumulator {
  double spatial_sum = 0.0;
  std::size_t spatial_n = 0;
  double time_sum = 0.0;
  std::size_t time_n = 0;
  double final_sum = 0.0;
  std::size_t final_n = 0;
  std::size_t points = 0;
  std::size_t traj = 0;
};

// Per-trajectory partial sums, folded into the totals in stream order.
struct TrajErrors {
  double spatial_sum = 0.0;
  std::size_t spatial_n = 0;
  double time_sum = 0.0;
  std::size_t time_n = 0;
  double final_err = 0.0;
  std::size_t points = 0;

  void fold_into(Accumulator& acc) const {
    if (points == 0) return;
    acc.spatial_sum += spatial_sum;
    acc.spatial_n += spatial_n;
    acc.time_sum += time_sum;
    acc.time_n += time_n;
    if (spatial_n > 0) {
      acc.final_sum += final_err;
      ++acc.final_n;
    }
    acc.points += points;
    ++acc.traj;
  }
};

}  // namespace

MetricsReport evaluate(const Predictor& model, TrajectorySource source, const EvalOptions& opts,
                       const NormalizationParams* dataset_norm) {
  const NormalizationParams& norm = model.normalization();
  if (dataset_norm != nullptr && !(*dataset_norm == norm)) {
    throw DataError("dataset normalization does not match the checkpoint's frame");
  }
  const std::size_t patch = model.patch_len();
  if (opts.mode == EvalMode::infill && patch > 1) {
    throw ConfigError("infill evaluation needs patch_len = 1");
  }
  if (opts.mode == EvalMode::rollout) {
    if (!model.causal()) throw ConfigError("rollout needs a causal model");
    if (opts.horizon == 0 || opts.horizon + 2 > model.max_seq()) {
      throw ConfigError("rollout horizon must lie in [1, max_seq - 2]");
    }
  }
  const std::size_t max_len = opts.max_len > 0 ? opts.max_len : model.max_seq();
  BatchStream stream(std::move(source), opts.batch_size, max_len, norm);
  Accumulator acc;
  std::uint64_t index = 0;
  const std::size_t w = target::kWidth;

  while (auto batch = stream.next()) {
    if (opts.mode == EvalMode::rollout) {
      for (const auto& traj : batch->trajectories) {
        const std::size_t len = traj.points.size();
        if (len < opts.horizon + 2) continue;
        const std::size_t cut = len - opts.horizon;
        const std::size_t budget = model.max_seq() - opts.horizon;
        Trajectory prefix{traj.id, {traj.points.begin() + (cut > budget ? cut - budget : 0),
                                    traj.points.begin() + cut}};
        const auto suffix = rollout(model, prefix, opts.horizon);
        TrajErrors e;
        TrajPoint prev_pred = prefix.points.back(), prev_true = prefix.points.back();
        for (std::size_t k = 0; k < opts.horizon; ++k) {
          const TrajPoint& truth = traj.points[cut + k];
          e.final_err = haversine(suffix[k].lat, suffix[k].lon, truth.lat, truth.lon);
          e.spatial_sum += e.final_err;
          ++e.spatial_n;
          e.time_sum += std::abs(static_cast<double>((suffix[k].t - prev_pred.t) -
                                                     (truth.t - prev_true.t)));
          ++e.time_n;
          ++e.points;
          prev_pred = suffix[k];
          prev_true = truth;
        }
        e.fold_into(acc);
      }
      index += batch->size();
      continue;
    }

    std::vector<MaskSpec> masks;
    if (opts.mode == EvalMode::infill) {
      for (std::size_t b = 0; b < batch->size(); ++b) {
        masks.push_back(eval_mask(batch->lengths[b] - 1, opts.mask_ratio, opts.seed, index + b));
      }
    }
    index += batch->size();
    const LossMode mode = opts.mode == EvalMode::infill ? LossMode::infill : LossMode::next_step;
    const Tensor pred = model.predict_batch(*batch, masks);
    const auto [targets, weights] = supervision(*batch, masks, mode, patch);
    if (pred.shape() != targets.shape()) {
      throw ShapeError("predictor returned " + shape_str(pred.shape()) + ", expected " +
                       shape_str(targets.shape()));
    }
    const std::size_t rows = targets.dim(1);
    for (std::size_t b = 0; b < batch->size(); ++b) {
      const auto& traj = batch->trajectories[b];
      const std::size_t len = batch->lengths[b];
      TrajErrors e;
      for (std::size_t r = 0; r < patch_count(len, patch); ++r) {
        const std::size_t at = (b * rows + r) * w;
        const bool spatial = weights[at + target::kDlat] != 0.0 || weights[at + target::kDlon] != 0.0;
        const bool temporal = weights[at + target::kDt] != 0.0;
        if (!spatial && !temporal) continue;
        const std::size_t pos = patch == 1 ? r : std::min((r + 1) * patch, len) - 1;
        const TrajPoint& anchor = traj.points[pos];
        ++e.points;
        if (spatial) {
          // Reference and prediction go through the same reconstruction.
          const double plat = anchor.lat + pred[at + target::kDlat] * norm.scale_lat;
          const double plon = anchor.lon + pred[at + target::kDlon] * norm.scale_lon;
          const double tlat = anchor.lat + targets[at + target::kDlat] * norm.scale_lat;
          const double tlon = anchor.lon + targets[at + target::kDlon] * norm.scale_lon;
          e.final_err = haversine(plat, plon, tlat, tlon);
          e.spatial_sum += e.final_err;
          ++e.spatial_n;
        }
        if (temporal) {
          e.time_sum += std::abs(pred[at + target::kDt] * norm.dt_scale -
                                 targets[at + target::kDt] * norm.dt_scale);
          ++e.time_n;
        }
      }
      e.fold_into(acc);
    }
  }

  if (acc.points == 0) throw DataError("no positions to evaluate");
  MetricsReport r;
  r.ade_m = acc.spatial_n > 0 ? acc.spatial_sum / static_cast<double>(acc.spatial_n) : 0.0;
  r.fde_m = acc.final_n > 0 ? acc.final_sum / static_cast<double>(acc.final_n) : 0.0;
  r.time_mae_s = acc.time_n > 0 ? acc.time_sum / static_cast<double>(acc.time_n) : 0.0;
  r.n_points = acc.points;
  r.n_traj = acc.traj;
  r.objective = opts.mode == EvalMode::rollout
                    ? "rollout(" + std::to_string(opts.horizon) + ")"
                    : to_string(opts.mode);
  return r;
}

}  // namespace trajformer
