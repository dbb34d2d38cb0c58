#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajformer/data.hpp"
#include "trajformer/geo.hpp"
#include "trajformer/masking.hpp"
#include "trajformer/model_config.hpp"

namespace trajformer {

inline constexpr double kEarthRadiusM = 6'371'000.0;

/// Great-circle distance in meters between (lat, lon) pairs in degrees.
double haversine(double lat1, double lon1, double lat2, double lon2);

struct MetricsReport {
  double ade_m = 0.0;
  double fde_m = 0.0;
  double time_mae_s = 0.0;
  std::size_t n_points = 0;
  std::size_t n_traj = 0;
  std::string objective;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json to_json(const MetricsReport& r);
/// Header line plus one row: ade_m,fde_m,time_mae_s,n_points,n_traj,objective.
std::string to_csv(const MetricsReport& r);

/// Anything that maps batches to next-step deltas in model units.
class Predictor {
 public:
  virtual ~Predictor() = default;
  /// Output rows aligned with supervision(batch, masks, mode, patch_len()).
  virtual Tensor predict_batch(const Batch& batch, std::span<const MaskSpec> masks) const = 0;
  virtual const NormalizationParams& normalization() const = 0;
  virtual std::size_t max_seq() const = 0;
  virtual std::size_t patch_len() const { return 1; }
  virtual bool causal() const { return true; }

  /// Delta from the last point of `running` to the next one, in model units.
  std::array<double, 3> predict_next(const Trajectory& running) const;
};

class ModelPredictor final : public Predictor {
 public:
  ModelPredictor(ModelConfig cfg, ParameterSet params, NormalizationParams norm);

  Tensor predict_batch(const Batch& batch, std::span<const MaskSpec> masks) const override;
  const NormalizationParams& normalization() const override { return norm_; }
  std::size_t max_seq() const override { return cfg_.max_seq; }
  std::size_t patch_len() const override { return cfg_.patch_len; }
  bool causal() const override { return cfg_.attention_mode == AttentionMode::causal; }

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  NormalizationParams norm_;
};

/// Extends `prefix` by `horizon` predicted points. Predicted Δt is rounded to
/// whole seconds and floored at 1 s, so timestamps stay strictly increasing.
/// Throws ConfigError when prefix + horizon exceeds the model's max_seq.
std::vector<TrajPoint> rollout(const Predictor& model, const Trajectory& prefix,
                               std::size_t horizon);

enum class EvalMode { next_step, infill, rollout };

struct EvalOptions {
  EvalMode mode = EvalMode::next_step;
  std::size_t horizon = 5;      // rollout only
  double mask_ratio = kDefaultMaskRatio;
  std::uint64_t seed = 0;       // infill masks
  std::size_t batch_size = 16;
  std::size_t max_len = 0;      // 0: the model's max_seq
};

std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

/// Metrics over a trajectory stream. With `dataset_norm` given, a frame that
/// differs from the model's is a DataError. Rollout uses the last `horizon`
/// points of each trajectory as ground truth and skips rows too short for it.
MetricsReport evaluate(const Predictor& model, TrajectorySource source, const EvalOptions& opts,
                       const NormalizationParams* dataset_norm = nullptr);

}  // namespace trajformer
