#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajformer/data.hpp"
#include "trajformer/geo.hpp"
#include "trajformer/masking.hpp"
#include "trajformer/model_config.hpp"
#include "trajformer/tensor.hpp"

namespace trajformer {

enum class Objective { next_step, infill, alternating };
enum class LossKind { mse, huber };

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::size_t seq_len = 64;     // longer trajectories are truncated
  std::size_t max_steps = 0;    // 0: no cap beyond `epochs`
  Objective objective = Objective::next_step;
  double mask_ratio = 0.15;
  LossKind loss = LossKind::mse;
  double huber_delta = 1.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string to_string(Objective o);
std::string to_string(LossMode m);

// ---- loss -----------------------------------------------------------------

double huber(double residual, double delta);

struct LossValue {
  Var value;                  // scalar
  std::size_t supervised = 0; // number of weight-1 entries
  bool unsupervised() const { return supervised == 0; }
};

/// Weighted mean over the weight-1 entries of the per-element MSE or Huber
/// penalty. Zero-weight entries receive exactly zero gradient. Returns 0 when
/// nothing is supervised.
LossValue loss(Var pred, const Tensor& targets, const Tensor& weights, LossKind kind,
               double huber_delta = 1.0);

/// Targets and weights aligned with the model's output rows. With patching,
/// output row p supervises the step after the last point of patch p.
std::pair<Tensor, Tensor> supervision(const Batch& batch, std::span<const MaskSpec> masks,
                                      LossMode mode, std::size_t patch_len);

// ---- optimizer ----------------------------------------------------------------

struct AdamState {
  GradientSet m;
  GradientSet v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam; parameters missing from `grads` are left untouched.
void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg);

double global_norm(const GradientSet& grads);
/// Rescales all gradients by clip_norm/norm when the global L2 norm exceeds
/// clip_norm. Returns the norm before clipping.
double clip_gradients(GradientSet& grads, double clip_norm);

// ---- training loop --------------------------------------------------------------

struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;      // "train" | "val"
  std::string objective;  // "next_step" | "infill"
  double loss = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

std::string metrics_csv(std::span<const MetricRecord> history);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  LossMode mode = LossMode::next_step;
  std::size_t supervised = 0;
  bool applied = false;  // false when nothing was supervised
};

struct Checkpoint;

/// Owns the model parameters, optimizer state and the mask-sampling RNG.
/// Single-threaded.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig cfg, NormalizationParams norm, ParameterSet params);
  Trainer(ModelConfig model, TrainConfig cfg, NormalizationParams norm);
  /// Resumes from a checkpoint; `cfg` overrides the stored training config.
  explicit Trainer(const Checkpoint& ckpt, std::optional<TrainConfig> cfg = std::nullopt);

  /// One optimization step on `batch`: masks (per objective), forward, loss,
  /// backward, clip, Adam. Throws NumericError on a non-finite loss.
  StepResult step(const Batch& batch);

  /// Supervised loss over a stream without updating anything. Infill masks
  /// are seeded per trajectory position so the value is batch-size invariant.
  double evaluate_loss(TrajectorySource source, LossMode mode, std::uint64_t seed) const;

  using SourceFactory = std::function<TrajectorySource()>;
  using StepCallback = std::function<void(std::uint64_t step, const StepResult&)>;

  /// Epoch loop; resumes mid-epoch when constructed from a checkpoint. Stops
  /// early once `max_steps` optimizer steps have been taken in total.
  void train(const SourceFactory& train_data, const SourceFactory& val_data = nullptr,
             const StepCallback& on_step = nullptr);

  Checkpoint checkpoint() const;

  const ParameterSet& params() const { return params_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const NormalizationParams& normalization() const { return norm_; }
  const AdamState& adam() const { return adam_; }
  const std::vector<MetricRecord>& history() const { return history_; }
  std::uint64_t steps_taken() const { return step_; }

 private:
  LossMode mode_for_step(std::uint64_t step) const;
  std::vector<MaskSpec> sample_masks(const Batch& batch, std::uint64_t infill_index);

  ModelConfig model_;
  TrainConfig cfg_;
  NormalizationParams norm_;
  ParameterSet params_;
  AdamState adam_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
  std::uint64_t infill_steps_ = 0;
  std::size_t epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  double epoch_loss_sum_ = 0.0;
  std::size_t epoch_loss_count_ = 0;
  std::vector<MetricRecord> history_;

  friend Checkpoint make_checkpoint(const Trainer&);
};

/// Masks for evaluation: row b of the stream gets a dimension mask drawn from
/// an RNG seeded by (seed, stream index).
MaskSpec eval_mask(std::size_t length, double ratio, std::uint64_t seed, std::uint64_t index);

// ---- pretext autoencoder --------------------------------------------------------

struct PretextOptions {
  std::size_t d_latent = 64;
  std::size_t steps = 3000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::size_t holdout_every = 5;  // every k-th row is held out
};

struct PretextReport {
  double rmse_raw = 0.0;
  double rmse_with_pe = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Trains project → gelu → reconstruct on `inputs` [N, F] to predict
/// `targets` [N, F'] with full-batch Adam for a fixed step budget. When
/// `positions` is given, the sinusoidal encoding of each row's position is
/// added to the latent pre-activation. Returns held-out RMSE.
double train_autoencoder(const Tensor& inputs, const Tensor& targets,
                         const std::vector<std::size_t>* positions, const PretextOptions& opts);

/// Runs the autoencoder on the rows of all feature sequences, with and
/// without positional encoding.
PretextReport pretext_autoencoder_check(std::span<const Tensor> sequences,
                                        const PretextOptions& opts);

}  // namespace trajformer
