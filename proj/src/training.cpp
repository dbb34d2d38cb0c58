#include "trajformer/training.hpp"

#include <cmath>
#include <sstream>

#include "trajformer/checkpoint.hpp"
#include "trajformer/embedding.hpp"
#include "trajformer/transformer.hpp"

namespace trajformer {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr >= 0.0)) fail("lr must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    fail("betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) fail("eps must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (seq_len < 2) fail("seq_len must be at least 2");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  if (!(huber_delta > 0.0)) fail("huber_delta must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in [0, 1)");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::next_step: return "next_step";
    case Objective::infill: return "infill";
    case Objective::alternating: return "alternating";
  }
  return "?";
}

std::string to_string(LossMode m) { return m == LossMode::next_step ? "next_step" : "infill"; }

// ---- loss -----------------------------------------------------------------------

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

LossValue loss(Var pred, const Tensor& targets, const Tensor& weights, LossKind kind,
               double huber_delta) {
  const auto& pv = pred.value();
  if (pv.shape() != targets.shape() || pv.shape() != weights.shape()) {
    throw ShapeError("loss: prediction " + shape_str(pv.shape()) + ", targets " +
                     shape_str(targets.shape()) + ", weights " + shape_str(weights.shape()));
  }
  double weight_sum = 0.0;
  std::size_t supervised = 0;
  for (double w : weights.data()) {
    weight_sum += w;
    supervised += w != 0.0 ? 1 : 0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double r = pv[i] - targets[i];
    total += weights[i] * (kind == LossKind::mse ? r * r : huber(r, huber_delta));
  }
  const double denom = supervised > 0 ? weight_sum : 1.0;
  const Var ins[] = {pred};
  Var value = pred.tape->record(
      Tensor::scalar(total / denom), ins,
      [pred, targets, weights, kind, huber_delta, denom](Tape& t, std::span<const double> g) {
        double* dp = t.grad_buffer(pred);
        if (dp == nullptr) return;
        const auto& pv = t.value(pred);
        for (std::size_t i = 0; i < pv.size(); ++i) {
          if (weights[i] == 0.0) continue;
          const double r = pv[i] - targets[i];
          double dl = 0.0;
          if (kind == LossKind::mse) {
            dl = 2.0 * r;
          } else {
            dl = std::abs(r) <= huber_delta ? r : (r > 0.0 ? huber_delta : -huber_delta);
          }
          dp[i] += g[0] * weights[i] * dl / denom;
        }
      });
  return {value, supervised};
}

std::pair<Tensor, Tensor> supervision(const Batch& batch, std::span<const MaskSpec> masks,
                                      LossMode mode, std::size_t patch_len) {
  const std::size_t n = batch.size(), s = batch.seq_len(), w = target::kWidth;
  Tensor weights({n, s, w});
  const MaskSpec none{};
  for (std::size_t b = 0; b < n; ++b) {
    const MaskSpec& spec = masks.empty() ? none : masks[b];
    const Tensor row = build_loss_mask(spec, mode, s, batch.lengths[b]);
    std::copy(row.data().begin(), row.data().end(), weights.data().begin() + b * s * w);
  }
  if (patch_len <= 1) return {batch.targets, std::move(weights)};

  const std::size_t sp = patch_count(s, patch_len);
  Tensor pt({n, sp, w});
  Tensor pw({n, sp, w});
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t p = 0; p < patch_count(len, patch_len); ++p) {
      const std::size_t pos = std::min((p + 1) * patch_len, len) - 1;
      for (std::size_t j = 0; j < w; ++j) {
        pt[(b * sp + p) * w + j] = batch.targets[(b * s + pos) * w + j];
        pw[(b * sp + p) * w + j] = weights[(b * s + pos) * w + j];
      }
    }
  }
  return {std::move(pt), std::move(pw)};
}

// ---- optimizer ----------------------------------------------------------------

void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const auto& g = it->second;
    if (g.shape() != p.shape()) throw ShapeError("adam_step: gradient shape mismatch for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape() != p.shape()) m = Tensor(p.shape());
    if (v.shape() != p.shape()) v = Tensor(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double global_norm(const GradientSet& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) sq += v * v;
  return std::sqrt(sq);
}

double clip_gradients(GradientSet& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& v : g.data()) v *= factor;
  }
  return norm;
}

// ---- metrics ------------------------------------------------------------------

std::string metrics_csv(std::span<const MetricRecord> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,split,objective,loss\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.split << ',' << r.objective << ',' << r.loss << '\n';
  }
  return os.str();
}

MaskSpec eval_mask(std::size_t length, double ratio, std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  return sample_dimension_mask(length, ratio, rng);
}

// ---- trainer ------------------------------------------------------------------

namespace {

void check_compatible(const ModelConfig& model, const TrainConfig& cfg) {
  model.validate();
  cfg.validate();
  if (cfg.objective != Objective::next_step && model.patch_len > 1) {
    throw ConfigError("infill objectives need patch_len = 1");
  }
  if (cfg.seq_len > model.max_seq) {
    throw ConfigError("seq_len " + std::to_string(cfg.seq_len) + " exceeds max_seq " +
                      std::to_string(model.max_seq));
  }
}

}  // namespace

Trainer::Trainer(ModelConfig model, TrainConfig cfg, NormalizationParams norm, ParameterSet params)
    : model_(model), cfg_(cfg), norm_(norm), params_(std::move(params)), rng_(cfg.seed) {
  check_compatible(model_, cfg_);
  const auto expected = init_parameters(model_, 0);
  for (const auto& [name, t] : expected) {
    auto it = params_.find(name);
    if (it == params_.end() || it->second.shape() != t.shape()) {
      throw ConfigError("parameter '" + name + "' missing or misshapen for this model config");
    }
  }
}

Trainer::Trainer(ModelConfig model, TrainConfig cfg, NormalizationParams norm)
    : Trainer(model, cfg, norm, init_parameters(model, cfg.seed)) {}

Trainer::Trainer(const Checkpoint& ckpt, std::optional<TrainConfig> cfg)
    : Trainer(ckpt.model, cfg.value_or(ckpt.train), ckpt.norm, ckpt.params) {
  if (ckpt.adam) adam_ = *ckpt.adam;
  if (!ckpt.rng_state.empty()) {
    std::istringstream is(ckpt.rng_state);
    is >> rng_;
    if (!is) throw CheckpointError("corrupt RNG state in checkpoint");
  }
  step_ = ckpt.step;
  infill_steps_ = ckpt.infill_steps;
  epoch_ = ckpt.epoch;
  batch_in_epoch_ = ckpt.batch_in_epoch;
  epoch_loss_sum_ = ckpt.epoch_loss_sum;
  epoch_loss_count_ = ckpt.epoch_loss_count;
  history_ = ckpt.history;
}

LossMode Trainer::mode_for_step(std::uint64_t step) const {
  switch (cfg_.objective) {
    case Objective::next_step: return LossMode::next_step;
    case Objective::infill: return LossMode::infill;
    case Objective::alternating: return step % 2 == 0 ? LossMode::next_step : LossMode::infill;
  }
  return LossMode::next_step;
}

std::vector<MaskSpec> Trainer::sample_masks(const Batch& batch, std::uint64_t infill_index) {
  // Dimension and segment masking alternate across infill batches.
  const bool segment = infill_index % 2 == 1;
  std::vector<MaskSpec> masks;
  masks.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t supervised = batch.lengths[b] - 1;
    masks.push_back(segment && supervised >= 4
                        ? sample_segment_mask(supervised, cfg_.mask_ratio, rng_)
                        : sample_dimension_mask(supervised, cfg_.mask_ratio, rng_));
  }
  return masks;
}

StepResult Trainer::step(const Batch& batch) {
  StepResult result;
  result.mode = mode_for_step(step_);
  std::vector<MaskSpec> masks;
  if (result.mode == LossMode::infill) masks = sample_masks(batch, infill_steps_);

  Tape tape;
  const auto bound = bind_parameters(tape, params_);
  Var pred = model_forward(batch, masks, bound, model_);
  const auto [targets, weights] = supervision(batch, masks, result.mode, model_.patch_len);
  const LossValue lv = loss(pred, targets, weights, cfg_.loss, cfg_.huber_delta);
  result.loss = lv.value.value().item();
  result.supervised = lv.supervised;
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite loss at batch " + std::to_string(batch_in_epoch_) +
                       " of epoch " + std::to_string(epoch_) + " (step " +
                       std::to_string(step_) + ")");
  }
  if (result.mode == LossMode::infill) ++infill_steps_;
  ++step_;
  if (lv.unsupervised()) return result;

  tape.backward(lv.value);
  GradientSet grads = collect_gradients(tape, bound);
  result.grad_norm = clip_gradients(grads, cfg_.clip_norm);
  adam_step(params_, grads, adam_, cfg_);
  result.applied = true;
  return result;
}

double Trainer::evaluate_loss(TrajectorySource source, LossMode mode, std::uint64_t seed) const {
  BatchStream stream(std::move(source), cfg_.batch_size, cfg_.seq_len, norm_);
  double weighted = 0.0;
  std::size_t count = 0;
  std::uint64_t index = 0;
  while (auto batch = stream.next()) {
    std::vector<MaskSpec> masks;
    if (mode == LossMode::infill) {
      for (std::size_t b = 0; b < batch->size(); ++b) {
        masks.push_back(eval_mask(batch->lengths[b] - 1, cfg_.mask_ratio, seed, index + b));
      }
    }
    index += batch->size();
    Tape tape;
    const auto bound = bind_parameters(tape, params_);
    Var pred = model_forward(*batch, masks, bound, model_);
    const auto [targets, weights] = supervision(*batch, masks, mode, model_.patch_len);
    const LossValue lv = loss(pred, targets, weights, cfg_.loss, cfg_.huber_delta);
    weighted += lv.value.value().item() * static_cast<double>(lv.supervised);
    count += lv.supervised;
  }
  return count > 0 ? weighted / static_cast<double>(count) : 0.0;
}

void Trainer::train(const SourceFactory& train_data, const SourceFactory& val_data,
                    const StepCallback& on_step) {
  auto reached_cap = [this] { return cfg_.max_steps > 0 && step_ >= cfg_.max_steps; };
  std::vector<LossMode> modes;
  if (cfg_.objective != Objective::infill) modes.push_back(LossMode::next_step);
  if (cfg_.objective != Objective::next_step) modes.push_back(LossMode::infill);

  bool saw_data = false;
  for (; epoch_ < cfg_.epochs; ++epoch_) {
    BatchStream stream(train_data(), cfg_.batch_size, cfg_.seq_len, norm_);
    std::size_t index = 0;
    while (auto batch = stream.next()) {
      saw_data = true;
      if (index++ < batch_in_epoch_) continue;  // consumed before a resume
      if (reached_cap()) return;
      const StepResult r = step(*batch);
      ++batch_in_epoch_;
      epoch_loss_sum_ += r.loss;
      ++epoch_loss_count_;
      if (on_step) on_step(step_, r);
    }
    if (!saw_data) throw DataError("training data is empty");
    if (epoch_loss_count_ > 0) {
      history_.push_back({epoch_, "train", to_string(cfg_.objective),
                          epoch_loss_sum_ / static_cast<double>(epoch_loss_count_)});
    }
    if (val_data) {
      for (LossMode m : modes) {
        history_.push_back(
            {epoch_, "val", to_string(m), evaluate_loss(val_data(), m, cfg_.seed + epoch_)});
      }
    }
    batch_in_epoch_ = 0;
    epoch_loss_sum_ = 0.0;
    epoch_loss_count_ = 0;
    if (reached_cap()) {
      ++epoch_;
      return;
    }
  }
}

Checkpoint Trainer::checkpoint() const { return make_checkpoint(*this); }

Checkpoint make_checkpoint(const Trainer& trainer) {
  Checkpoint c;
  c.model = trainer.model_;
  c.norm = trainer.norm_;
  c.train = trainer.cfg_;
  c.params = trainer.params_;
  c.adam = trainer.adam_;
  std::ostringstream os;
  os << trainer.rng_;
  c.rng_state = os.str();
  c.step = trainer.step_;
  c.infill_steps = trainer.infill_steps_;
  c.epoch = trainer.epoch_;
  c.batch_in_epoch = trainer.batch_in_epoch_;
  c.epoch_loss_sum = trainer.epoch_loss_sum_;
  c.epoch_loss_count = trainer.epoch_loss_count_;
  c.history = trainer.history_;
  return c;
}

// ---- pretext autoencoder ---------------------------------------------------------

double train_autoencoder(const Tensor& inputs, const Tensor& targets,
                         const std::vector<std::size_t>* positions, const PretextOptions& opts) {
  if (inputs.rank() != 2 || targets.rank() != 2 || inputs.dim(0) != targets.dim(0) ||
      inputs.dim(0) == 0) {
    throw ShapeError("autoencoder: inputs " + shape_str(inputs.shape()) + " and targets " +
                     shape_str(targets.shape()));
  }
  if (positions != nullptr && positions->size() != inputs.dim(0)) {
    throw ShapeError("autoencoder: one position per row required");
  }
  if (opts.d_latent == 0 || opts.holdout_every < 2) throw ConfigError("bad pretext options");
  const std::size_t n = inputs.dim(0), fin = inputs.dim(1), fout = targets.dim(1);
  const std::size_t latent = opts.d_latent;

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < n; ++i) {
    (i % opts.holdout_every == opts.holdout_every - 1 ? test_rows : train_rows).push_back(i);
  }
  if (test_rows.empty() || train_rows.empty()) train_rows = test_rows = {};
  if (train_rows.empty()) {
    for (std::size_t i = 0; i < n; ++i) train_rows.push_back(i);
    test_rows = train_rows;
  }

  auto take = [](const Tensor& src, const std::vector<std::size_t>& rows) {
    const std::size_t w = src.dim(1);
    Tensor out({rows.size(), w});
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(src.data().begin() + rows[r] * w, w, out.data().begin() + r * w);
    return out;
  };
  auto position_table = [&](const std::vector<std::size_t>& rows) {
    std::size_t max_pos = 0;
    for (auto r : rows) max_pos = std::max(max_pos, (*positions)[r]);
    const Tensor table = sinusoidal_table(max_pos + 1, latent);
    Tensor out({rows.size(), latent});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(table.data().begin() + (*positions)[rows[r]] * latent, latent,
                  out.data().begin() + r * latent);
    }
    return out;
  };

  const Tensor x_train = take(inputs, train_rows), y_train = take(targets, train_rows);
  const Tensor x_test = take(inputs, test_rows), y_test = take(targets, test_rows);
  std::optional<Tensor> pe_train, pe_test;
  if (positions != nullptr) {
    pe_train = position_table(train_rows);
    pe_test = position_table(test_rows);
  }

  std::mt19937_64 rng(opts.seed);
  ParameterSet params;
  params["enc.W"] = Tensor::randn({fin, latent}, 1.0 / std::sqrt(static_cast<double>(fin)), rng);
  params["enc.b"] = Tensor::zeros({latent});
  params["dec.W"] =
      Tensor::randn({latent, fout}, 1.0 / std::sqrt(static_cast<double>(latent)), rng);
  params["dec.b"] = Tensor::zeros({fout});

  auto forward = [&](Tape& tape, const BoundParams& p, const Tensor& x,
                     const std::optional<Tensor>& pe) {
    Var h = project(tape.constant(x), p.at("enc.W"), p.at("enc.b"));
    if (pe) h = h + tape.constant(*pe);
    return project(gelu(h), p.at("dec.W"), p.at("dec.b"));
  };

  TrainConfig adam_cfg;
  adam_cfg.lr = opts.lr;
  AdamState state;
  const Tensor all_ones = Tensor::full(y_train.shape(), 1.0);
  for (std::size_t s = 0; s < opts.steps; ++s) {
    Tape tape;
    const auto bound = bind_parameters(tape, params);
    Var y = forward(tape, bound, x_train, pe_train);
    const LossValue lv = loss(y, y_train, all_ones, LossKind::mse);
    tape.backward(lv.value);
    adam_step(params, collect_gradients(tape, bound), state, adam_cfg);
  }

  Tape tape;
  const auto bound = bind_parameters(tape, params);
  const Tensor pred = forward(tape, bound, x_test, pe_test).value();
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - y_test[i]) * (pred[i] - y_test[i]);
  return std::sqrt(sq / static_cast<double>(pred.size()));
}

PretextReport pretext_autoencoder_check(std::span<const Tensor> sequences,
                                        const PretextOptions& opts) {
  std::size_t rows = 0, width = 0;
  for (const auto& s : sequences) {
    if (s.rank() != 2) throw ShapeError("pretext check expects [S, F] feature sequences");
    if (width == 0) width = s.dim(1);
    if (s.dim(1) != width) throw ShapeError("feature sequences differ in width");
    rows += s.dim(0);
  }
  if (rows == 0) throw DataError("pretext check needs at least one feature row");
  Tensor all({rows, width});
  std::vector<std::size_t> positions;
  positions.reserve(rows);
  std::size_t offset = 0;
  for (const auto& s : sequences) {
    std::copy(s.data().begin(), s.data().end(), all.data().begin() + offset * width);
    for (std::size_t i = 0; i < s.dim(0); ++i) positions.push_back(i);
    offset += s.dim(0);
  }
  PretextReport report;
  report.rmse_raw = train_autoencoder(all, all, nullptr, opts);
  report.rmse_with_pe = train_autoencoder(all, all, &positions, opts);
  report.n_test = rows / opts.holdout_every;
  report.n_train = rows - report.n_test;
  return report;
}

}  // namespace trajformer
