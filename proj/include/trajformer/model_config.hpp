#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "trajformer/tensor.hpp"

namespace trajformer {

enum class AttentionMode { causal, bidirectional };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::size_t d_ff = 256;
  std::size_t max_seq = 256;
  bool rope_enabled = false;
  AttentionMode attention_mode = AttentionMode::causal;

  // Input wiring.
  bool positional_encoding = true;
  bool use_calendar = true;     // scaled dow/hour/minute/second columns
  bool use_dt = true;           // normalized Δt column
  std::size_t time2vec_k = 0;   // 0 disables the Time2Vec channel block
  std::size_t patch_len = 1;    // 1 disables patching

  double init_std = 0.02;
  double ln_eps = 1e-5;

  static constexpr std::size_t out_dim = 3;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Per-point width after column selection and Time2Vec channels.
  std::size_t point_width() const;
  /// Width of one projected row (point_width × patch_len).
  std::size_t input_width() const { return point_width() * patch_len; }

  /// Throws ConfigError on inconsistent dimensions.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All learnable tensors of the model, keyed by dotted name. Ordered so that
/// iteration (serialization, optimizer updates) is deterministic.
using ParameterSet = std::map<std::string, Tensor>;
using GradientSet = std::map<std::string, Tensor>;

/// Normal(0, init_std) for projections, zeros for biases and the output
/// head, ones/zeros for layer-norm gain/bias.
ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed);

/// Parameters recorded on a tape for one forward pass.
using BoundParams = std::map<std::string, Var>;

BoundParams bind_parameters(Tape& tape, const ParameterSet& params);
GradientSet collect_gradients(const Tape& tape, const BoundParams& bound);

std::size_t parameter_count(const ParameterSet& params);

}  // namespace trajformer
