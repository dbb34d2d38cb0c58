#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trajformer/data.hpp"
#include "trajformer/masking.hpp"
#include "trajformer/model_config.hpp"
#include "trajformer/tensor.hpp"

namespace trajformer {

/// Row-major [S, S] allowed-pattern: entry (i, j) is true iff j <= i.
std::vector<bool> causal_mask(std::size_t length);

/// Allowed-pattern for a sequence whose first `valid` rows are real: causal
/// or bidirectional among rows, and never attending to padded keys.
std::vector<bool> attention_mask(std::size_t length, std::size_t valid, AttentionMode mode);

/// Rotates each coordinate pair (2i, 2i+1) of row r by positions[r]·θᵢ with
/// θᵢ = 10000^(-2i/head_dim).
Var apply_rope(Var x, std::span<const std::size_t> positions);
Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions);

/// softmax(q·kᵀ/√head_dim restricted to `allowed`)·v.
Var attention(Var q, Var k, Var v, const std::vector<bool>* allowed);

/// Q/K/V projections, per-head attention (with RoPE on q and k when enabled),
/// head concatenation and output projection. `prefix` selects the block.
Var multi_head_attention(Var x, const BoundParams& params, const std::string& prefix,
                         const ModelConfig& cfg, const std::vector<bool>& allowed);

/// Pre-norm block: h = x + MHA(LN(x)); out = h + FF(LN(h)), FF = ff2·gelu(ff1·).
Var transformer_block(Var x, const BoundParams& params, std::size_t index,
                      const ModelConfig& cfg, const std::vector<bool>& allowed);

/// Embedding, blocks, final layer norm and regression head for one sequence
/// of [S, 7] features whose first `valid` rows are real. Returns [S', 3].
Var forward_sequence(Var features, std::size_t valid, const BoundParams& params,
                     const ModelConfig& cfg);

/// Whole-batch forward. When `masks` is non-empty (one per row) the features
/// are corrupted with the learnable mask vectors first. Returns [B, S', 3].
Var model_forward(const Batch& batch, std::span<const MaskSpec> masks, const BoundParams& params,
                  const ModelConfig& cfg);

/// Convenience: forward pass on a throwaway tape, values only.
Tensor predict(const Batch& batch, std::span<const MaskSpec> masks, const ParameterSet& params,
               const ModelConfig& cfg);

}  // namespace trajformer
