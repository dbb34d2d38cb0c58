#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trajformer/model_config.hpp"
#include "trajformer/tensor.hpp"

namespace trajformer {

/// x·W + b for x [S, F], W [F, d], b [d].
Var project(Var x, Var weight, Var bias);

/// table[pos, 2i] = sin(pos / 10000^(2i/d)), table[pos, 2i+1] = cos(same).
Tensor sinusoidal_table(std::size_t max_seq, std::size_t d_model);

/// One row of the sinusoidal table. Throws ShapeError when pos >= max_seq or
/// d_model is odd.
std::vector<double> positional_encoding(std::size_t pos, std::size_t d_model,
                                        std::size_t max_seq);

/// Time2Vec: out[0] = ω₀τ + φ₀, out[i] = sin(ωᵢτ + φᵢ) for i ≥ 1.
/// `tau` is [S, 1]; omega and phi are [k]; result is [S, k].
Var time2vec(Var tau, Var omega, Var phi);
std::vector<double> time2vec(double tau, std::span<const double> omega,
                             std::span<const double> phi);

/// Non-overlapping patches of P consecutive rows flattened into one row.
struct Patched {
  Tensor patches;          // [ceil(S/P), P·F]
  std::size_t valid_rows;  // S; rows beyond it are zero padding
};

Patched patchify(const Tensor& x, std::size_t patch_len);
Tensor unpatchify(const Patched& p, std::size_t width);
Var patchify(Var x, std::size_t patch_len);

inline std::size_t patch_count(std::size_t rows, std::size_t patch_len) {
  return (rows + patch_len - 1) / patch_len;
}

/// Column selection, optional Time2Vec channels, optional patching,
/// projection and (optionally) additive sinusoidal positions.
/// `features` is [S, 7]; the result is [ceil(S/P), d_model].
Var embed_sequence(Var features, const BoundParams& params, const ModelConfig& cfg);

}  // namespace trajformer
