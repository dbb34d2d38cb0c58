#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "trajformer/tensor.hpp"

namespace trajformer {

enum class MaskKind { dimension, segment };

struct MaskedPosition {
  std::size_t index = 0;
  bool spatial = false;   // feature columns x, y; supervises Δlat, Δlon
  bool temporal = false;  // calendar and Δt columns; supervises Δt

  friend bool operator==(const MaskedPosition&, const MaskedPosition&) = default;
};

struct MaskSpec {
  MaskKind kind = MaskKind::dimension;
  std::vector<MaskedPosition> positions;  // ascending by index
  double ratio = 0.15;

  bool empty() const { return positions.empty(); }

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

inline constexpr double kDefaultMaskRatio = 0.15;

/// Each position is selected with probability `ratio` and then hides either
/// its spatial or its temporal slots, with equal odds.
MaskSpec sample_dimension_mask(std::size_t length, double ratio, std::mt19937_64& rng);

/// One contiguous run of max(1, round(ratio·length)) positions with both
/// slot groups hidden. Requires length >= 4.
MaskSpec sample_segment_mask(std::size_t length, double ratio, std::mt19937_64& rng);

/// Replaces masked slots of a [S, 7] feature matrix with the learnable mask
/// vectors ([2] spatial, [5] temporal). Unmasked slots are copied bit for bit.
Var apply_mask(Var features, const MaskSpec& spec, Var mask_spatial, Var mask_temporal);
Tensor apply_mask(const Tensor& features, const MaskSpec& spec, const Tensor& mask_spatial,
                  const Tensor& mask_temporal);

enum class LossMode { next_step, infill };

/// Per-position supervision weights [length, 3] in {0, 1}. Positions at or
/// beyond `valid_length - 1` (no successor, or padding) always get 0.
Tensor build_loss_mask(const MaskSpec& spec, LossMode mode, std::size_t length,
                       std::size_t valid_length);
inline Tensor build_loss_mask(const MaskSpec& spec, LossMode mode, std::size_t length) {
  return build_loss_mask(spec, mode, length, length);
}

}  // namespace trajformer
