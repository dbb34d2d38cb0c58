#include "trajformer/masking.hpp"

#include <cmath>

#include "trajformer/geo.hpp"

namespace trajformer {

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("mask ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
}

}  // namespace

MaskSpec sample_dimension_mask(std::size_t length, double ratio, std::mt19937_64& rng) {
  if (length == 0) throw ConfigError("cannot mask an empty sequence");
  check_ratio(ratio);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MaskSpec spec{MaskKind::dimension, {}, ratio};
  for (std::size_t i = 0; i < length; ++i) {
    if (unit(rng) >= ratio) continue;
    const bool spatial = unit(rng) < 0.5;
    spec.positions.push_back({i, spatial, !spatial});
  }
  return spec;
}

MaskSpec sample_segment_mask(std::size_t length, double ratio, std::mt19937_64& rng) {
  if (length < 4) throw ConfigError("segment masking needs at least 4 positions");
  check_ratio(ratio);
  const auto run = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(length))));
  std::uniform_int_distribution<std::size_t> start_dist(0, length - run);
  const std::size_t start = start_dist(rng);
  MaskSpec spec{MaskKind::segment, {}, ratio};
  for (std::size_t i = start; i < start + run; ++i) spec.positions.push_back({i, true, true});
  return spec;
}

Var apply_mask(Var features, const MaskSpec& spec, Var mask_spatial, Var mask_temporal) {
  const auto& fs = features.shape();
  if (fs.size() != 2 || fs[1] != feature::kWidth) {
    throw ShapeError("apply_mask expects [S, 7] features, got " + shape_str(fs));
  }
  if (mask_spatial.shape() != Shape{feature::kSpatialWidth} ||
      mask_temporal.shape() != Shape{feature::kTemporalWidth}) {
    throw ShapeError("apply_mask: mask vectors must be [2] and [5]");
  }
  const std::size_t rows = fs[0];
  // slot_source[i]: 0 keeps the feature, 1 spatial mask, 2 temporal mask.
  std::vector<unsigned char> slot_source(rows * feature::kWidth, 0);
  for (const auto& mp : spec.positions) {
    if (mp.index >= rows) {
      throw ShapeError("mask position " + std::to_string(mp.index) + " outside sequence of " +
                       std::to_string(rows));
    }
    unsigned char* row = slot_source.data() + mp.index * feature::kWidth;
    if (mp.spatial) {
      for (std::size_t j = 0; j < feature::kSpatialWidth; ++j) row[feature::kSpatialBegin + j] = 1;
    }
    if (mp.temporal) {
      for (std::size_t j = 0; j < feature::kTemporalWidth; ++j) {
        row[feature::kTemporalBegin + j] = 2;
      }
    }
  }
  Tensor out = features.value();
  const auto& ms = mask_spatial.value();
  const auto& mt = mask_temporal.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t col = i % feature::kWidth;
    if (slot_source[i] == 1) out[i] = ms[col - feature::kSpatialBegin];
    if (slot_source[i] == 2) out[i] = mt[col - feature::kTemporalBegin];
  }
  const Var ins[] = {features, mask_spatial, mask_temporal};
  return features.tape->record(
      std::move(out), ins,
      [features, mask_spatial, mask_temporal, slot_source = std::move(slot_source)](
          Tape& t, std::span<const double> g) {
        double* df = t.grad_buffer(features);
        double* ds = t.grad_buffer(mask_spatial);
        double* dt = t.grad_buffer(mask_temporal);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t col = i % feature::kWidth;
          switch (slot_source[i]) {
            case 0:
              if (df) df[i] += g[i];
              break;
            case 1:
              if (ds) ds[col - feature::kSpatialBegin] += g[i];
              break;
            default:
              if (dt) dt[col - feature::kTemporalBegin] += g[i];
          }
        }
      });
}

Tensor apply_mask(const Tensor& features, const MaskSpec& spec, const Tensor& mask_spatial,
                  const Tensor& mask_temporal) {
  Tape tape;
  Var out = apply_mask(tape.constant(features), spec, tape.constant(mask_spatial),
                       tape.constant(mask_temporal));
  return out.value();
}

Tensor build_loss_mask(const MaskSpec& spec, LossMode mode, std::size_t length,
                       std::size_t valid_length) {
  if (valid_length > length) throw ShapeError("valid length exceeds sequence length");
  Tensor w({length, target::kWidth});
  const std::size_t supervised = valid_length > 0 ? valid_length - 1 : 0;
  if (mode == LossMode::next_step) {
    for (std::size_t i = 0; i < supervised; ++i)
      for (std::size_t j = 0; j < target::kWidth; ++j) w.at(i, j) = 1.0;
    return w;
  }
  for (const auto& mp : spec.positions) {
    if (mp.index >= supervised) continue;
    if (mp.spatial) {
      w.at(mp.index, target::kDlat) = 1.0;
      w.at(mp.index, target::kDlon) = 1.0;
    }
    if (mp.temporal) w.at(mp.index, target::kDt) = 1.0;
  }
  return w;
}

}  // namespace trajformer
