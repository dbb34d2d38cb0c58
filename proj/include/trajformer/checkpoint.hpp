#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajformer/geo.hpp"
#include "trajformer/model_config.hpp"
#include "trajformer/training.hpp"

namespace trajformer {

// File layout (little-endian):
//   "TRJFCKPT" | u32 version | u64 header length | JSON header |
//   float64 payload | u64 FNV-1a checksum of all preceding bytes
// The header carries configs, counters, RNG state, metrics history and a
// tensor index of {name, shape, offset} into the payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  NormalizationParams norm;
  TrainConfig train;
  ParameterSet params;
  std::optional<AdamState> adam;
  std::string rng_state;
  std::uint64_t step = 0;
  std::uint64_t infill_steps = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  double epoch_loss_sum = 0.0;
  std::uint64_t epoch_loss_count = 0;
  std::vector<MetricRecord> history;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(const Trainer& trainer);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version, checksum or truncation.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// When `expected` is given, a differing stored ModelConfig is an error.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

/// FNV-1a 64 of the serialized form.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace trajformer
