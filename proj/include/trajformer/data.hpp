#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajformer/geo.hpp"
#include "trajformer/masking.hpp"
#include "trajformer/tensor.hpp"

namespace trajformer {

/// Pull-style stream of trajectories; returns nullopt when exhausted.
using TrajectorySource = std::function<std::optional<Trajectory>()>;

TrajectorySource from_vector(std::vector<Trajectory> trajs);
std::vector<Trajectory> collect(TrajectorySource source);

// ---- model-ready batches --------------------------------------------------

struct Batch {
  Tensor features;                        // [B, S, 7], zero on padding
  Tensor targets;                         // [B, S, 3] next-step deltas in model units
  std::vector<std::size_t> lengths;       // valid points per row (>= 2)
  std::vector<Trajectory> trajectories;   // the (truncated) source rows
  std::vector<MaskSpec> mask_specs;       // optional, one per row

  std::size_t size() const { return lengths.size(); }
  std::size_t seq_len() const { return features.rank() == 3 ? features.dim(1) : 0; }

  /// [B, S] with 1 on valid slots and 0 on padding.
  Tensor pad_mask() const;
  /// Row `b` of features as [S, 7].
  Tensor sequence_features(std::size_t b) const;
};

/// Featurizes and pads `trajs` (each truncated to `max_len` points) to the
/// longest row. Rows shorter than 2 points must be filtered beforehand.
Batch make_batch(std::span<const Trajectory> trajs, std::size_t max_len,
                 const NormalizationParams& params);

/// Groups a trajectory stream into batches of `batch_size`; the final partial
/// batch is emitted. Holds at most one batch worth of trajectories.
class BatchStream {
 public:
  BatchStream(TrajectorySource source, std::size_t batch_size, std::size_t max_len,
              NormalizationParams params);

  std::optional<Batch> next();
  /// Trajectories dropped for having fewer than 2 points.
  std::size_t skipped() const { return skipped_; }
  std::size_t peak_buffered() const { return peak_buffered_; }

 private:
  TrajectorySource source_;
  std::size_t batch_size_;
  std::size_t max_len_;
  NormalizationParams params_;
  std::size_t skipped_ = 0;
  std::size_t peak_buffered_ = 0;
};

// ---- synthetic corpora ------------------------------------------------------

struct SyntheticConfig {
  std::size_t n_traj = 100;
  std::size_t points_per_traj = 32;
  std::size_t n_waypoints = 2;
  double speed_min = 0.002;  // degrees per step
  double speed_max = 0.01;
  double noise_sigma = 0.0;  // degrees
  double interval_mean = 60.0;
  double interval_std = 0.0;
  double lat_min = 50.75, lat_max = 50.95;
  double lon_min = 4.25, lon_max = 4.45;
  std::int64_t start_time = 1'700'000'000;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

/// Piecewise-linear walks through random waypoints at a random constant
/// speed, with Gaussian position noise and jittered sampling intervals.
/// Trajectory i depends only on (seed, i).
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(SyntheticConfig cfg);

  std::optional<Trajectory> next();
  /// Trajectory `index` without consuming the stream.
  Trajectory make(std::size_t index) const;
  /// Same trajectory with the noise term omitted.
  Trajectory make_clean(std::size_t index) const;

 private:
  Trajectory generate(std::size_t index, bool with_noise) const;

  SyntheticConfig cfg_;
  std::size_t index_ = 0;
};

std::vector<Trajectory> generate_synthetic(const SyntheticConfig& cfg);

// ---- JSONL ------------------------------------------------------------------

/// {"id": "...", "points": [[lat, lon, t], ...]} on a single line.
std::string to_jsonl_line(const Trajectory& traj);
/// Throws DataError on malformed or invalid records.
Trajectory parse_jsonl_line(const std::string& line);

void write_jsonl(const std::filesystem::path& path, TrajectorySource source);

struct LineWarning {
  std::size_t line = 0;
  std::string message;
};

/// Streams trajectories from a JSONL file one line at a time. Malformed lines
/// are skipped and recorded; blank lines are ignored.
class JsonlReader {
 public:
  explicit JsonlReader(const std::filesystem::path& path);

  std::optional<Trajectory> next();
  std::size_t malformed() const { return malformed_; }
  const std::vector<LineWarning>& warnings() const { return warnings_; }

  /// Adapter for APIs that take a TrajectorySource. The reader must outlive it.
  TrajectorySource source();

 private:
  static constexpr std::size_t kMaxKeptWarnings = 100;

  std::filesystem::path path_;
  std::ifstream in_;
  std::string line_;
  std::size_t line_no_ = 0;
  std::size_t malformed_ = 0;
  std::vector<LineWarning> warnings_;
};

/// A fresh source over `path` each call; unreadable files throw DataError.
TrajectorySource stream_jsonl(const std::filesystem::path& path);

// ---- train/validation split ---------------------------------------------------

/// Deterministic assignment by hashing the trajectory id with `seed`.
bool is_validation(const std::string& id, double val_fraction, std::uint64_t seed);

std::pair<std::vector<Trajectory>, std::vector<Trajectory>> split(
    std::span<const Trajectory> trajs, double val_fraction, std::uint64_t seed);

/// Keeps only the train (or validation) side of a stream.
TrajectorySource split_stream(TrajectorySource source, bool validation, double val_fraction,
                              std::uint64_t seed);

}  // namespace trajformer
