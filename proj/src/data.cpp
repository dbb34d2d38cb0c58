#include "trajformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <json.hpp>

namespace trajformer {

using json = nlohmann::json;

TrajectorySource from_vector(std::vector<Trajectory> trajs) {
  auto items = std::make_shared<std::vector<Trajectory>>(std::move(trajs));
  auto pos = std::make_shared<std::size_t>(0);
  return [items, pos]() -> std::optional<Trajectory> {
    if (*pos >= items->size()) return std::nullopt;
    return (*items)[(*pos)++];
  };
}

std::vector<Trajectory> collect(TrajectorySource source) {
  std::vector<Trajectory> out;
  while (auto t = source()) out.push_back(std::move(*t));
  return out;
}

// ---- batches ------------------------------------------------------------------

Tensor Batch::pad_mask() const {
  const std::size_t s = seq_len();
  Tensor m({size(), s});
  for (std::size_t b = 0; b < size(); ++b)
    for (std::size_t i = 0; i < lengths[b]; ++i) m.at(b, i) = 1.0;
  return m;
}

Tensor Batch::sequence_features(std::size_t b) const {
  const std::size_t s = seq_len();
  const std::size_t w = feature::kWidth;
  std::vector<double> row(features.data().begin() + b * s * w,
                          features.data().begin() + (b + 1) * s * w);
  return Tensor({s, w}, std::move(row));
}

Batch make_batch(std::span<const Trajectory> trajs, std::size_t max_len,
                 const NormalizationParams& params) {
  if (trajs.empty()) throw DataError("cannot build an empty batch");
  if (max_len < 2) throw ConfigError("sequence length must be at least 2");
  Batch batch;
  std::size_t longest = 0;
  for (const auto& t : trajs) {
    Trajectory cut = t;
    if (cut.points.size() > max_len) cut.points.resize(max_len);
    if (cut.points.size() < 2) throw DataError("trajectory '" + t.id + "' has fewer than 2 points");
    longest = std::max(longest, cut.points.size());
    batch.lengths.push_back(cut.points.size());
    batch.trajectories.push_back(std::move(cut));
  }
  const std::size_t n = trajs.size();
  batch.features = Tensor({n, longest, feature::kWidth});
  batch.targets = Tensor({n, longest, target::kWidth});
  for (std::size_t b = 0; b < n; ++b) {
    const auto fs = featurize(batch.trajectories[b], params);
    std::copy(fs.features.data().begin(), fs.features.data().end(),
              batch.features.data().begin() + b * longest * feature::kWidth);
    for (std::size_t i = 0; i < fs.deltas.deltas.size(); ++i) {
      const auto d = normalize_delta(fs.deltas.deltas[i], params);
      std::copy(d.begin(), d.end(),
                batch.targets.data().begin() + (b * longest + i) * target::kWidth);
    }
  }
  return batch;
}

BatchStream::BatchStream(TrajectorySource source, std::size_t batch_size, std::size_t max_len,
                         NormalizationParams params)
    : source_(std::move(source)), batch_size_(batch_size), max_len_(max_len), params_(params) {
  if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
  if (max_len_ < 2) throw ConfigError("sequence length must be at least 2");
}

std::optional<Batch> BatchStream::next() {
  std::vector<Trajectory> pending;
  pending.reserve(batch_size_);
  while (pending.size() < batch_size_) {
    auto t = source_();
    if (!t) break;
    if (t->points.size() < 2) {
      ++skipped_;
      continue;
    }
    pending.push_back(std::move(*t));
    peak_buffered_ = std::max(peak_buffered_, pending.size());
  }
  if (pending.empty()) return std::nullopt;
  return make_batch(pending, max_len_, params_);
}

// ---- synthetic corpora ----------------------------------------------------------

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("synthetic config: " + msg); };
  if (points_per_traj < 2) fail("points_per_traj must be at least 2");
  if (n_waypoints < 2) fail("n_waypoints must be at least 2");
  if (!(speed_min > 0.0) || !(speed_max >= speed_min)) fail("speed range must be positive");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  if (!(interval_mean >= 1.0) || !(interval_std >= 0.0)) fail("bad sampling interval stats");
  if (!(lat_min < lat_max) || lat_min < -90.0 || lat_max > 90.0) fail("bad latitude range");
  if (!(lon_min < lon_max) || lon_min < -180.0 || lon_max > 180.0) fail("bad longitude range");
  if (start_time < 0) fail("start_time must be non-negative");
}

SyntheticGenerator::SyntheticGenerator(SyntheticConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::optional<Trajectory> SyntheticGenerator::next() {
  if (index_ >= cfg_.n_traj) return std::nullopt;
  return make(index_++);
}

Trajectory SyntheticGenerator::make(std::size_t index) const { return generate(index, true); }
Trajectory SyntheticGenerator::make_clean(std::size_t index) const {
  return generate(index, false);
}

Trajectory SyntheticGenerator::generate(std::size_t index, bool with_noise) const {
  // Path and noise draw from separate engines so that the clean path does not
  // depend on noise_sigma.
  std::seed_seq path_seed{static_cast<std::uint32_t>(cfg_.seed),
                          static_cast<std::uint32_t>(cfg_.seed >> 32),
                          static_cast<std::uint32_t>(index), 0x9a7bu};
  std::seed_seq noise_seed{static_cast<std::uint32_t>(cfg_.seed),
                           static_cast<std::uint32_t>(cfg_.seed >> 32),
                           static_cast<std::uint32_t>(index), 0x4e01u};
  std::mt19937_64 rng(path_seed);
  std::mt19937_64 noise_rng(noise_seed);

  std::uniform_real_distribution<double> lat_dist(cfg_.lat_min, cfg_.lat_max);
  std::uniform_real_distribution<double> lon_dist(cfg_.lon_min, cfg_.lon_max);
  std::vector<std::array<double, 2>> waypoints(cfg_.n_waypoints);
  for (auto& w : waypoints) w = {lat_dist(rng), lon_dist(rng)};
  std::uniform_real_distribution<double> speed_dist(cfg_.speed_min, cfg_.speed_max);
  const double speed = speed_dist(rng);
  std::uniform_int_distribution<std::int64_t> offset_dist(0, 7 * 86400 - 1);
  std::int64_t t = cfg_.start_time + offset_dist(rng);
  std::normal_distribution<double> interval_dist(cfg_.interval_mean,
                                                 cfg_.interval_std > 0.0 ? cfg_.interval_std : 1.0);
  std::normal_distribution<double> noise(0.0, cfg_.noise_sigma > 0.0 ? cfg_.noise_sigma : 1.0);

  // Walk the polyline at constant speed; past the last waypoint keep the
  // heading of the last non-degenerate segment.
  std::size_t seg = 0;
  std::array<double, 2> pos = waypoints[0];
  std::array<double, 2> heading{0.0, 0.0};
  auto advance = [&](double budget) {
    while (budget > 0.0) {
      if (seg + 1 < waypoints.size()) {
        const auto& target = waypoints[seg + 1];
        const double dlat = target[0] - pos[0];
        const double dlon = target[1] - pos[1];
        const double dist = std::hypot(dlat, dlon);
        if (dist > 0.0) heading = {dlat / dist, dlon / dist};
        if (dist <= budget) {
          pos = target;
          budget -= dist;
          ++seg;
          continue;
        }
        pos = {pos[0] + heading[0] * budget, pos[1] + heading[1] * budget};
        return;
      }
      pos = {pos[0] + heading[0] * budget, pos[1] + heading[1] * budget};
      return;
    }
  };

  Trajectory traj;
  traj.id = "syn-" + std::to_string(cfg_.seed) + "-" + std::to_string(index);
  traj.points.reserve(cfg_.points_per_traj);
  for (std::size_t i = 0; i < cfg_.points_per_traj; ++i) {
    if (i > 0) {
      advance(speed);
      const double step =
          std::round(cfg_.interval_std > 0.0 ? interval_dist(rng) : cfg_.interval_mean);
      t += std::max<std::int64_t>(1, static_cast<std::int64_t>(step));
    }
    double lat = pos[0];
    double lon = pos[1];
    if (cfg_.noise_sigma > 0.0) {
      const double nlat = noise(noise_rng);
      const double nlon = noise(noise_rng);
      if (with_noise) {
        lat += nlat;
        lon += nlon;
      }
    }
    traj.points.push_back({std::clamp(lat, -90.0, 90.0), std::clamp(lon, -180.0, 180.0), t});
  }
  return traj;
}

std::vector<Trajectory> generate_synthetic(const SyntheticConfig& cfg) {
  SyntheticGenerator gen(cfg);
  std::vector<Trajectory> out;
  out.reserve(cfg.n_traj);
  while (auto t = gen.next()) out.push_back(std::move(*t));
  return out;
}

// ---- JSONL ------------------------------------------------------------------------

std::string to_jsonl_line(const Trajectory& traj) {
  json points = json::array();
  for (const auto& p : traj.points) points.push_back(json::array({p.lat, p.lon, p.t}));
  return json{{"id", traj.id}, {"points", std::move(points)}}.dump();
}

Trajectory parse_jsonl_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("points") ||
      !j["points"].is_array()) {
    throw DataError("record must be {\"id\": string, \"points\": [[lat, lon, t], ...]}");
  }
  Trajectory traj;
  traj.id = j["id"].get<std::string>();
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() ||
        !p[2].is_number()) {
      throw DataError("point must be [lat, lon, t]");
    }
    std::int64_t t = 0;
    if (p[2].is_number_integer()) {
      t = p[2].get<std::int64_t>();
    } else {
      const double tf = p[2].get<double>();
      if (std::floor(tf) != tf) throw DataError("timestamp must be integer seconds");
      t = static_cast<std::int64_t>(tf);
    }
    traj.points.push_back({p[0].get<double>(), p[1].get<double>(), t});
  }
  validate_trajectory(traj);
  return traj;
}

void write_jsonl(const std::filesystem::path& path, TrajectorySource source) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  while (auto t = source()) out << to_jsonl_line(*t) << '\n';
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

JsonlReader::JsonlReader(const std::filesystem::path& path) : path_(path), in_(path) {
  if (!in_) throw DataError("cannot read trajectory file '" + path.string() + "'");
}

std::optional<Trajectory> JsonlReader::next() {
  while (std::getline(in_, line_)) {
    ++line_no_;
    if (line_.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return parse_jsonl_line(line_);
    } catch (const DataError& e) {
      ++malformed_;
      if (warnings_.size() < kMaxKeptWarnings) warnings_.push_back({line_no_, e.what()});
    }
  }
  if (in_.bad()) throw DataError("read error in '" + path_.string() + "'");
  return std::nullopt;
}

TrajectorySource JsonlReader::source() {
  return [this] { return next(); };
}

TrajectorySource stream_jsonl(const std::filesystem::path& path) {
  auto reader = std::make_shared<JsonlReader>(path);
  return [reader] { return reader->next(); };
}

// ---- split ------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

bool is_validation(const std::string& id, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  const std::uint64_t h = splitmix64(fnv1a(id) ^ splitmix64(seed));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < val_fraction;
}

std::pair<std::vector<Trajectory>, std::vector<Trajectory>> split(
    std::span<const Trajectory> trajs, double val_fraction, std::uint64_t seed) {
  std::pair<std::vector<Trajectory>, std::vector<Trajectory>> out;
  for (const auto& t : trajs) {
    (is_validation(t.id, val_fraction, seed) ? out.second : out.first).push_back(t);
  }
  return out;
}

TrajectorySource split_stream(TrajectorySource source, bool validation, double val_fraction,
                              std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  return [source = std::move(source), validation, val_fraction,
          seed]() mutable -> std::optional<Trajectory> {
    while (auto t = source()) {
      if (is_validation(t->id, val_fraction, seed) == validation) return t;
    }
    return std::nullopt;
  };
}

}  // namespace trajformer
