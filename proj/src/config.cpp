#include "trajformer/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

namespace trajformer {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::string_view what, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

Objective parse_objective(const std::string& s) {
  if (s == "next_step") return Objective::next_step;
  if (s == "infill") return Objective::infill;
  if (s == "alternating") return Objective::alternating;
  throw ConfigError("unknown objective '" + s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "huber") return LossKind::huber;
  throw ConfigError("unknown loss '" + s + "'");
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "causal") return AttentionMode::causal;
  if (s == "bidirectional") return AttentionMode::bidirectional;
  throw ConfigError("unknown attention mode '" + s + "'");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"n_blocks", c.n_blocks},
           {"d_ff", c.d_ff},
           {"max_seq", c.max_seq},
           {"rope_enabled", c.rope_enabled},
           {"attention_mode",
            c.attention_mode == AttentionMode::causal ? "causal" : "bidirectional"},
           {"positional_encoding", c.positional_encoding},
           {"use_calendar", c.use_calendar},
           {"use_dt", c.use_dt},
           {"time2vec_k", c.time2vec_k},
           {"patch_len", c.patch_len},
           {"init_std", c.init_std},
           {"ln_eps", c.ln_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, "model",
                 {"d_model", "n_heads", "n_blocks", "d_ff", "max_seq", "rope_enabled",
                  "attention_mode", "positional_encoding", "use_calendar", "use_dt", "time2vec_k",
                  "patch_len", "init_std", "ln_eps"});
  read(j, "d_model", c.d_model);
  read(j, "n_heads", c.n_heads);
  read(j, "n_blocks", c.n_blocks);
  read(j, "d_ff", c.d_ff);
  read(j, "max_seq", c.max_seq);
  read(j, "rope_enabled", c.rope_enabled);
  if (j.contains("attention_mode")) {
    c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  }
  read(j, "positional_encoding", c.positional_encoding);
  read(j, "use_calendar", c.use_calendar);
  read(j, "use_dt", c.use_dt);
  read(j, "time2vec_k", c.time2vec_k);
  read(j, "patch_len", c.patch_len);
  read(j, "init_std", c.init_std);
  read(j, "ln_eps", c.ln_eps);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"clip_norm", c.clip_norm},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"seq_len", c.seq_len},
           {"max_steps", c.max_steps},
           {"objective", to_string(c.objective)},
           {"mask_ratio", c.mask_ratio},
           {"loss", c.loss == LossKind::mse ? "mse" : "huber"},
           {"huber_delta", c.huber_delta},
           {"val_fraction", c.val_fraction},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, "train",
                 {"lr", "beta1", "beta2", "eps", "clip_norm", "epochs", "batch_size", "seq_len",
                  "max_steps", "objective", "mask_ratio", "loss", "huber_delta", "val_fraction",
                  "seed"});
  read(j, "lr", c.lr);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "eps", c.eps);
  read(j, "clip_norm", c.clip_norm);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seq_len", c.seq_len);
  read(j, "max_steps", c.max_steps);
  if (j.contains("objective")) c.objective = parse_objective(j.at("objective").get<std::string>());
  read(j, "mask_ratio", c.mask_ratio);
  if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  read(j, "huber_delta", c.huber_delta);
  read(j, "val_fraction", c.val_fraction);
  read(j, "seed", c.seed);
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"n_traj", c.n_traj},
           {"points_per_traj", c.points_per_traj},
           {"n_waypoints", c.n_waypoints},
           {"speed_min", c.speed_min},
           {"speed_max", c.speed_max},
           {"noise_sigma", c.noise_sigma},
           {"interval_mean", c.interval_mean},
           {"interval_std", c.interval_std},
           {"lat_min", c.lat_min},
           {"lat_max", c.lat_max},
           {"lon_min", c.lon_min},
           {"lon_max", c.lon_max},
           {"start_time", c.start_time},
           {"seed", c.seed}};
}

void from_json(const json& j, SyntheticConfig& c) {
  reject_unknown(j, "synthetic",
                 {"n_traj", "points_per_traj", "n_waypoints", "speed_min", "speed_max",
                  "noise_sigma", "interval_mean", "interval_std", "lat_min", "lat_max", "lon_min",
                  "lon_max", "start_time", "seed"});
  read(j, "n_traj", c.n_traj);
  read(j, "points_per_traj", c.points_per_traj);
  read(j, "n_waypoints", c.n_waypoints);
  read(j, "speed_min", c.speed_min);
  read(j, "speed_max", c.speed_max);
  read(j, "noise_sigma", c.noise_sigma);
  read(j, "interval_mean", c.interval_mean);
  read(j, "interval_std", c.interval_std);
  read(j, "lat_min", c.lat_min);
  read(j, "lat_max", c.lat_max);
  read(j, "lon_min", c.lon_min);
  read(j, "lon_max", c.lon_max);
  read(j, "start_time", c.start_time);
  read(j, "seed", c.seed);
}

void to_json(json& j, const NormalizationParams& p) {
  j = json{{"center_lat", p.center_lat},
           {"center_lon", p.center_lon},
           {"scale_lat", p.scale_lat},
           {"scale_lon", p.scale_lon},
           {"dt_scale", p.dt_scale}};
}

void from_json(const json& j, NormalizationParams& p) {
  reject_unknown(j, "normalization",
                 {"center_lat", "center_lon", "scale_lat", "scale_lon", "dt_scale"});
  read(j, "center_lat", p.center_lat);
  read(j, "center_lon", p.center_lon);
  read(j, "scale_lat", p.scale_lat);
  read(j, "scale_lon", p.scale_lon);
  read(j, "dt_scale", p.dt_scale);
  if (!(p.scale_lat > 0.0 && p.scale_lon > 0.0 && p.dt_scale > 0.0)) {
    throw ConfigError("normalization scales must be positive");
  }
}

void to_json(json& j, const MetricRecord& r) {
  j = json{{"epoch", r.epoch}, {"split", r.split}, {"objective", r.objective}, {"loss", r.loss}};
}

void from_json(const json& j, MetricRecord& r) {
  r.epoch = j.at("epoch").get<std::size_t>();
  r.split = j.at("split").get<std::string>();
  r.objective = j.at("objective").get<std::string>();
  r.loss = j.at("loss").get<double>();
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace trajformer
