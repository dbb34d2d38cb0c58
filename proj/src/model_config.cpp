#include "trajformer/model_config.hpp"

#include <random>

#include "trajformer/geo.hpp"

namespace trajformer {

std::size_t ModelConfig::point_width() const {
  std::size_t w = feature::kSpatialWidth;
  if (use_calendar) w += 4;
  if (use_dt) w += 1;
  return w + time2vec_k;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model == 0 || d_model % 2 != 0) fail("d_model must be a positive even number");
  if (n_heads == 0 || d_model % n_heads != 0) fail("n_heads must divide d_model");
  if (rope_enabled && head_dim() % 2 != 0) fail("rotary embeddings need an even head_dim");
  if (n_blocks == 0) fail("n_blocks must be positive");
  if (d_ff == 0) fail("d_ff must be positive");
  if (max_seq == 0) fail("max_seq must be positive");
  if (patch_len == 0) fail("patch_len must be positive");
  if (time2vec_k == 1) fail("time2vec_k must be 0 (disabled) or >= 2");
  if (!(init_std >= 0.0)) fail("init_std must be non-negative");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model;
  const double sd = cfg.init_std;
  ParameterSet p;
  // Insertion order below fixes the RNG draw order; the map orders by name.
  p["embed.W"] = Tensor::randn({cfg.input_width(), d}, sd, rng);
  p["embed.b"] = Tensor::zeros({d});
  if (cfg.time2vec_k > 0) {
    p["time2vec.omega"] = Tensor::randn({cfg.time2vec_k}, 1.0, rng);
    p["time2vec.phi"] = Tensor::zeros({cfg.time2vec_k});
  }
  p["mask.spatial"] = Tensor::randn({feature::kSpatialWidth}, sd, rng);
  p["mask.temporal"] = Tensor::randn({feature::kTemporalWidth}, sd, rng);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    p[pre + "ln1.gain"] = Tensor::full({d}, 1.0);
    p[pre + "ln1.bias"] = Tensor::zeros({d});
    for (const char* w : {"q", "k", "v", "o"}) {
      p[pre + "attn.W" + w] = Tensor::randn({d, d}, sd, rng);
      p[pre + "attn.b" + w] = Tensor::zeros({d});
    }
    p[pre + "ln2.gain"] = Tensor::full({d}, 1.0);
    p[pre + "ln2.bias"] = Tensor::zeros({d});
    p[pre + "ff1.W"] = Tensor::randn({d, cfg.d_ff}, sd, rng);
    p[pre + "ff1.b"] = Tensor::zeros({cfg.d_ff});
    p[pre + "ff2.W"] = Tensor::randn({cfg.d_ff, d}, sd, rng);
    p[pre + "ff2.b"] = Tensor::zeros({d});
  }
  p["final_ln.gain"] = Tensor::full({d}, 1.0);
  p["final_ln.bias"] = Tensor::zeros({d});
  p["head.W"] = Tensor::zeros({d, ModelConfig::out_dim});
  p["head.b"] = Tensor::zeros({ModelConfig::out_dim});
  return p;
}

BoundParams bind_parameters(Tape& tape, const ParameterSet& params) {
  BoundParams bound;
  for (const auto& [name, value] : params) bound.emplace(name, tape.leaf(value));
  return bound;
}

GradientSet collect_gradients(const Tape& tape, const BoundParams& bound) {
  GradientSet grads;
  for (const auto& [name, var] : bound) grads.emplace(name, tape.grad(var));
  return grads;
}

std::size_t parameter_count(const ParameterSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

}  // namespace trajformer
