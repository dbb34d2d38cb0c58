#include "trajformer/transformer.hpp"

#include <cmath>
#include <numeric>

#include "trajformer/embedding.hpp"

namespace trajformer {

std::vector<bool> causal_mask(std::size_t length) {
  return attention_mask(length, length, AttentionMode::causal);
}

std::vector<bool> attention_mask(std::size_t length, std::size_t valid, AttentionMode mode) {
  if (length == 0) throw ShapeError("attention mask needs at least one position");
  if (valid == 0 || valid > length) throw ShapeError("valid length out of range");
  std::vector<bool> allowed(length * length, false);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t last = mode == AttentionMode::causal ? std::min(i + 1, valid) : valid;
    // Padded query rows past the valid prefix still see the valid keys.
    for (std::size_t j = 0; j < std::max<std::size_t>(last, 1); ++j) allowed[i * length + j] = true;
  }
  return allowed;
}

namespace {

struct RopeAngles {
  std::vector<double> cos, sin;  // [S, head_dim/2]
};

RopeAngles rope_angles(std::span<const std::size_t> positions, std::size_t head_dim) {
  const std::size_t half = head_dim / 2;
  RopeAngles a{std::vector<double>(positions.size() * half),
               std::vector<double>(positions.size() * half)};
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta =
          std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(positions[r]) * theta;
      a.cos[r * half + i] = std::cos(angle);
      a.sin[r * half + i] = std::sin(angle);
    }
  }
  return a;
}

void check_rope_shape(const Shape& s, std::size_t n_positions) {
  if (s.size() != 2 || s[1] % 2 != 0 || s[0] != n_positions) {
    throw ShapeError("apply_rope: need [S, even] input with S positions, got " + shape_str(s));
  }
}

}  // namespace

Var apply_rope(Var x, std::span<const std::size_t> positions) {
  const Shape& s = x.shape();
  check_rope_shape(s, positions.size());
  const std::size_t rows = s[0], hd = s[1], half = hd / 2;
  auto angles = rope_angles(positions, hd);
  const auto& xv = x.value();
  Tensor out({rows, hd});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double c = angles.cos[r * half + i], sn = angles.sin[r * half + i];
      const double a = xv[r * hd + 2 * i], b = xv[r * hd + 2 * i + 1];
      out[r * hd + 2 * i] = a * c - b * sn;
      out[r * hd + 2 * i + 1] = a * sn + b * c;
    }
  }
  const Var ins[] = {x};
  return x.tape->record(std::move(out), ins,
                        [x, rows, hd, half, angles = std::move(angles)](
                            Tape& t, std::span<const double> g) {
                          double* dx = t.grad_buffer(x);
                          if (dx == nullptr) return;
                          // Transpose of the rotation.
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t i = 0; i < half; ++i) {
                              const double c = angles.cos[r * half + i];
                              const double sn = angles.sin[r * half + i];
                              const double ga = g[r * hd + 2 * i], gb = g[r * hd + 2 * i + 1];
                              dx[r * hd + 2 * i] += ga * c + gb * sn;
                              dx[r * hd + 2 * i + 1] += -ga * sn + gb * c;
                            }
                          }
                        });
}

Tensor apply_rope(const Tensor& x, std::span<const std::size_t> positions) {
  Tape tape;
  return apply_rope(tape.constant(x), positions).value();
}

Var attention(Var q, Var k, Var v, const std::vector<bool>* allowed) {
  const Shape& qs = q.shape();
  if (qs.size() != 2 || k.shape() != qs || v.shape().size() != 2 || v.shape()[0] != qs[0]) {
    throw ShapeError("attention: q " + shape_str(qs) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qs[1]));
  Var scores = scale(matmul(q, transpose(k)), inv_sqrt);
  return matmul(softmax_rows(scores, allowed), v);
}

Var multi_head_attention(Var x, const BoundParams& params, const std::string& prefix,
                         const ModelConfig& cfg, const std::vector<bool>& allowed) {
  const std::size_t rows = x.shape().at(0);
  const std::size_t hd = cfg.head_dim();
  auto proj = [&](const char* w) {
    return project(x, params.at(prefix + "W" + w), params.at(prefix + "b" + w));
  };
  Var q = proj("q");
  Var k = proj("k");
  Var v = proj("v");
  std::vector<std::size_t> positions(rows);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Var qh = slice(q, 1, h * hd, hd);
    Var kh = slice(k, 1, h * hd, hd);
    Var vh = slice(v, 1, h * hd, hd);
    if (cfg.rope_enabled) {
      qh = apply_rope(qh, positions);
      kh = apply_rope(kh, positions);
    }
    heads.push_back(attention(qh, kh, vh, &allowed));
  }
  Var merged = heads.size() == 1 ? heads.front() : concat(heads, 1);
  return project(merged, params.at(prefix + "Wo"), params.at(prefix + "bo"));
}

Var transformer_block(Var x, const BoundParams& params, std::size_t index,
                      const ModelConfig& cfg, const std::vector<bool>& allowed) {
  const std::string pre = "block" + std::to_string(index) + ".";
  Var a = layer_norm(x, params.at(pre + "ln1.gain"), params.at(pre + "ln1.bias"), cfg.ln_eps);
  Var h = x + multi_head_attention(a, params, pre + "attn.", cfg, allowed);
  Var b = layer_norm(h, params.at(pre + "ln2.gain"), params.at(pre + "ln2.bias"), cfg.ln_eps);
  Var ff = project(gelu(project(b, params.at(pre + "ff1.W"), params.at(pre + "ff1.b"))),
                   params.at(pre + "ff2.W"), params.at(pre + "ff2.b"));
  return h + ff;
}

Var forward_sequence(Var features, std::size_t valid, const BoundParams& params,
                     const ModelConfig& cfg) {
  Var h = embed_sequence(features, params, cfg);
  const std::size_t rows = h.shape()[0];
  const std::size_t valid_rows = patch_count(valid, cfg.patch_len);
  const auto allowed = attention_mask(rows, valid_rows, cfg.attention_mode);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) h = transformer_block(h, params, b, cfg, allowed);
  h = layer_norm(h, params.at("final_ln.gain"), params.at("final_ln.bias"), cfg.ln_eps);
  return project(h, params.at("head.W"), params.at("head.b"));
}

Var model_forward(const Batch& batch, std::span<const MaskSpec> masks, const BoundParams& params,
                  const ModelConfig& cfg) {
  if (batch.size() == 0) throw ShapeError("model_forward: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) {
    throw ShapeError("model_forward: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(batch.size()) + " rows");
  }
  if (batch.seq_len() > cfg.max_seq) {
    throw ShapeError("sequence length " + std::to_string(batch.seq_len()) + " exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  }
  Tape& tape = *params.begin()->second.tape;
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Var x = tape.constant(batch.sequence_features(b));
    if (!masks.empty() && !masks[b].empty()) {
      x = apply_mask(x, masks[b], params.at("mask.spatial"), params.at("mask.temporal"));
    }
    Var out = forward_sequence(x, batch.lengths[b], params, cfg);
    const Shape s = out.shape();
    rows.push_back(reshape(out, {1, s[0], s[1]}));
  }
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

Tensor predict(const Batch& batch, std::span<const MaskSpec> masks, const ParameterSet& params,
               const ModelConfig& cfg) {
  Tape tape;
  const auto bound = bind_parameters(tape, params);
  return model_forward(batch, masks, bound, cfg).value();
}

}  // namespace trajformer
