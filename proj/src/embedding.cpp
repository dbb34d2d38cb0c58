#include "trajformer/embedding.hpp"

#include <cmath>

#include "trajformer/geo.hpp"

namespace trajformer {

Var project(Var x, Var weight, Var bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || x.shape()[1] != weight.shape()[0]) {
    throw ShapeError("project: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  return add_bias(matmul(x, weight), bias);
}

namespace {

double inv_frequency(std::size_t pair, std::size_t d_model) {
  return std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(d_model));
}

}  // namespace

std::vector<double> positional_encoding(std::size_t pos, std::size_t d_model,
                                        std::size_t max_seq) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ShapeError("positional encoding needs an even d_model, got " + std::to_string(d_model));
  }
  if (pos >= max_seq) {
    throw ShapeError("position " + std::to_string(pos) + " outside [0, " +
                     std::to_string(max_seq) + ")");
  }
  std::vector<double> row(d_model);
  for (std::size_t i = 0; i < d_model / 2; ++i) {
    const double angle = static_cast<double>(pos) * inv_frequency(i, d_model);
    row[2 * i] = std::sin(angle);
    row[2 * i + 1] = std::cos(angle);
  }
  return row;
}

Tensor sinusoidal_table(std::size_t max_seq, std::size_t d_model) {
  Tensor table({max_seq, d_model});
  for (std::size_t pos = 0; pos < max_seq; ++pos) {
    const auto row = positional_encoding(pos, d_model, max_seq);
    std::copy(row.begin(), row.end(), table.data().begin() + pos * d_model);
  }
  return table;
}

Var time2vec(Var tau, Var omega, Var phi) {
  const auto& ts = tau.shape();
  const std::size_t k = omega.shape().at(0);
  if (ts.size() != 2 || ts[1] != 1 || omega.shape().size() != 1 || phi.shape() != omega.shape()) {
    throw ShapeError("time2vec: tau " + shape_str(ts) + ", omega " + shape_str(omega.shape()) +
                     ", phi " + shape_str(phi.shape()));
  }
  Var pre = add_bias(matmul(tau, reshape(omega, {1, k})), phi);
  Var linear = slice(pre, 1, 0, 1);
  if (k == 1) return linear;
  Var periodic = sine(slice(pre, 1, 1, k - 1));
  const Var parts[] = {linear, periodic};
  return concat(parts, 1);
}

std::vector<double> time2vec(double tau, std::span<const double> omega,
                             std::span<const double> phi) {
  std::vector<double> out(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    const double z = omega[i] * tau + phi[i];
    out[i] = i == 0 ? z : std::sin(z);
  }
  return out;
}

Patched patchify(const Tensor& x, std::size_t patch_len) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("patchify needs a non-empty [S, F] tensor");
  if (patch_len == 0) throw ConfigError("patch_len must be positive");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  const std::size_t n = patch_count(rows, patch_len);
  Tensor out({n, patch_len * width});
  // Row-major layout makes a padded [n·P, F] buffer identical to [n, P·F].
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return {std::move(out), rows};
}

Tensor unpatchify(const Patched& p, std::size_t width) {
  if (width == 0 || p.patches.size() < p.valid_rows * width) {
    throw ShapeError("unpatchify: width " + std::to_string(width) + " does not fit patches " +
                     shape_str(p.patches.shape()));
  }
  Tensor out({p.valid_rows, width});
  std::copy_n(p.patches.data().begin(), out.size(), out.data().begin());
  return out;
}

Var patchify(Var x, std::size_t patch_len) {
  const auto& s = x.shape();
  if (s.size() != 2 || s[0] == 0) throw ShapeError("patchify needs a non-empty [S, F] tensor");
  if (patch_len == 1) return x;
  const std::size_t rows = s[0], width = s[1];
  const std::size_t n = patch_count(rows, patch_len);
  Var padded = x;
  if (n * patch_len != rows) {
    Var zeros = x.tape->constant(Tensor({n * patch_len - rows, width}));
    const Var parts[] = {x, zeros};
    padded = concat(parts, 0);
  }
  return reshape(padded, {n, patch_len * width});
}

Var embed_sequence(Var features, const BoundParams& params, const ModelConfig& cfg) {
  const auto& s = features.shape();
  if (s.size() != 2 || s[1] != feature::kWidth) {
    throw ShapeError("embed_sequence expects [S, 7] features, got " + shape_str(s));
  }
  const std::size_t rows = s[0];
  if (rows > cfg.max_seq) {
    throw ShapeError("sequence of " + std::to_string(rows) + " points exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  }
  std::vector<Var> columns;
  columns.push_back(slice(features, 1, feature::kSpatialBegin, feature::kSpatialWidth));
  if (cfg.use_calendar) columns.push_back(slice(features, 1, feature::kDow, 4));
  if (cfg.use_dt) columns.push_back(slice(features, 1, feature::kDt, 1));
  if (cfg.time2vec_k > 0) {
    Var tau = slice(features, 1, feature::kDt, 1);
    columns.push_back(time2vec(tau, params.at("time2vec.omega"), params.at("time2vec.phi")));
  }
  Var x = columns.size() == 1 ? columns.front() : concat(columns, 1);
  x = patchify(x, cfg.patch_len);
  Var h = project(x, params.at("embed.W"), params.at("embed.b"));
  if (cfg.positional_encoding) {
    const std::size_t n = h.shape()[0];
    h = h + features.tape->constant(sinusoidal_table(n, cfg.d_model));
  }
  return h;
}

}  // namespace trajformer
