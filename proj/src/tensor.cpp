#include "trajformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace trajformer {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::logic_error("Var is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("Vars belong to different tapes");
  return tape_of(a);
}

// outer × axis × inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape_) + " cannot hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---- Tape ---------------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw std::logic_error("input recorded on a different tape");
    needs = needs || nodes_.at(in.id).requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

double* Tape::grad_buffer(Var v) {
  auto& node = nodes_.at(v.id);
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad.data();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::logic_error("loss recorded on a different tape");
  if (value(loss).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  double* seed = grad_buffer(loss);
  if (seed == nullptr) return;
  seed[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    // The node's own buffer is never touched by its backward rule.
    node.backward(*this, node.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& node = nodes_.at(v.id);
  if (node.grad.empty()) return Tensor(node.value.shape());
  return Tensor(node.value.shape(), node.grad);
}

// ---- elementwise --------------------------------------------------------

Var add(Var a, Var b) {
  auto& tape = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [a, b](Tape& t, std::span<const double> g) {
    for (Var v : {a, b}) {
      if (double* dst = t.grad_buffer(v)) {
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  auto& tape = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [a, b](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (double* db = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  auto& tape = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [a, b](Tape& t, std::span<const double> g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (double* db = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  auto& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [a, s](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * s;
    }
  });
}

Var add_scalar(Var a, double s) {
  auto& tape = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [a](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  auto& tape = tape_of(x, bias);
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.dim(0)) {
    throw ShapeError("add_bias: cannot add " + shape_str(bv.shape()) + " to " +
                     shape_str(xv.shape()));
  }
  const std::size_t d = bv.size();
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  const Var ins[] = {x, bias};
  return tape.record(std::move(out), ins, [x, bias, d](Tape& t, std::span<const double> g) {
    if (double* dx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (double* db = t.grad_buffer(bias)) {
      for (std::size_t i = 0; i < g.size(); ++i) db[i % d] += g[i];
    }
  });
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor c({m, n});
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* cp = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cp + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ap[i * k + p];
      // Masked attention weights are exact zeros; skipping them keeps rows
      // independent of the values they would multiply.
      if (aip == 0.0) continue;
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Var matmul(Var a, Var b) {
  auto& tape = tape_of(a, b);
  Tensor out = matmul_values(a.value(), b.value());
  const Var ins[] = {a, b};
  return tape.record(std::move(out), ins, [a, b](Tape& t, std::span<const double> g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (double* da = t.grad_buffer(a)) {
      // dA = dC · Bᵀ
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          da[i * k + p] += acc;
        }
      }
    }
    if (double* db = t.grad_buffer(b)) {
      // dB = Aᵀ · dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  auto& tape = tape_of(a);
  const auto& av = a.value();
  require_rank("transpose", av, 2);
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [a, r, c](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  auto& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [a](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto& tape = tape_of(parts[0]);
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit whole = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& pv = p.value();
    const std::size_t width = pv.dim(axis) * whole.inner;
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.data().begin() + o * width, width,
                  out.data().begin() + o * whole.extent * whole.inner + offset * whole.inner);
    }
    offsets.push_back(offset);
    offset += pv.dim(axis);
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return tape.record(std::move(out), ins,
                     [ins, offsets, whole, axis](Tape& t, std::span<const double> g) {
                       for (std::size_t k = 0; k < ins.size(); ++k) {
                         double* dp = t.grad_buffer(ins[k]);
                         if (dp == nullptr) continue;
                         const std::size_t width = t.value(ins[k]).dim(axis) * whole.inner;
                         for (std::size_t o = 0; o < whole.outer; ++o) {
                           const double* src =
                               g.data() + o * whole.extent * whole.inner + offsets[k] * whole.inner;
                           for (std::size_t i = 0; i < width; ++i) dp[o * width + i] += src[i];
                         }
                       }
                     });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  auto& tape = tape_of(a);
  const auto& av = a.value();
  if (axis >= av.rank() || start + length > av.dim(axis) || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") invalid on axis " + std::to_string(axis) +
                     " of " + shape_str(av.shape()));
  }
  const AxisSplit s = split_at(av.shape(), axis);
  Shape out_shape = av.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t width = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data().begin() + (o * s.extent + start) * s.inner, width,
                out.data().begin() + o * width);
  }
  const Var ins[] = {a};
  return tape.record(std::move(out), ins, [a, s, start, width](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst = da + (o * s.extent + start) * s.inner;
        for (std::size_t i = 0; i < width; ++i) dst[i] += g[o * width + i];
      }
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  auto& tape = tape_of(table);
  const auto& tv = table.value();
  require_rank("gather_rows", tv, 2);
  const std::size_t n = tv.dim(0), d = tv.dim(1);
  Tensor out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range " +
                       std::to_string(n));
    }
    std::copy_n(tv.data().begin() + indices[r] * d, d, out.data().begin() + r * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const Var ins[] = {table};
  return tape.record(std::move(out), ins, [table, idx, d](Tape& t, std::span<const double> g) {
    if (double* dt = t.grad_buffer(table)) {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) dt[idx[r] * d + j] += g[r * d + j];
    }
  });
}

// ---- reductions ---------------------------------------------------------

Var sum(Var a) {
  auto& tape = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  const Var ins[] = {a};
  return tape.record(Tensor::scalar(acc), ins, [a](Tape& t, std::span<const double> g) {
    if (double* da = t.grad_buffer(a)) {
      const std::size_t n = t.value(a).size();
      for (std::size_t i = 0; i < n; ++i) da[i] += g[0];
    }
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---- nonlinearities -----------------------------------------------------

Var softmax_rows(Var x, const std::vector<bool>* allowed) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  require_rank("softmax_rows", xv, 2);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (allowed != nullptr && allowed->size() != m * n) {
    throw ShapeError("softmax_rows: mask extent does not match " + shape_str(xv.shape()));
  }
  auto ok = [allowed](std::size_t i) { return allowed == nullptr || (*allowed)[i]; };
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (ok(i * n + j)) mx = std::max(mx, xv[i * n + j]);
    if (!std::isfinite(mx)) throw ShapeError("softmax_rows: row without allowed entries");
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!ok(i * n + j)) continue;
      const double e = std::exp(xv[i * n + j] - mx);
      out[i * n + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= denom;
  }
  // The rule reads the output probabilities; that node's id is the next one.
  const Var y_ref{&tape, tape.size()};
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x, y_ref, m, n](Tape& t, std::span<const double> g) {
    double* dx = t.grad_buffer(x);
    if (dx == nullptr) return;
    const auto& y = t.value(y_ref);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        const double yij = y[i * n + j];
        if (yij != 0.0) dx[i * n + j] += yij * (g[i * n + j] - dot);
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  auto& tape = tape_of(x, gain);
  const auto& xv = x.value();
  const std::size_t d = xv.rank() ? xv.shape().back() : 0;
  if (d < 2 || gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: input " + shape_str(xv.shape()) + " with gain " +
                     shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = xv.size() / d;
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  // Normalized values and inverse std are kept for the backward rule.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const Var ins[] = {x, gain, bias};
  return tape.record(
      std::move(out), ins,
      [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::span<const double> g) {
        const auto& gv = t.value(gain);
        if (double* dg = t.grad_buffer(gain)) {
          for (std::size_t i = 0; i < g.size(); ++i) dg[i % d] += g[i] * xhat[i];
        }
        if (double* db = t.grad_buffer(bias)) {
          for (std::size_t i = 0; i < g.size(); ++i) db[i % d] += g[i];
        }
        double* dx = t.grad_buffer(x);
        if (dx == nullptr) return;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            dx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Var gelu(Var x) {
  auto& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.data()) v = gelu_value(v);
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x](Tape& t, std::span<const double> g) {
    double* dx = t.grad_buffer(x);
    if (dx == nullptr) return;
    const auto& xv = t.value(x);
    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sine(Var x) {
  auto& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::sin(v);
  const Var ins[] = {x};
  return tape.record(std::move(out), ins, [x](Tape& t, std::span<const double> g) {
    if (double* dx = t.grad_buffer(x)) {
      const auto& xv = t.value(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * std::cos(xv[i]);
    }
  });
}

}  // namespace trajformer
