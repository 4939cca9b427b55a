#include "evgraph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evgraph/errors.hpp"
#include "evgraph/random.hpp"

namespace evg::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

// --- tape -------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  bool req = false;
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw Error("op mixes values from different tapes");
    req = req || requires_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), {}, req, req ? std::move(fn) : Backward{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad(int id) {
  auto& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(int id) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("backward: loss belongs to another tape");
  if (consumed_) throw Error("backward: tape already consumed; record a new tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  grad(loss.id()).fill(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() != n.value.size()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      if (n.param->grad.size() != n.grad.size()) n.param->grad = Tensor(n.param->value.shape());
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

// --- elementwise --------------------------------------------------------------------

namespace {

bool is_suffix(const Tensor::Shape& big, const Tensor::Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Shape check shared by the binary elementwise ops; returns the repeat period of b.
std::size_t broadcast_period(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.size();
  if (is_suffix(a.shape(), b.shape()) && b.size() > 0) return b.size();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

template <typename Fwd>
Tensor binary_forward(const Tensor& a, const Tensor& b, std::size_t period, Fwd f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % period]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  const auto period = broadcast_period("add", a.value(), b.value());
  Tensor out = binary_forward(a.value(), b.value(), period, [](double x, double y) { return x + y; });
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, period](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  const auto period = broadcast_period("sub", a.value(), b.value());
  Tensor out = binary_forward(a.value(), b.value(), period, [](double x, double y) { return x - y; });
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, period](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const auto period = broadcast_period("mul", a.value(), b.value());
  Tensor out = binary_forward(a.value(), b.value(), period, [](double x, double y) { return x * y; });
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, period](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& va = t.value(ia);
    const Tensor& vb = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i % period];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] += g[i] * va[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out(a.shape());
  const auto& va = a.value();
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = s * va[i];
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var relu(Var a) {
  Tensor out(a.shape());
  const auto& va = a.value();
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

// --- linear algebra and reshaping -------------------------------------------------------

Var matmul(Var a, Var b) {
  const auto& va = a.value();
  const auto& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(va.shape()) + " and " + shape_string(vb.shape()));
  }
  const std::size_t n = va.dim(0), k = va.dim(1), m = vb.dim(1);
  Tensor out({n, m});
  gemm(va.ptr(), n, k, false, vb.ptr(), k, m, false, out.ptr(), false);
  const int ia = a.id();
  const int ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) gemm(g.ptr(), n, m, false, t.value(ib).ptr(), k, m, true, t.grad(ia).ptr(), true);
    if (t.requires_grad(ib)) gemm(t.value(ia).ptr(), n, k, true, g.ptr(), n, m, false, t.grad(ib).ptr(), true);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const int ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, int self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ia).data()) v += g;
  });
}

Var reshape(Var a, Tensor::Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for shape " + shape_string(first));
  Tensor::Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_stride = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::vector<int> ids;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const std::size_t block = v.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.ptr() + o * block, block, out.ptr() + o * out_stride + offset);
    }
    offsets.push_back(offset);
    ids.push_back(p.id());
    offset += block;
  }
  return parts[0].tape().record(std::move(out), parts, [ids, offsets, outer, out_stride](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.grad(ids[k]);
      const std::size_t block = gp.size() / std::max<std::size_t>(outer, 1);
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = g.ptr() + o * out_stride + offsets[k];
        double* dst = gp.ptr() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    }
  });
}

Var gather_rows(Var a, std::span<const std::uint32_t> index) {
  const auto& va = a.value();
  if (va.rank() < 1) throw ShapeError("gather_rows: input must have rank >= 1");
  const std::size_t width = va.row_size();
  Tensor::Shape shape = va.shape();
  shape[0] = index.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= va.dim(0)) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for shape " +
                       shape_string(va.shape()));
    }
    std::copy_n(va.ptr() + index[i] * width, width, out.ptr() + i * width);
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, idx = std::move(idx), width](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < width; ++c) ga[idx[i] * width + c] += g[i * width + c];
    }
  });
}

// --- segment reductions ------------------------------------------------------------------

namespace {

void check_segments(const char* op, const Tensor& a, std::span<const std::uint32_t> segment, std::size_t num) {
  if (a.rank() < 1 || segment.size() != a.dim(0)) {
    throw ShapeError(std::string(op) + ": " + std::to_string(segment.size()) + " segment ids for shape " +
                     shape_string(a.shape()));
  }
  for (auto s : segment) {
    if (s >= num) throw ShapeError(std::string(op) + ": segment id " + std::to_string(s) + " >= " + std::to_string(num));
  }
}

Tensor::Shape segment_shape(const Tensor& a, std::size_t num) {
  Tensor::Shape s = a.shape();
  s[0] = num;
  return s;
}

}  // namespace

Var segment_sum(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments) {
  const auto& va = a.value();
  check_segments("segment_sum", va, segment, num_segments);
  const std::size_t w = va.row_size();
  Tensor out(segment_shape(va, num_segments));
  for (std::size_t r = 0; r < segment.size(); ++r) {
    for (std::size_t c = 0; c < w; ++c) out[segment[r] * w + c] += va[r * w + c];
  }
  std::vector<std::uint32_t> seg(segment.begin(), segment.end());
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, seg = std::move(seg), w](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * w + c] += g[seg[r] * w + c];
    }
  });
}

Var segment_mean(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments) {
  const auto& va = a.value();
  check_segments("segment_mean", va, segment, num_segments);
  const std::size_t w = va.row_size();
  std::vector<double> inv(num_segments, 0.0);
  for (auto s : segment) inv[s] += 1.0;
  for (auto& c : inv) c = c > 0 ? 1.0 / c : 0.0;
  Tensor out(segment_shape(va, num_segments));
  for (std::size_t r = 0; r < segment.size(); ++r) {
    for (std::size_t c = 0; c < w; ++c) out[segment[r] * w + c] += va[r * w + c] * inv[segment[r]];
  }
  std::vector<std::uint32_t> seg(segment.begin(), segment.end());
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, seg = std::move(seg), inv = std::move(inv), w](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * w + c] += g[seg[r] * w + c] * inv[seg[r]];
    }
  });
}

Var segment_max(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments) {
  const auto& va = a.value();
  check_segments("segment_max", va, segment, num_segments);
  const std::size_t w = va.row_size();
  constexpr auto kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> arg(num_segments * w, kNone);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      auto& best = arg[segment[r] * w + c];
      // strict comparison keeps the lowest row on ties
      if (best == kNone || va[r * w + c] > va[best * w + c]) best = static_cast<std::uint32_t>(r);
    }
  }
  Tensor out(segment_shape(va, num_segments));
  for (std::size_t k = 0; k < arg.size(); ++k) {
    if (arg[k] != kNone) out[k] = va[arg[k] * w + k % w];
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, arg = std::move(arg), w](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t k = 0; k < arg.size(); ++k) {
      if (arg[k] != kNone) ga[arg[k] * w + k % w] += g[k];
    }
  });
}

// --- regularization and loss ---------------------------------------------------------------

Var dropout(Var a, double p, bool train, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) return a;
  Rng rng(derive_seed(seed, {0xd4091}));
  const double keep_scale = 1.0 / (1.0 - p);
  const auto& va = a.value();
  std::vector<double> mask(va.size());
  Tensor out(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) {
    mask[i] = uniform01(rng) < p ? 0.0 : keep_scale;
    out[i] = va[i] * mask[i];
  }
  const int ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, mask = std::move(mask)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const auto& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size() || z.dim(0) == 0) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_string(z.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = z.dim(0), q = z.dim(1);
  std::vector<double> prob(b * q);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= q) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside " + std::to_string(q) +
                       " classes");
    }
    double zmax = z.at(i, 0);
    for (std::size_t c = 1; c < q; ++c) zmax = std::max(zmax, z.at(i, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < q; ++c) denom += std::exp(z.at(i, c) - zmax);
    const double log_denom = std::log(denom) + zmax;
    for (std::size_t c = 0; c < q; ++c) prob[i * q + c] = std::exp(z.at(i, c) - log_denom);
    loss += log_denom - z.at(i, static_cast<std::size_t>(labels[i]));
  }
  loss /= static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  const int il = logits.id();
  return logits.tape().record(Tensor::scalar(loss), {logits},
                              [il, prob = std::move(prob), lab = std::move(lab), b, q](Tape& t, int self) {
                                const double g = t.grad(self)[0] / static_cast<double>(b);
                                auto& gz = t.grad(il);
                                for (std::size_t i = 0; i < b; ++i) {
                                  for (std::size_t c = 0; c < q; ++c) {
                                    const double target = static_cast<int>(c) == lab[i] ? 1.0 : 0.0;
                                    gz[i * q + c] += g * (prob[i * q + c] - target);
                                  }
                                }
                              });
}

}  // namespace evg::ad
