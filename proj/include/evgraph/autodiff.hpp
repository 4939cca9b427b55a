#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evgraph/tensor.hpp"

namespace evg::ad {

/// A trainable tensor that outlives individual tapes.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  /// Gradient after backward(); zeros if the value did not influence the loss.
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order; backward() walks it once in reverse. A tape is consumed
/// by backward() and cannot be differentiated again.
class Tape {
 public:
  /// Reads the gradient of node `self` and accumulates into its inputs.
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a parameter; backward() adds the leaf gradient into `p.grad`.
  Var parameter(Parameter& p);
  /// Records an op output. `fn` is dropped when no input requires a gradient.
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(int id);
  const Tensor& grad(int id) const;

  void backward(Var loss);
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Elementwise ops. `b` may also have a shape equal to a trailing part of `a`'s
// shape, in which case it is repeated over the leading dimensions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);

/// (n x k) * (k x m).
Var matmul(Var a, Var b);
/// Sum of all elements as a rank-0 tensor.
Var sum(Var a);
Var reshape(Var a, Tensor::Shape shape);
/// Concatenation along `axis`; all other dimensions must agree.
Var concat(std::span<const Var> parts, std::size_t axis);
/// out[i] = a[index[i]] along the first dimension.
Var gather_rows(Var a, std::span<const std::uint32_t> index);

// Reductions of rows of `a` into `num_segments` groups. Empty segments yield 0.
// segment_max routes the gradient to the arg-max row (lowest row on ties).
Var segment_sum(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments);
Var segment_mean(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments);
Var segment_max(Var a, std::span<const std::uint32_t> segment, std::size_t num_segments);

/// Inverted dropout: zeroes with probability p and scales survivors by 1/(1-p) in training; identity otherwise.
Var dropout(Var a, double p, bool train, std::uint64_t seed);

/// Mean softmax cross-entropy of (batch x classes) logits against integer labels.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace evg::ad
