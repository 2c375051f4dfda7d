// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adanas/tensor.hpp"

namespace adanas {

/// A trainable tensor that outlives any single tape. Tape::backward
/// accumulates into `grad`; optimizers read it and reset it.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const noexcept { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order, so the node
/// vector is already a topological order; backward walks it in reverse.
class Tape {
 public:
  /// Called during backward with the output node id; it reads grad(out) and
  /// accumulates into its inputs through grad_buffer().
  using BackwardFn = std::function<void(Tape&, std::size_t out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf not bound to a Parameter (used by grad_check).
  Var leaf(Tensor value);
  /// One leaf per Parameter per tape; repeated calls return the same node.
  Var param(Parameter& p);

  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward target w.r.t. v; empty when none reached v.
  const Tensor& grad(Var v) const { return nodes_[v.id()].grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

  /// Seeds d(target)/d(target) = 1 and runs the recorded backward functions.
  /// A tape supports one backward pass.
  void backward(Var target);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of recorded nodes whose op name equals `op`.
  std::size_t op_count(std::string_view op) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // references stay valid across appends
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace adanas
