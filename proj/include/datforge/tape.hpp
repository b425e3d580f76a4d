#pragma once

// Reverse-mode autodiff. A Tape records every operation of one forward pass
// in topological order; backward() walks it once in reverse.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "datforge/tensor.hpp"

namespace datforge {

enum class ParamGroup { feature_extractor, label_predictor, domain_classifier };

std::string_view group_name(ParamGroup group);

/// Trainable tensor with its gradient buffer. The group is fixed at
/// construction and selects the learning rate used by the optimizer.
class Parameter {
 public:
  Parameter(std::string name, Tensor value, ParamGroup group);

  const std::string& name() const { return name_; }
  ParamGroup group() const { return group_; }

  void zero_grad() { grad.fill(0.0); }

  Tensor value;
  Tensor grad;

 private:
  std::string name_;
  ParamGroup group_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Gradient from the most recent backward(); zeros if none reached it.
  Tensor grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Free leaf that accumulates a gradient readable through Var::grad().
  Var leaf(Tensor value);
  /// Leaf bound to a parameter: backward() adds into p.grad.
  Var param(Parameter& p);

  /// Appends an op node. `fn` is skipped entirely when no input requires
  /// a gradient. Throws DomainError if `value` is not finite.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  /// Propagates d(loss)/d(node) to every node and accumulates into bound
  /// parameters. Parameter gradients add up across calls until zeroed.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);
  void check_owner(const Var& v) const;

  // deque: values handed out by reference survive later records
  std::deque<Node> nodes_;
};

/// What an op's backward function sees: its output value and incoming
/// gradient, its input values, and lazily zeroed input gradient buffers.
class BackwardContext {
 public:
  const Tensor& out_value() const { return node().value; }
  const Tensor& out_grad() const { return node().grad; }
  std::size_t num_inputs() const { return node().inputs.size(); }
  const Tensor& input_value(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  Tensor& input_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t id) : tape_(tape), id_(id) {}
  const Tape::Node& node() const { return tape_.nodes_[id_]; }

  Tape& tape_;
  std::size_t id_;
};

}  // namespace datforge
