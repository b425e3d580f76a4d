#include "datforge/tape.hpp"

#include "datforge/errors.hpp"

namespace datforge {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::feature_extractor:
      return "feature_extractor";
    case ParamGroup::label_predictor:
      return "label_predictor";
    case ParamGroup::domain_classifier:
      return "domain_classifier";
  }
  return "unknown";
}

Parameter::Parameter(std::string name, Tensor value_in, ParamGroup group)
    : value(std::move(value_in)),
      grad(Tensor::zeros_like(value)),
      name_(std::move(name)),
      group_(group) {}

const Tensor& Var::value() const {
  tape_->check_owner(*this);
  return tape_->nodes_[id_].value;
}

Tensor Var::grad() const {
  tape_->check_owner(*this);
  const auto& node = tape_->nodes_[id_];
  return node.has_grad ? node.grad : Tensor::zeros_like(node.value);
}

bool Var::requires_grad() const {
  tape_->check_owner(*this);
  return tape_->nodes_[id_].requires_grad;
}

void Tape::check_owner(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size())
    throw ArgumentError("variable does not belong to this tape");
}

Var Tape::push(Node node) {
  if (!node.value.all_finite())
    throw DomainError("non-finite value produced on tape (shape " +
                      shape_string(node.value.shape()) + ")");
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id_);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::backward(const Var& loss) {
  check_owner(loss);
  if (nodes_[loss.id_].value.size() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_string(nodes_[loss.id_].value.shape()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  Node& root = nodes_[loss.id_];
  root.grad = Tensor(root.value.shape(), 1.0);
  root.has_grad = true;

  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.param != nullptr) n.param->grad += n.grad;
    if (n.backward) {
      BackwardContext ctx(*this, id);
      n.backward(ctx);
    }
  }
}

const Tensor& BackwardContext::input_value(std::size_t i) const {
  return tape_.nodes_[node().inputs.at(i)].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return tape_.nodes_[node().inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) {
  Tape::Node& in = tape_.nodes_[node().inputs.at(i)];
  if (!in.has_grad) {
    in.grad = Tensor::zeros_like(in.value);
    in.has_grad = true;
  }
  return in.grad;
}

}  // namespace datforge
