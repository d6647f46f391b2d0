#include "pwtp/autodiff.hpp"

namespace pwtp::ad {

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

const Tensor& Var::grad() const {
  const auto& node = tape_->nodes_.at(id_);
  if (!node.requires_grad) throw Error("gradient requested for a node that does not require one");
  return node.grad;
}

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error("op mixes variables from different tapes");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad && !backward) throw Error("differentiable op recorded without backward");
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this) throw Error("backward root belongs to another tape");
  Node& r = nodes_.at(root.id_);
  if (r.value.size() != 1) throw Error("backward root must be a scalar");
  if (!r.requires_grad) throw Error("backward root does not depend on any parameter");

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && i <= root.id_) {
      if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
        n.grad = Tensor(n.value.shape(), 0.0);
      } else {
        n.grad.fill(0.0);
      }
    } else {
      n.grad = Tensor();
    }
  }
  r.grad[0] = 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      in_values.push_back(&src.value);
      in_grads.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.backward(GradContext{n.value, n.grad, in_values, in_grads});
  }
}

}  // namespace pwtp::ad
