#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "icare/params.hpp"
#include "icare/tensor.hpp"

namespace icare {

/// Handle to a node on a Tape. Only meaningful for the tape that produced it.
struct Var {
  Index id = -1;
  bool valid() const { return id >= 0; }
};

/// Record of one forward pass. Operations append nodes holding their output
/// value plus a closure that propagates the node's gradient to its parents;
/// backward() replays the closures in reverse creation order (creation order
/// is a topological order because parents always precede their consumers).
///
/// Trainable leaves reference external Parameter storage: after backward()
/// their gradients have been accumulated into Parameter::grad, so parameters
/// persist across tapes while intermediate state dies with the tape.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-trainable input node.
  Var leaf(Tensor<S> value) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), nullptr, {}});
    return Var{static_cast<Index>(nodes_.size()) - 1};
  }

  /// Trainable leaf backed by external storage.
  Var param(Parameter<S>& p) {
    nodes_.push_back(Node{p.value, Tensor<S>(), &p, {}});
    return Var{static_cast<Index>(nodes_.size()) - 1};
  }

  /// Interior node produced by an operation. The closure runs during
  /// backward() with this node's gradient fully accumulated.
  Var make(Tensor<S> value, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), nullptr, std::move(backward_fn)});
    return Var{static_cast<Index>(nodes_.size()) - 1};
  }

  /// Attaches the backward closure after the node exists, so the closure can
  /// capture its own handle.
  void set_backward(Var v, std::function<void()> backward_fn) {
    node(v.id).backward_fn = std::move(backward_fn);
  }

  const Tensor<S>& value(Var v) const { return node(v.id).value; }

  /// Gradient buffer of a node, allocated (zeroed) on first touch.
  Tensor<S>& grad(Var v) { return grad_buf(v.id); }

  /// True once backward() has deposited anything into the node.
  bool has_grad(Var v) const { return node(v.id).grad.same_shape(node(v.id).value) && !node(v.id).grad.empty(); }

  Index size() const { return static_cast<Index>(nodes_.size()); }

  /// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1 and
  /// accumulates into every reachable node; parameter leaves additionally
  /// accumulate into their Parameter::grad.
  void backward(Var root) {
    if (!root.valid() || root.id >= size()) throw UsageError("backward: invalid root node");
    if (node(root.id).value.size() != 1)
      throw UsageError("backward: root must be a scalar, got shape " + shape_str(node(root.id).value.shape()));
    grad_buf(root.id).fill(S(1));
    for (Index i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty()) continue;  // node not reachable from root
      if (n.backward_fn) n.backward_fn();
      if (n.param != nullptr) {
        if (!n.param->grad_ready()) n.param->zero_grad();
        n.param->grad.array() += n.grad.array();
      }
    }
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // empty until touched
    Parameter<S>* param = nullptr;
    std::function<void()> backward_fn;
  };

  const Node& node(Index id) const {
    if (id < 0 || id >= size()) throw UsageError("invalid tape node handle");
    return nodes_[static_cast<std::size_t>(id)];
  }
  Node& node(Index id) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(id)); }

  Tensor<S>& grad_buf(Index id) {
    Node& n = node(id);
    if (n.grad.empty() || !n.grad.same_shape(n.value)) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  std::deque<Node> nodes_;
};

}  // namespace icare
