#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reltr/common.hpp"

namespace reltr {

template <class Scalar>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
template <class Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Mat<Scalar>& value() const { return tape_->value(id_); }
  const Mat<Scalar>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so iterating
// backwards from the loss node visits a valid topological order. A tape is
// built per forward pass and backward() runs at most once.
template <class Scalar>
class Tape {
 public:
  using PullFn = std::function<void(Tape&, int self)>;

  Var<Scalar> constant(Mat<Scalar> value) {
    require_finite(value, "tape constant");
    return push(std::move(value), nullptr);
  }

  // Binds parameter storage as a leaf; repeated binds of the same storage
  // return the same node so gradients accumulate in one place.
  Var<Scalar> param(const Mat<Scalar>& storage) {
    auto it = param_ids_.find(&storage);
    if (it != param_ids_.end()) return Var<Scalar>(this, it->second);
    require_finite(storage, "tape parameter");
    Var<Scalar> v = push(storage, nullptr);
    param_ids_.emplace(&storage, v.id());
    return v;
  }

  template <class F>
  Var<Scalar> make(Mat<Scalar> value, F&& pull) {
    return push(std::move(value), PullFn(std::forward<F>(pull)));
  }

  const Mat<Scalar>& value(int id) const { return nodes_[id].value; }

  const Mat<Scalar>& grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      zero_.setZero(n.value.rows(), n.value.cols());
      return zero_;
    }
    return n.grad;
  }

  // Gradient for bound parameter storage; nullptr when the parameter never
  // entered this tape or received no gradient.
  const Mat<Scalar>* grad_of(const Mat<Scalar>& storage) const {
    auto it = param_ids_.find(&storage);
    if (it == param_ids_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    if (n.grad.size() == 0) return nullptr;
    return &n.grad;
  }

  template <class Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<Scalar>::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  // Seeds d(root)/d(root) = seed and propagates to every reachable node.
  void backward(const Var<Scalar>& root, Scalar seed = Scalar(1)) {
    if (root.rows() != 1 || root.cols() != 1)
      throw DimensionError("backward root must be a scalar, got " +
                           shape_str(root.rows(), root.cols()));
    accumulate(root.id(), Mat<Scalar>::Constant(1, 1, seed));
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.pull) n.pull(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    PullFn pull;
  };

  Var<Scalar> push(Mat<Scalar> value, PullFn pull) {
    nodes_.push_back(Node{std::move(value), Mat<Scalar>(), std::move(pull)});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Mat<Scalar>*, int> param_ids_;
  mutable Mat<Scalar> zero_;
};

}  // namespace reltr
