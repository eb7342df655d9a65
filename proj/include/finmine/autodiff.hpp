#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "finmine/tensor.hpp"

namespace finmine {

/// A named trainable (or frozen) array owned by a model.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

template <typename T>
class Node {
 public:
  explicit Node(Tensor<T> value, bool requires_grad)
      : owned_(std::move(value)), value_(&owned_), requires_grad_(requires_grad) {}
  Node(const Tensor<T>* external, bool requires_grad)
      : value_(external), requires_grad_(requires_grad) {}

  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const Tensor<T>& value() const noexcept { return *value_; }
  bool requires_grad() const noexcept { return requires_grad_; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::vector<T>& grad() {
    if (grad_.empty()) grad_.assign(value_->size(), T{0});
    return grad_;
  }
  const std::vector<T>& grad_or_empty() const noexcept { return grad_; }

  std::function<void()> backward;

 private:
  Tensor<T> owned_;
  const Tensor<T>* value_;
  bool requires_grad_;
  std::vector<T> grad_;
};

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  std::size_t size() const { return node_->value().size(); }
  bool requires_grad() const { return node_->requires_grad(); }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records operations in execution order; backward replays them in reverse.
/// A tape is single-threaded. Parameter nodes reference the parameter's
/// storage, so parameters must outlive the tape and stay unmodified while it
/// is in use.
template <typename T>
class Tape {
 public:
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, "constant"); }
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, "variable"); }

  Var<T> parameter(const Parameter<T>& p) {
    if (auto it = params_.find(&p); it != params_.end()) return it->second;
    auto node = std::make_shared<Node<T>>(&p.value, p.trainable);
    Var<T> v(node);
    params_.emplace(&p, v);
    return v;
  }

  /// Registers a freshly computed op output. Throws NonFiniteValue if any
  /// entry is NaN or infinite.
  Var<T> push(Tensor<T> value, bool requires_grad, const char* op) {
    if (!value.all_finite()) fail(ErrorCode::NonFiniteValue, std::string("non-finite output from ") + op);
    auto node = std::make_shared<Node<T>>(std::move(value), requires_grad);
    nodes_.push_back(node);
    return Var<T>(node);
  }

  void backward(const Var<T>& loss) {
    require(loss.size() == 1, ErrorCode::ShapeMismatch, "backward needs a scalar loss");
    if (!loss.requires_grad()) return;
    loss.node().grad()[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.requires_grad() && n.has_grad() && n.backward) n.backward();
    }
    for (const auto& [param, var] : params_) {
      for (T g : var.node().grad_or_empty()) {
        if (!std::isfinite(static_cast<double>(g)))
          fail(ErrorCode::NonFiniteValue, "non-finite gradient for " + param->name);
      }
    }
  }

  /// Gradient accumulated for a parameter; empty if it did not take part.
  std::span<const T> gradient(const Parameter<T>& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return {};
    return it->second.node().grad_or_empty();
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, Var<T>> params_;
};

}  // namespace finmine
