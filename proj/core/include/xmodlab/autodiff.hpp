// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODLAB_AUTODIFF_HPP_
#define XMODLAB_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xmodlab/error.hpp"
#include "xmodlab/tensor.hpp"

namespace xmodlab {

template <typename T>
class ComputationRecord;

// Handle to one node of a ComputationRecord.
template <typename T>
struct Var {
  ComputationRecord<T>* record = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return record->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return record->requires_grad(id); }
};

// Tape of recorded operations. Node ids are assigned in creation order, so
// every input id is smaller than the id of the node that consumes it and a
// reverse sweep over ids is a valid topological traversal.
template <typename T>
class ComputationRecord {
 public:
  using BackwardFn = std::function<void(ComputationRecord&, std::size_t)>;

  ComputationRecord() = default;
  ComputationRecord(const ComputationRecord&) = delete;
  ComputationRecord& operator=(const ComputationRecord&) = delete;

  // Leaf referring to externally owned storage. When `grad_sink` is given the
  // node requires grad and backward() adds its gradient into the sink.
  Var<T> parameter(const BasicTensor<T>& value, std::vector<T>* grad_sink) {
    Node n;
    n.ref = &value;
    n.sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    return push(std::move(n));
  }

  Var<T> constant(BasicTensor<T> value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  // Leaf that owns its value and receives a gradient (used by tests).
  Var<T> variable(BasicTensor<T> value) {
    Node n;
    n.own = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
  }

  // Records an op output. The backward rule is kept only when some input
  // requires grad; otherwise the node is a constant.
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward) {
    Node n;
    n.own = std::move(value);
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw GraphError("op input is not recorded");
      n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    if (n.requires_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

  const BasicTensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.ref ? *n.ref : n.own;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a node, zero-filled on first access.
  std::vector<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(value(id).numel(), T(0));
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  void backward(Var<T> loss) {
    if (loss.record != this) throw GraphError("loss belongs to another record");
    if (backward_done_) {
      throw GraphError("backward called twice without clearing the record");
    }
    if (value(loss.id).numel() != 1) {
      throw GraphError("backward needs a scalar loss, got shape " +
                       shape_string(value(loss.id).shape()));
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] = T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.sink) {
        std::vector<T>& sink = *n.sink;
        if (sink.size() != n.grad.size()) sink.assign(n.grad.size(), T(0));
        for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += n.grad[i];
      }
    }
  }

  void clear() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> own;
    const BasicTensor<T>* ref = nullptr;
    std::vector<T>* sink = nullptr;
    std::vector<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace xmodlab

#endif  // XMODLAB_AUTODIFF_HPP_
