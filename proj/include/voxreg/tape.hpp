#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "voxreg/tensor.hpp"

namespace voxreg {

class Tape;

/// Gradients for watched leaves of one consumed tape, keyed by node handle.
class GradientMap {
 public:
  bool contains(const Tensor& param) const {
    return param.node >= 0 && grads_.count(param.node) > 0;
  }

  /// Gradient for a watched parameter; throws if the parameter has none.
  const Tensor& at(const Tensor& param) const;

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> grads_;
};

/// Reverse-mode gradient tape. Nodes are appended in forward order and the
/// backward sweep visits them in strict reverse append order, summing each
/// node's gradient across all consumers. A tape is single-use: backward()
/// releases all recorded state.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const ArrayXd& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf (parameter) tensor. Sets requires_grad and assigns the
  /// tensor's node handle for this tape.
  int watch(Tensor& t);

  /// Records an op output; fn scatters the upstream gradient to the inputs.
  int record(Shape out_shape, Backprop fn);

  /// Adds a contribution to a node's gradient buffer.
  void accumulate(int node, const ArrayXd& g);

  bool touched(int node) const {
    return grads_[static_cast<size_t>(node)].size() > 0;
  }

  size_t node_count() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Returns gradients for every watched
  /// leaf (zero-filled when the leaf never influenced the loss) and clears
  /// the tape; the tape cannot be reused afterwards.
  GradientMap backward(const Tensor& loss);

 private:
  struct Node {
    Backprop backprop;  // empty for leaves
    Shape shape;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
  mutable std::vector<ArrayXd> grads_;
  bool consumed_ = false;
};

/// The tape ops record onto, if any. Null means forward-only evaluation.
Tape* active_tape();

/// Scoped activation of a tape for the ops executed inside the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace voxreg
