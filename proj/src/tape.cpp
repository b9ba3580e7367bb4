#include "voxreg/tape.hpp"

#include <stdexcept>

namespace voxreg {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

const Tensor& GradientMap::at(const Tensor& param) const {
  if (param.node < 0) {
    throw std::runtime_error("gradient lookup for an unwatched tensor");
  }
  auto it = grads_.find(param.node);
  if (it == grads_.end()) {
    throw std::runtime_error("missing gradient for node " +
                             std::to_string(param.node));
  }
  return it->second;
}

int Tape::watch(Tensor& t) {
  if (consumed_) throw std::runtime_error("tape already consumed");
  t.requires_grad = true;
  Node node;
  node.shape = t.shape();
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  t.node = static_cast<int>(nodes_.size()) - 1;
  return t.node;
}

int Tape::record(Shape out_shape, Backprop fn) {
  if (consumed_) throw std::runtime_error("tape already consumed");
  Node node;
  node.shape = std::move(out_shape);
  node.backprop = std::move(fn);
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const ArrayXd& g) {
  ArrayXd& buf = grads_[static_cast<size_t>(node)];
  if (buf.size() == 0) {
    buf = g;
  } else {
    buf += g;
  }
}

GradientMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::runtime_error("tape already consumed");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss");
  }
  if (loss.node < 0 ||
      static_cast<size_t>(loss.node) >= nodes_.size()) {
    throw std::invalid_argument("loss is not connected to this tape");
  }

  grads_[static_cast<size_t>(loss.node)] = ArrayXd::Constant(1, 1.0);

  for (int i = loss.node; i >= 0; --i) {
    const Node& node = nodes_[static_cast<size_t>(i)];
    ArrayXd& g = grads_[static_cast<size_t>(i)];
    if (g.size() == 0) continue;  // never influenced the loss
    if (node.backprop) node.backprop(*this, g);
  }

  GradientMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf) continue;
    ArrayXd g = grads_[i].size() > 0 ? grads_[i]
                                     : ArrayXd::Zero(numel(node.shape));
    out.grads_.emplace(static_cast<int>(i), Tensor(node.shape, std::move(g)));
  }

  nodes_.clear();
  grads_.clear();
  consumed_ = true;
  return out;
}

}  // namespace voxreg
