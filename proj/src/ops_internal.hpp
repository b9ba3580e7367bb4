#pragma once

#include <functional>
#include <utility>

#include "voxreg/ops.hpp"

namespace voxreg::detail {

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad) return true;
  }
  return false;
}

inline void record_output(Tensor& out, Tape::Backprop fn) {
  out.requires_grad = true;
  out.node = active_tape()->record(out.shape(), std::move(fn));
}

// Broadcast plan for two equal-rank shapes (sizes equal or 1 per axis).
struct Bcast {
  Shape out_shape;
  bool same = false;  // identical shapes: fast path
};

Bcast broadcast_shapes(const Shape& a, const Shape& b, const char* op);

// Materializes a tensor's values expanded to `out` (stride-0 on size-1 axes).
ArrayXd expand_to(const ArrayXd& data, const Shape& from, const Shape& out);

// Sums `g` (laid out as `from`) down to shape `to` along broadcast axes.
ArrayXd reduce_to(const ArrayXd& g, const Shape& from, const Shape& to);

}  // namespace voxreg::detail
