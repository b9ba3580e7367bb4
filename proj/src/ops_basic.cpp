#include <cmath>

#include "ops_internal.hpp"

namespace voxreg {

namespace detail {

bool all_finite(const ArrayXd& a) { return a.isFinite().all(); }

void debug_check_finite(const char* op, const Tensor& t) {
#ifndef NDEBUG
  if (!all_finite(t.array())) {
    throw std::runtime_error(std::string("non-finite values produced by ") +
                             op);
  }
#else
  (void)op;
  (void)t;
#endif
}

Bcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast{a, true};
  if (a.size() != b.size()) {
    shape_error(std::string(op) + ": rank mismatch " + shape_to_string(a) +
                " vs " + shape_to_string(b));
  }
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
      out[i] = std::max(a[i], b[i]);
    } else {
      shape_error(std::string(op) + ": incompatible shapes " +
                  shape_to_string(a) + " vs " + shape_to_string(b));
    }
  }
  return Bcast{std::move(out), false};
}

ArrayXd expand_to(const ArrayXd& data, const Shape& from, const Shape& out) {
  if (from == out) return data;
  const size_t rank = out.size();
  Shape from_strides = row_major_strides(from);
  for (size_t i = 0; i < rank; ++i) {
    if (from[i] == 1 && out[i] != 1) from_strides[i] = 0;
  }
  ArrayXd result(numel(out));
  Shape idx(rank, 0);
  Index src = 0;
  const Index n = result.size();
  for (Index flat = 0; flat < n; ++flat) {
    result(flat) = data(src);
    for (size_t ax = rank; ax-- > 0;) {
      idx[ax]++;
      src += from_strides[ax];
      if (idx[ax] < out[ax]) break;
      src -= from_strides[ax] * out[ax];
      idx[ax] = 0;
    }
  }
  return result;
}

ArrayXd reduce_to(const ArrayXd& g, const Shape& from, const Shape& to) {
  if (from == to) return g;
  const size_t rank = from.size();
  Shape to_strides = row_major_strides(to);
  for (size_t i = 0; i < rank; ++i) {
    if (to[i] == 1 && from[i] != 1) to_strides[i] = 0;
  }
  ArrayXd result = ArrayXd::Zero(numel(to));
  Shape idx(rank, 0);
  Index dst = 0;
  const Index n = g.size();
  for (Index flat = 0; flat < n; ++flat) {
    result(dst) += g(flat);
    for (size_t ax = rank; ax-- > 0;) {
      idx[ax]++;
      dst += to_strides[ax];
      if (idx[ax] < from[ax]) break;
      dst -= to_strides[ax] * from[ax];
      idx[ax] = 0;
    }
  }
  return result;
}

namespace {

// Shared implementation for broadcasting binary ops. `fwd` maps expanded
// operand arrays to output values; `bwd` produces (ga, gb) in expanded layout.
template <class Fwd, class Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 Bwd bwd) {
  Bcast bc = broadcast_shapes(a.shape(), b.shape(), name);
  ArrayXd av = bc.same ? a.array() : expand_to(a.array(), a.shape(), bc.out_shape);
  ArrayXd bv = bc.same ? b.array() : expand_to(b.array(), b.shape(), bc.out_shape);
  Tensor out(bc.out_shape, fwd(av, bv));
  debug_check_finite(name, out);
  if (wants_grad({&a, &b})) {
    record_output(out, [a, b, av, bv, os = bc.out_shape, bwd](
                           Tape& t, const ArrayXd& g) {
      auto [ga, gb] = bwd(g, av, bv);
      if (a.node >= 0) t.accumulate(a.node, reduce_to(ga, os, a.shape()));
      if (b.node >= 0) t.accumulate(b.node, reduce_to(gb, os, b.shape()));
    });
  }
  return out;
}

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out(x.shape(), fwd(x.array()));
  debug_check_finite(name, out);
  if (wants_grad({&x})) {
    record_output(out, [x, bwd](Tape& t, const ArrayXd& g) {
      t.accumulate(x.node, bwd(g, x.array()));
    });
  }
  return out;
}

}  // namespace

}  // namespace detail

using detail::binary_op;
using detail::record_output;
using detail::unary_op;
using detail::wants_grad;

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](const ArrayXd& x, const ArrayXd& y) { return x + y; },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd&) {
        return std::pair<ArrayXd, ArrayXd>(g, g);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](const ArrayXd& x, const ArrayXd& y) { return x - y; },
      [](const ArrayXd& g, const ArrayXd&, const ArrayXd&) {
        return std::pair<ArrayXd, ArrayXd>(g, -g);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](const ArrayXd& x, const ArrayXd& y) { return x * y; },
      [](const ArrayXd& g, const ArrayXd& x, const ArrayXd& y) {
        return std::pair<ArrayXd, ArrayXd>(g * y, g * x);
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](const ArrayXd& x, const ArrayXd& y) { return x / y; },
      [](const ArrayXd& g, const ArrayXd& x, const ArrayXd& y) {
        return std::pair<ArrayXd, ArrayXd>(g / y, -g * x / (y * y));
      });
}

Tensor elem_max(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error("elem_max: shapes must match, got " +
                shape_to_string(a.shape()) + " vs " +
                shape_to_string(b.shape()));
  }
  Tensor out(a.shape(), a.array().max(b.array()));
  if (wants_grad({&a, &b})) {
    record_output(out, [a, b](Tape& t, const ArrayXd& g) {
      // ties route to the first argument
      ArrayXd take_a = (a.array() >= b.array()).cast<double>();
      if (a.node >= 0) t.accumulate(a.node, (g * take_a).eval());
      if (b.node >= 0) t.accumulate(b.node, (g * (1.0 - take_a)).eval());
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      "scale", x, [c](const ArrayXd& v) { return (v * c).eval(); },
      [c](const ArrayXd& g, const ArrayXd&) { return (g * c).eval(); });
}

Tensor shift(const Tensor& x, double c) {
  return unary_op(
      "shift", x, [c](const ArrayXd& v) { return (v + c).eval(); },
      [](const ArrayXd& g, const ArrayXd&) { return g; });
}

Tensor sqrt_elem(const Tensor& x) {
  Tensor out(x.shape(), x.array().sqrt());
  detail::debug_check_finite("sqrt", out);
  if (wants_grad({&x})) {
    record_output(out, [x, y = out](Tape& t, const ArrayXd& g) {
      t.accumulate(x.node, (g * 0.5 / y.array()).eval());
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return unary_op(
      "gelu", x,
      [&](const ArrayXd& v) {
        ArrayXd out(v.size());
        for (Index i = 0; i < v.size(); ++i) {
          out(i) = 0.5 * v(i) * (1.0 + std::erf(v(i) * inv_sqrt2));
        }
        return out;
      },
      [=](const ArrayXd& g, const ArrayXd& v) {
        ArrayXd out(v.size());
        for (Index i = 0; i < v.size(); ++i) {
          double cdf = 0.5 * (1.0 + std::erf(v(i) * inv_sqrt2));
          double pdf = inv_sqrt_2pi * std::exp(-0.5 * v(i) * v(i));
          out(i) = g(i) * (cdf + v(i) * pdf);
        }
        return out;
      });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](const ArrayXd& v) { return v.max(0.0).eval(); },
      [](const ArrayXd& g, const ArrayXd& v) {
        return (g * (v > 0.0).cast<double>()).eval();
      });
}

namespace {

// Splits a shape at `axis` into (outer, lanes, inner) extents so that lane
// elements along `axis` sit `inner` apart.
void lane_split(const Shape& shape, Index axis, Index& outer, Index& lanes,
                Index& inner) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    shape_error("axis out of range");
  }
  outer = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  lanes = shape[static_cast<size_t>(axis)];
  inner = 1;
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    inner *= shape[static_cast<size_t>(i)];
  }
}

}  // namespace

Tensor softmax(const Tensor& x, Index axis) {
  Index outer, lanes, inner;
  lane_split(x.shape(), axis, outer, lanes, inner);
  ArrayXd y(x.size());
  const ArrayXd& v = x.array();
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * lanes * inner + in;
      double m = v(base);
      for (Index l = 1; l < lanes; ++l) m = std::max(m, v(base + l * inner));
      double sum = 0.0;
      for (Index l = 0; l < lanes; ++l) {
        double e = std::exp(v(base + l * inner) - m);
        y(base + l * inner) = e;
        sum += e;
      }
      for (Index l = 0; l < lanes; ++l) y(base + l * inner) /= sum;
    }
  }
  Tensor out(x.shape(), std::move(y));
  detail::debug_check_finite("softmax", out);
  if (wants_grad({&x})) {
    record_output(out, [x, yv = out.array(), outer, lanes, inner](
                           Tape& t, const ArrayXd& g) {
      ArrayXd gx(g.size());
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * lanes * inner + in;
          double dot = 0.0;
          for (Index l = 0; l < lanes; ++l) {
            dot += g(base + l * inner) * yv(base + l * inner);
          }
          for (Index l = 0; l < lanes; ++l) {
            const Index k = base + l * inner;
            gx(k) = (g(k) - dot) * yv(k);
          }
        }
      }
      t.accumulate(x.node, gx);
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out(Shape{}, ArrayXd::Constant(1, x.array().sum()));
  if (wants_grad({&x})) {
    record_output(out, [x](Tape& t, const ArrayXd& g) {
      t.accumulate(x.node, ArrayXd::Constant(x.size(), g(0)).eval());
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_axis(const Tensor& x, Index axis, bool keepdims) {
  Index outer, lanes, inner;
  lane_split(x.shape(), axis, outer, lanes, inner);
  ArrayXd y = ArrayXd::Zero(outer * inner);
  const ArrayXd& v = x.array();
  for (Index o = 0; o < outer; ++o) {
    for (Index l = 0; l < lanes; ++l) {
      for (Index in = 0; in < inner; ++in) {
        y(o * inner + in) += v((o * lanes + l) * inner + in);
      }
    }
  }
  Shape out_shape = x.shape();
  if (keepdims) {
    out_shape[static_cast<size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  Tensor out(std::move(out_shape), std::move(y));
  if (wants_grad({&x})) {
    record_output(out, [x, outer, lanes, inner](Tape& t, const ArrayXd& g) {
      ArrayXd gx(x.size());
      for (Index o = 0; o < outer; ++o) {
        for (Index l = 0; l < lanes; ++l) {
          for (Index in = 0; in < inner; ++in) {
            gx((o * lanes + l) * inner + in) = g(o * inner + in);
          }
        }
      }
      t.accumulate(x.node, gx);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    shape_error("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                shape_to_string(shape));
  }
  Tensor out = x.with_shape(std::move(shape));  // shares storage
  if (wants_grad({&x})) {
    record_output(out,
                  [x](Tape& t, const ArrayXd& g) { t.accumulate(x.node, g); });
  }
  return out;
}

Tensor slice(const Tensor& x, Index axis, Index start, Index len) {
  Index outer, lanes, inner;
  lane_split(x.shape(), axis, outer, lanes, inner);
  if (start < 0 || len < 1 || start + len > lanes) {
    shape_error("slice: range out of bounds");
  }
  ArrayXd y(outer * len * inner);
  const ArrayXd& v = x.array();
  for (Index o = 0; o < outer; ++o) {
    for (Index l = 0; l < len; ++l) {
      const Index src = (o * lanes + start + l) * inner;
      const Index dst = (o * len + l) * inner;
      y.segment(dst, inner) = v.segment(src, inner);
    }
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out(std::move(out_shape), std::move(y));
  if (wants_grad({&x})) {
    record_output(out, [x, outer, lanes, inner, start, len](
                           Tape& t, const ArrayXd& g) {
      ArrayXd gx = ArrayXd::Zero(x.size());
      for (Index o = 0; o < outer; ++o) {
        for (Index l = 0; l < len; ++l) {
          gx.segment((o * lanes + start + l) * inner, inner) =
              g.segment((o * len + l) * inner, inner);
        }
      }
      t.accumulate(x.node, gx);
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, Index axis) {
  if (a.rank() != b.rank()) shape_error("concat: rank mismatch");
  for (Index i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      shape_error("concat: non-axis dims must match, got " +
                  shape_to_string(a.shape()) + " vs " +
                  shape_to_string(b.shape()));
    }
  }
  Index outer, la, inner;
  lane_split(a.shape(), axis, outer, la, inner);
  const Index lb = b.dim(axis);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = la + lb;
  ArrayXd y(numel(out_shape));
  for (Index o = 0; o < outer; ++o) {
    y.segment(o * (la + lb) * inner, la * inner) =
        a.array().segment(o * la * inner, la * inner);
    y.segment(o * (la + lb) * inner + la * inner, lb * inner) =
        b.array().segment(o * lb * inner, lb * inner);
  }
  Tensor out(std::move(out_shape), std::move(y));
  if (wants_grad({&a, &b})) {
    record_output(out,
                  [a, b, outer, la, lb, inner](Tape& t, const ArrayXd& g) {
                    if (a.node >= 0) {
                      ArrayXd ga(a.size());
                      for (Index o = 0; o < outer; ++o) {
                        ga.segment(o * la * inner, la * inner) =
                            g.segment(o * (la + lb) * inner, la * inner);
                      }
                      t.accumulate(a.node, ga);
                    }
                    if (b.node >= 0) {
                      ArrayXd gb(b.size());
                      for (Index o = 0; o < outer; ++o) {
                        gb.segment(o * lb * inner, lb * inner) = g.segment(
                            o * (la + lb) * inner + la * inner, lb * inner);
                      }
                      t.accumulate(b.node, gb);
                    }
                  });
  }
  return out;
}

Tensor tokens_from_volume(const Tensor& x) {
  if (x.rank() != 5 || x.dim(0) != 1) {
    shape_error("tokens_from_volume expects [1,C,D,H,W]");
  }
  const Index c = x.dim(1);
  const Index s = x.dim(2) * x.dim(3) * x.dim(4);
  ArrayXd y(x.size());
  const ArrayXd& v = x.array();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index si = 0; si < s; ++si) {
      y(si * c + ci) = v(ci * s + si);
    }
  }
  Tensor out(Shape{s, c}, std::move(y));
  if (wants_grad({&x})) {
    record_output(out, [x, c, s](Tape& t, const ArrayXd& g) {
      ArrayXd gx(x.size());
      for (Index ci = 0; ci < c; ++ci) {
        for (Index si = 0; si < s; ++si) {
          gx(ci * s + si) = g(si * c + ci);
        }
      }
      t.accumulate(x.node, gx);
    });
  }
  return out;
}

Tensor volume_from_tokens(const Tensor& tokens, Index d, Index h, Index w) {
  if (tokens.rank() != 2) shape_error("volume_from_tokens expects [k,C]");
  const Index s = d * h * w;
  const Index c = tokens.dim(1);
  if (tokens.dim(0) != s) {
    shape_error("volume_from_tokens: token count does not match dims");
  }
  ArrayXd y(tokens.size());
  const ArrayXd& v = tokens.array();
  for (Index ci = 0; ci < c; ++ci) {
    for (Index si = 0; si < s; ++si) {
      y(ci * s + si) = v(si * c + ci);
    }
  }
  Tensor out(Shape{1, c, d, h, w}, std::move(y));
  if (wants_grad({&tokens})) {
    record_output(out, [tokens, c, s](Tape& t, const ArrayXd& g) {
      ArrayXd gt(tokens.size());
      for (Index ci = 0; ci < c; ++ci) {
        for (Index si = 0; si < s; ++si) {
          gt(si * c + ci) = g(ci * s + si);
        }
      }
      t.accumulate(tokens.node, gt);
    });
  }
  return out;
}

}  // namespace voxreg
