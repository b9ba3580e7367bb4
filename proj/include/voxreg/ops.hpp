#pragma once

#include "voxreg/tape.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

// Differentiable op set. Every function computes a fresh output tensor and,
// when a tape is active and an input is tracked, records the backward rule.
// Shapes are validated eagerly; violations throw via shape_error().

enum class Axis3 { depth, height, width };

// ---- elementwise / broadcast ------------------------------------------------
// Binary ops accept equal-rank shapes with per-axis sizes equal or 1
// (numpy-style broadcast restricted to matching rank).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// Element-wise max; requires identical shapes. The subgradient routes to the
// argmax input and ties route to the first argument.
Tensor elem_max(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor shift(const Tensor& x, double c);
Tensor sqrt_elem(const Tensor& x);
Tensor gelu(const Tensor& x);   // exact erf form
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, Index axis);  // max-subtracted, stable

// ---- reductions -------------------------------------------------------------
Tensor sum_all(const Tensor& x);   // rank-0
Tensor mean_all(const Tensor& x);  // rank-0
Tensor sum_axis(const Tensor& x, Index axis, bool keepdims = true);

// ---- shape ------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, Index axis, Index start, Index len);
Tensor concat(const Tensor& a, const Tensor& b, Index axis);

// [1,C,D,H,W] <-> [D*H*W, C] token layout for the bottleneck mixer.
Tensor tokens_from_volume(const Tensor& x);
Tensor volume_from_tokens(const Tensor& tokens, Index d, Index h, Index w);

// ---- spatial / nn -----------------------------------------------------------

// Circular shift of a 5D tensor [N,C,D,H,W] along one spatial axis:
// out[i] = x[(i - shift) mod L] on the chosen axis. Any integer shift is
// accepted (reduced mod the axis length); the gradient is a roll by -shift.
Tensor roll3d(const Tensor& x, Axis3 axis, Index shift);

struct Conv3dOpts {
  Index stride = 1;
  Index padding = 0;  // zero-fill
  Index groups = 1;
};

// Cross-correlation of x[N,Cin,D,H,W] with w[Cout,Cin/g,kd,kh,kw] (+ optional
// bias[Cout]). Each output extent must divide exactly:
// D' = (D + 2p - kd)/stride + 1.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* b = nullptr,
              const Conv3dOpts& opts = {});

// Matrix product over the last axis: x[...,Din] * w[Din,Dout] (+ bias[Dout]),
// broadcast over leading axes.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);

// Per-(sample, channel) normalization to zero mean / unit variance over the
// spatial axes, then affine by gamma/beta[C]. Requires >= 2 spatial elements.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

// Trilinear x2 upsampling of [N,C,D,H,W] (half-voxel-centre convention).
Tensor upsample_trilinear_x2(const Tensor& x);

// Deformable warp: out(p) = vol(p + u(p)) with trilinear interpolation and
// clamp-to-border sampling; differentiable in both vol [D,H,W] and
// field [3,D,H,W].
Tensor warp_trilinear(const Tensor& vol, const Tensor& field);

// ---- non-tape helpers reused across modules ---------------------------------
namespace detail {
Index axis3_to_dim(Axis3 axis);  // spatial axis -> dim index in [N,C,D,H,W]
ArrayXd roll_flat(const ArrayXd& data, const Shape& shape, Index dim,
                  Index shift);
bool all_finite(const ArrayXd& a);
void debug_check_finite(const char* op, const Tensor& t);
}  // namespace detail

}  // namespace voxreg
