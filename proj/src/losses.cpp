#include "voxreg/losses.hpp"

#include <stdexcept>

namespace voxreg {

SimKind sim_kind_from_string(const std::string& s) {
  if (s == "lncc") return SimKind::lncc;
  if (s == "mse") return SimKind::mse;
  throw std::invalid_argument("unknown similarity kind '" + s +
                              "' (expected lncc or mse)");
}

std::string to_string(SimKind kind) {
  return kind == SimKind::lncc ? "lncc" : "mse";
}

namespace {

void check_pair(const Volume& f, const Volume& w, const char* op) {
  if (f.rank() != 3 || w.rank() != 3 || f.shape() != w.shape()) {
    shape_error(std::string(op) + ": volumes must be [D,H,W] with equal dims");
  }
}

// Sum over every valid (fully inside) n^3 window via three separable
// valid-mode convolutions with ones kernels.
Tensor box_sums(const Tensor& x5, Index n) {
  Tensor kd = Tensor::constant({1, 1, n, 1, 1}, 1.0);
  Tensor kh = Tensor::constant({1, 1, 1, n, 1}, 1.0);
  Tensor kw = Tensor::constant({1, 1, 1, 1, n}, 1.0);
  return conv3d(conv3d(conv3d(x5, kd), kh), kw);
}

}  // namespace

Tensor mse_loss(const Volume& fixed, const Volume& warped) {
  check_pair(fixed, warped, "mse");
  Tensor d = sub(fixed, warped);
  return mean_all(mul(d, d));
}

Tensor lncc_value(const Volume& fixed, const Volume& warped, Index window) {
  check_pair(fixed, warped, "lncc");
  if (window % 2 == 0 || window < 1) {
    throw std::invalid_argument("lncc: window must be odd and positive");
  }
  for (Index i = 0; i < 3; ++i) {
    if (window > fixed.dim(i)) {
      throw std::invalid_argument("lncc: window exceeds volume extent");
    }
  }
  const double count = static_cast<double>(window * window * window);
  const double eps = 1e-5;  // variance floor

  Shape s5{1, 1, fixed.dim(0), fixed.dim(1), fixed.dim(2)};
  Tensor f = reshape(fixed, s5);
  Tensor w = reshape(warped, s5);

  Tensor sum_f = box_sums(f, window);
  Tensor sum_w = box_sums(w, window);
  Tensor sum_ff = box_sums(mul(f, f), window);
  Tensor sum_ww = box_sums(mul(w, w), window);
  Tensor sum_fw = box_sums(mul(f, w), window);

  Tensor cross = sub(sum_fw, scale(mul(sum_f, sum_w), 1.0 / count));
  Tensor var_f = sub(sum_ff, scale(mul(sum_f, sum_f), 1.0 / count));
  Tensor var_w = sub(sum_ww, scale(mul(sum_w, sum_w), 1.0 / count));

  Tensor floor_t = Tensor::constant(var_f.shape(), eps);
  var_f = elem_max(var_f, floor_t);
  var_w = elem_max(var_w, floor_t);

  Tensor corr = div(cross, sqrt_elem(mul(var_f, var_w)));
  return mean_all(corr);
}

Tensor sim_loss(const Volume& fixed, const Volume& warped, SimKind kind,
                Index window) {
  if (kind == SimKind::mse) return mse_loss(fixed, warped);
  return shift(scale(lncc_value(fixed, warped, window), -1.0), 1.0);
}

Tensor reg_loss(const DeformationField& field) {
  if (field.rank() != 4 || field.dim(0) != 3) {
    shape_error("reg_loss: field must be [3,D,H,W]");
  }
  const double vox =
      static_cast<double>(field.dim(1) * field.dim(2) * field.dim(3));
  Tensor acc = Tensor::zeros(Shape{});
  for (Index axis = 1; axis <= 3; ++axis) {
    const Index len = field.dim(axis);
    Tensor d = sub(slice(field, axis, 1, len - 1),
                   slice(field, axis, 0, len - 1));
    acc = add(acc, sum_all(mul(d, d)));
  }
  return scale(acc, 1.0 / vox);
}

LossBreakdown total_loss(const Volume& fixed, const Volume& moving,
                         const DeformationField& field, double lambda,
                         SimKind kind, Index window) {
  Tensor warped = warp_trilinear(moving, field);
  Tensor sim = sim_loss(fixed, warped, kind, window);
  Tensor reg = reg_loss(field);
  LossBreakdown out;
  out.sim = sim.value();
  out.reg = reg.value();
  out.lambda = lambda;
  out.value = add(sim, scale(reg, lambda));
  out.total = out.value.value();
  return out;
}

double mse(const Volume& fixed, const Volume& warped) {
  return mse_loss(fixed, warped).value();
}

double lncc(const Volume& fixed, const Volume& warped, Index window) {
  return lncc_value(fixed, warped, window).value();
}

}  // namespace voxreg
