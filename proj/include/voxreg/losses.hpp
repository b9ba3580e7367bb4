#pragma once

#include "voxreg/ops.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

enum class SimKind { lncc, mse };

SimKind sim_kind_from_string(const std::string& s);
std::string to_string(SimKind kind);

/// Mean squared intensity difference over the full domain. Differentiable.
Tensor mse_loss(const Volume& fixed, const Volume& warped);

/// Mean windowed Pearson correlation between the two volumes over all
/// positions whose n^3 window lies fully inside the domain (valid-window
/// aggregation). Window variances are floored at eps=1e-5 so zero-variance
/// windows contribute 0. Differentiable. n must be odd and <= every dim.
Tensor lncc_value(const Volume& fixed, const Volume& warped, Index window);

/// Similarity loss: 1 - lncc, or plain mse.
Tensor sim_loss(const Volume& fixed, const Volume& warped, SimKind kind,
                Index window);

/// Smoothness penalty: sum over voxels of the squared forward-difference
/// gradients of all 3 displacement components along all 3 axes, / |domain|.
Tensor reg_loss(const DeformationField& field);

/// Eq-7-style composite: sim_loss(F, warp(M, field)) + lambda * reg_loss.
/// `value` is the live scalar for backward; the doubles record the split.
struct LossBreakdown {
  double sim = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  Tensor value;
};

LossBreakdown total_loss(const Volume& fixed, const Volume& moving,
                         const DeformationField& field, double lambda,
                         SimKind kind, Index window);

// Convenience scalar forms (forward-only).
double mse(const Volume& fixed, const Volume& warped);
double lncc(const Volume& fixed, const Volume& warped, Index window);

}  // namespace voxreg
