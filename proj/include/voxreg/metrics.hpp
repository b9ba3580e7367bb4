#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "voxreg/tensor.hpp"

namespace voxreg {

/// Per-label overlap and field-folding summary.
struct MetricReport {
  std::map<std::uint16_t, double> dice_per_label;
  std::vector<std::uint16_t> undefined_labels;  // absent from both maps
  double dice_mean = 0.0;  // unweighted over evaluated labels
  double njd_percent = 0.0;
};

/// Sorted non-background labels present in either map.
std::vector<std::uint16_t> present_labels(const LabelMap& a, const LabelMap& b);

/// Volume-overlap score per label: 2|A∩B| / (|A|+|B|). Labels absent from
/// both maps are excluded from the mean and recorded as undefined.
MetricReport dice(const LabelMap& a, const LabelMap& b,
                  const std::vector<std::uint16_t>& labels);

/// Per-voxel determinant of J_phi with phi(p) = p + u(p); central differences
/// on interior voxels, one-sided at boundaries. Returns [D,H,W].
Tensor jacobian_determinant(const DeformationField& field);

/// Percentage of voxels with det(J_phi) <= 0 over all voxels.
double njd_percent(const DeformationField& field);

}  // namespace voxreg
