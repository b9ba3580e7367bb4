#pragma once

#include <cstdint>

#include "voxreg/network.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

/// Deterministic synthetic phantom: soft-edged ellipsoid structures with
/// distinct label classes and intensity bands over a textured background.
struct Phantom {
  Volume volume;    // intensities in [0,1]
  LabelMap labels;  // 0 = background, 1..num_labels = structures
  std::uint64_t seed = 0;
};

struct PhantomOptions {
  Index num_labels = 6;
  double texture = 0.08;  // amplitude of the smooth intensity texture
};

/// Every label class (including background) is guaranteed to occupy at least
/// 1% of the voxels; placement is retried with fresh geometry on violation.
Phantom make_phantom(std::uint64_t seed, const std::array<Index, 3>& dims,
                     const PhantomOptions& options = {});

struct SmoothFieldOptions {
  double amplitude = 3.0;   // max |u| in voxels after rescale
  double smoothness = 4.0;  // Gaussian kernel std in voxels
};

/// Per-axis white noise, Gaussian-blurred, rescaled so the maximum
/// displacement norm equals `amplitude`. Amplitude 0 gives the zero field.
DeformationField random_smooth_field(std::uint64_t seed,
                                     const std::array<Index, 3>& dims,
                                     const SmoothFieldOptions& options = {});

/// A registration task with a known good solution: fixed is the moving
/// phantom pushed through a diffeomorphic ground-truth field.
struct SynthPair {
  Phantom moving;
  Phantom fixed;
  DeformationField gt_field;
  double baseline_dice = 0.0;  // dice(moving.labels, fixed.labels) pre-warp
};

struct SynthPairOptions {
  PhantomOptions phantom;
  SmoothFieldOptions field;
};

/// Deterministic per seed. The field amplitude is backed off (halved, up to
/// a few times) if the draw ever folds, keeping the ground truth
/// diffeomorphic by construction.
SynthPair make_pair(std::uint64_t seed, const std::array<Index, 3>& dims,
                    const SynthPairOptions& options = {});

}  // namespace voxreg
