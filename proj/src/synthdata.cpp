#include "voxreg/synthdata.hpp"

#include <algorithm>
#include <cmath>

#include "voxreg/metrics.hpp"

namespace voxreg {

namespace {

// Separable Gaussian blur over a [D,H,W] buffer, truncated at 3 sigma,
// renormalized kernel, clamp-to-border taps.
void gaussian_blur(ArrayXd& data, const std::array<Index, 3>& dims,
                   double sigma) {
  if (sigma <= 0.0) return;
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (static_cast<double>(i) / sigma) *
                              (static_cast<double>(i) / sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  const Index d = dims[0], h = dims[1], w = dims[2];
  ArrayXd tmp(data.size());
  auto pass = [&](const ArrayXd& src, ArrayXd& dst, int axis) {
    const Index len = axis == 0 ? d : (axis == 1 ? h : w);
    for (Index z = 0; z < d; ++z) {
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          Index pos[3] = {z, y, x};
          double acc = 0.0;
          for (Index i = -radius; i <= radius; ++i) {
            Index q[3] = {z, y, x};
            q[axis] = std::clamp<Index>(pos[axis] + i, 0, len - 1);
            acc += kernel[static_cast<size_t>(i + radius)] *
                   src((q[0] * h + q[1]) * w + q[2]);
          }
          dst((z * h + y) * w + x) = acc;
        }
      }
    }
  };
  pass(data, tmp, 0);
  pass(tmp, data, 1);
  pass(data, tmp, 2);
  data = tmp;
}

struct Blob {
  double cz, cy, cx;  // centre
  double rz, ry, rx;  // semi-axes
};

// Normalized ellipsoid coordinate: <=1 inside.
inline double blob_eval(const Blob& b, double z, double y, double x) {
  const double dz = (z - b.cz) / b.rz;
  const double dy = (y - b.cy) / b.ry;
  const double dx = (x - b.cx) / b.rx;
  return dz * dz + dy * dy + dx * dx;
}

}  // namespace

Phantom make_phantom(std::uint64_t seed, const std::array<Index, 3>& dims,
                     const PhantomOptions& options) {
  if (options.num_labels < 1) {
    throw std::invalid_argument("make_phantom: need at least one label");
  }
  const Index d = dims[0], h = dims[1], w = dims[2];
  const Index vox = d * h * w;
  const Index min_count = std::max<Index>(1, vox / 100);  // 1% floor
  Rng rng(seed);

  // Smooth texture shared by all structures so windowed correlation has
  // gradients inside homogeneous regions, not only at label edges.
  ArrayXd texture(vox);
  for (Index i = 0; i < vox; ++i) texture(i) = rng.normal();
  gaussian_blur(texture, dims, 2.0);
  const double tmax = texture.abs().maxCoeff();
  if (tmax > 0) texture *= options.texture / tmax;

  const int max_attempts = 200;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Blob> blobs;
    for (Index l = 0; l < options.num_labels; ++l) {
      Blob b;
      b.cz = rng.uniform(0.25, 0.75) * static_cast<double>(d);
      b.cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
      b.cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
      const double lo = 0.14, hi = 0.26;
      b.rz = rng.uniform(lo, hi) * static_cast<double>(d);
      b.ry = rng.uniform(lo, hi) * static_cast<double>(h);
      b.rx = rng.uniform(lo, hi) * static_cast<double>(w);
      blobs.push_back(b);
    }

    LabelMap labels(Shape{d, h, w});
    auto& lab = labels.array_mut();
    ArrayXd intensity(vox);
    std::vector<Index> counts(static_cast<size_t>(options.num_labels) + 1, 0);

    for (Index z = 0; z < d; ++z) {
      for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
          const Index p = (z * h + y) * w + x;
          const double fz = static_cast<double>(z);
          const double fy = static_cast<double>(y);
          const double fx = static_cast<double>(x);
          std::uint16_t label = 0;
          double base = 0.12;  // background band
          // later structures overwrite earlier ones where they overlap
          for (Index l = 0; l < options.num_labels; ++l) {
            const Blob& b = blobs[static_cast<size_t>(l)];
            const double e = blob_eval(b, fz, fy, fx);
            if (e <= 1.0) {
              label = static_cast<std::uint16_t>(l + 1);
              const double band =
                  0.30 + 0.62 * static_cast<double>(l) /
                             std::max<double>(1.0, static_cast<double>(
                                                       options.num_labels - 1));
              const double soft = std::clamp(1.6 * (1.0 - e) + 0.4, 0.0, 1.0);
              base = band * (0.75 + 0.25 * soft);
            }
          }
          lab(p) = label;
          counts[label]++;
          intensity(p) = std::clamp(base + texture(p), 0.0, 1.0);
        }
      }
    }

    bool ok = true;
    for (Index c : counts) {
      if (c < min_count) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;  // new blob placement

    Phantom out;
    out.volume = Volume(Shape{d, h, w}, std::move(intensity));
    out.labels = std::move(labels);
    out.seed = seed;
    return out;
  }
  throw std::runtime_error(
      "make_phantom: could not satisfy the 1% coverage floor");
}

DeformationField random_smooth_field(std::uint64_t seed,
                                     const std::array<Index, 3>& dims,
                                     const SmoothFieldOptions& options) {
  const Index d = dims[0], h = dims[1], w = dims[2];
  const Index vox = d * h * w;
  Rng rng(seed);
  ArrayXd field(3 * vox);
  if (options.amplitude == 0.0) {
    field.setZero();
    return DeformationField(Shape{3, d, h, w}, std::move(field));
  }
  for (Index c = 0; c < 3; ++c) {
    ArrayXd component(vox);
    for (Index i = 0; i < vox; ++i) component(i) = rng.normal();
    gaussian_blur(component, dims, options.smoothness);
    field.segment(c * vox, vox) = component;
  }
  double max_norm = 0.0;
  for (Index p = 0; p < vox; ++p) {
    const double n = std::sqrt(field(p) * field(p) +
                               field(vox + p) * field(vox + p) +
                               field(2 * vox + p) * field(2 * vox + p));
    max_norm = std::max(max_norm, n);
  }
  if (max_norm > 0.0) field *= options.amplitude / max_norm;
  return DeformationField(Shape{3, d, h, w}, std::move(field));
}

SynthPair make_pair(std::uint64_t seed, const std::array<Index, 3>& dims,
                    const SynthPairOptions& options) {
  SynthPair pair;
  pair.moving = make_phantom(seed, dims, options.phantom);

  SmoothFieldOptions fopt = options.field;
  const std::uint64_t field_seed = seed ^ 0x9E3779B97F4A7C15ULL;
  pair.gt_field = random_smooth_field(field_seed, dims, fopt);
  for (int backoff = 0; backoff < 4 && njd_percent(pair.gt_field) > 0.0;
       ++backoff) {
    fopt.amplitude *= 0.5;
    pair.gt_field = random_smooth_field(field_seed, dims, fopt);
  }

  pair.fixed.volume = spatial_transform(pair.moving.volume, pair.gt_field);
  pair.fixed.labels = label_transform(pair.moving.labels, pair.gt_field);
  pair.fixed.seed = seed;

  MetricReport base = dice(pair.moving.labels, pair.fixed.labels,
                           present_labels(pair.moving.labels, pair.fixed.labels));
  pair.baseline_dice = base.dice_mean;
  return pair;
}

}  // namespace voxreg
