#include <cmath>

#include "ops_internal.hpp"

namespace voxreg {

using detail::record_output;
using detail::wants_grad;

namespace detail {

Index axis3_to_dim(Axis3 axis) {
  switch (axis) {
    case Axis3::depth:
      return 2;
    case Axis3::height:
      return 3;
    case Axis3::width:
      return 4;
  }
  shape_error("invalid Axis3");
}

// out[i] = data[(i - shift) mod L] along `dim` of `shape`.
ArrayXd roll_flat(const ArrayXd& data, const Shape& shape, Index dim,
                  Index shift) {
  const Index len = shape[static_cast<size_t>(dim)];
  Index s = shift % len;
  if (s < 0) s += len;
  if (s == 0) return data;
  Index outer = 1, inner = 1;
  for (Index i = 0; i < dim; ++i) outer *= shape[static_cast<size_t>(i)];
  for (Index i = dim + 1; i < static_cast<Index>(shape.size()); ++i) {
    inner *= shape[static_cast<size_t>(i)];
  }
  ArrayXd out(data.size());
  for (Index o = 0; o < outer; ++o) {
    const Index base = o * len * inner;
    // destination lane i takes source lane (i - s + len) % len; copy as two
    // contiguous blocks
    out.segment(base + s * inner, (len - s) * inner) =
        data.segment(base, (len - s) * inner);
    out.segment(base, s * inner) =
        data.segment(base + (len - s) * inner, s * inner);
  }
  return out;
}

}  // namespace detail

Tensor roll3d(const Tensor& x, Axis3 axis, Index shift) {
  if (x.rank() != 5) shape_error("roll3d: input must be [N,C,D,H,W]");
  const Index dim = detail::axis3_to_dim(axis);
  Tensor out(x.shape(), detail::roll_flat(x.array(), x.shape(), dim, shift));
  if (wants_grad({&x})) {
    record_output(out, [x, dim, shift](Tape& t, const ArrayXd& g) {
      t.accumulate(x.node, detail::roll_flat(g, x.shape(), dim, -shift));
    });
  }
  return out;
}

namespace {

// Per-axis sample taps for x2 trilinear upsampling, half-voxel-centre
// convention: src = (dst + 0.5)/2 - 0.5, clamped to the border.
struct UpTap {
  Index i0, i1;
  double w1;  // weight of i1; i0 gets (1 - w1)
};

std::vector<UpTap> up_taps(Index in) {
  std::vector<UpTap> taps(static_cast<size_t>(2 * in));
  for (Index o = 0; o < 2 * in; ++o) {
    double c = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (c < 0.0) c = 0.0;
    if (c > static_cast<double>(in - 1)) c = static_cast<double>(in - 1);
    Index i0 = static_cast<Index>(std::floor(c));
    double f = c - static_cast<double>(i0);
    Index i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    taps[static_cast<size_t>(o)] = UpTap{i0, i1, f};
  }
  return taps;
}

}  // namespace

Tensor upsample_trilinear_x2(const Tensor& x) {
  if (x.rank() != 5) shape_error("upsample: input must be [N,C,D,H,W]");
  const Index n = x.dim(0), c = x.dim(1);
  const Index d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const Index od = 2 * d, oh = 2 * h, ow = 2 * w;
  const auto td = up_taps(d), th = up_taps(h), tw = up_taps(w);

  ArrayXd y(n * c * od * oh * ow);
  const double* src = x.array().data();
  double* dst = y.data();
  for (Index lane = 0; lane < n * c; ++lane) {
    const double* sb = src + lane * d * h * w;
    double* db = dst + lane * od * oh * ow;
    for (Index zo = 0; zo < od; ++zo) {
      const UpTap& tz = td[static_cast<size_t>(zo)];
      for (Index yo = 0; yo < oh; ++yo) {
        const UpTap& ty = th[static_cast<size_t>(yo)];
        const double* r00 = sb + (tz.i0 * h + ty.i0) * w;
        const double* r01 = sb + (tz.i0 * h + ty.i1) * w;
        const double* r10 = sb + (tz.i1 * h + ty.i0) * w;
        const double* r11 = sb + (tz.i1 * h + ty.i1) * w;
        const double wz1 = tz.w1, wz0 = 1.0 - tz.w1;
        const double wy1 = ty.w1, wy0 = 1.0 - ty.w1;
        double* row = db + (zo * oh + yo) * ow;
        for (Index xo = 0; xo < ow; ++xo) {
          const UpTap& tx = tw[static_cast<size_t>(xo)];
          const double wx1 = tx.w1, wx0 = 1.0 - tx.w1;
          row[xo] = wz0 * (wy0 * (wx0 * r00[tx.i0] + wx1 * r00[tx.i1]) +
                           wy1 * (wx0 * r01[tx.i0] + wx1 * r01[tx.i1])) +
                    wz1 * (wy0 * (wx0 * r10[tx.i0] + wx1 * r10[tx.i1]) +
                           wy1 * (wx0 * r11[tx.i0] + wx1 * r11[tx.i1]));
        }
      }
    }
  }
  Tensor out(Shape{n, c, od, oh, ow}, std::move(y));
  if (wants_grad({&x})) {
    record_output(out, [x, n, c, d, h, w, od, oh, ow, td, th, tw](
                           Tape& t, const ArrayXd& g) {
      ArrayXd gx = ArrayXd::Zero(x.size());
      double* gb = gx.data();
      const double* gp = g.data();
      for (Index lane = 0; lane < n * c; ++lane) {
        double* sb = gb + lane * d * h * w;
        const double* db = gp + lane * od * oh * ow;
        for (Index zo = 0; zo < od; ++zo) {
          const UpTap& tz = td[static_cast<size_t>(zo)];
          for (Index yo = 0; yo < oh; ++yo) {
            const UpTap& ty = th[static_cast<size_t>(yo)];
            const double wz1 = tz.w1, wz0 = 1.0 - tz.w1;
            const double wy1 = ty.w1, wy0 = 1.0 - ty.w1;
            const double* row = db + (zo * oh + yo) * ow;
            for (Index xo = 0; xo < ow; ++xo) {
              const UpTap& tx = tw[static_cast<size_t>(xo)];
              const double wx1 = tx.w1, wx0 = 1.0 - tx.w1;
              const double gv = row[xo];
              sb[(tz.i0 * h + ty.i0) * w + tx.i0] += gv * wz0 * wy0 * wx0;
              sb[(tz.i0 * h + ty.i0) * w + tx.i1] += gv * wz0 * wy0 * wx1;
              sb[(tz.i0 * h + ty.i1) * w + tx.i0] += gv * wz0 * wy1 * wx0;
              sb[(tz.i0 * h + ty.i1) * w + tx.i1] += gv * wz0 * wy1 * wx1;
              sb[(tz.i1 * h + ty.i0) * w + tx.i0] += gv * wz1 * wy0 * wx0;
              sb[(tz.i1 * h + ty.i0) * w + tx.i1] += gv * wz1 * wy0 * wx1;
              sb[(tz.i1 * h + ty.i1) * w + tx.i0] += gv * wz1 * wy1 * wx0;
              sb[(tz.i1 * h + ty.i1) * w + tx.i1] += gv * wz1 * wy1 * wx1;
            }
          }
        }
      }
      t.accumulate(x.node, gx);
    });
  }
  return out;
}

namespace {

struct WarpDims {
  Index d, h, w;
};

WarpDims check_warp_shapes(const Tensor& vol, const Tensor& field) {
  if (vol.rank() != 3) shape_error("warp: volume must be [D,H,W]");
  if (field.rank() != 4 || field.dim(0) != 3) {
    shape_error("warp: field must be [3,D,H,W]");
  }
  for (Index i = 0; i < 3; ++i) {
    if (field.dim(i + 1) != vol.dim(i)) {
      shape_error("warp: field dims must match volume dims");
    }
  }
  return WarpDims{vol.dim(0), vol.dim(1), vol.dim(2)};
}

struct AxisSample {
  Index i0, i1;
  double frac;
  bool pass;  // clamp pass-through: raw coordinate inside [0, L-1]
};

inline AxisSample sample_axis(double pos, double raw, Index len) {
  AxisSample s;
  s.pass = raw >= 0.0 && raw <= static_cast<double>(len - 1);
  s.i0 = static_cast<Index>(std::floor(pos));
  if (s.i0 > len - 1) s.i0 = len - 1;
  if (s.i0 < 0) s.i0 = 0;
  s.frac = pos - static_cast<double>(s.i0);
  s.i1 = s.i0 + 1 < len ? s.i0 + 1 : len - 1;
  if (s.i0 + 1 >= len) s.frac = 0.0;
  return s;
}

}  // namespace

Tensor warp_trilinear(const Tensor& vol, const Tensor& field) {
  const WarpDims dims = check_warp_shapes(vol, field);
  const Index d = dims.d, h = dims.h, w = dims.w;
  const Index vox = d * h * w;
  const double* m = vol.array().data();
  const double* u = field.array().data();

  ArrayXd y(vox);
  for (Index z = 0; z < d; ++z) {
    for (Index r = 0; r < h; ++r) {
      for (Index cidx = 0; cidx < w; ++cidx) {
        const Index p = (z * h + r) * w + cidx;
        const double rz = static_cast<double>(z) + u[p];
        const double ry = static_cast<double>(r) + u[vox + p];
        const double rx = static_cast<double>(cidx) + u[2 * vox + p];
        const double cz = std::clamp(rz, 0.0, static_cast<double>(d - 1));
        const double cy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
        const double cx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
        const AxisSample sz = sample_axis(cz, rz, d);
        const AxisSample sy = sample_axis(cy, ry, h);
        const AxisSample sx = sample_axis(cx, rx, w);
        const double v000 = m[(sz.i0 * h + sy.i0) * w + sx.i0];
        const double fz = sz.frac, fy = sy.frac, fx = sx.frac;
        if (fz == 0.0 && fy == 0.0 && fx == 0.0) {
          y(p) = v000;  // on-lattice sample, keep bit-exact
          continue;
        }
        const double v001 = m[(sz.i0 * h + sy.i0) * w + sx.i1];
        const double v010 = m[(sz.i0 * h + sy.i1) * w + sx.i0];
        const double v011 = m[(sz.i0 * h + sy.i1) * w + sx.i1];
        const double v100 = m[(sz.i1 * h + sy.i0) * w + sx.i0];
        const double v101 = m[(sz.i1 * h + sy.i0) * w + sx.i1];
        const double v110 = m[(sz.i1 * h + sy.i1) * w + sx.i0];
        const double v111 = m[(sz.i1 * h + sy.i1) * w + sx.i1];
        y(p) = (1 - fz) * ((1 - fy) * ((1 - fx) * v000 + fx * v001) +
                           fy * ((1 - fx) * v010 + fx * v011)) +
               fz * ((1 - fy) * ((1 - fx) * v100 + fx * v101) +
                     fy * ((1 - fx) * v110 + fx * v111));
      }
    }
  }
  Tensor out(vol.shape(), std::move(y));
  detail::debug_check_finite("warp", out);

  if (wants_grad({&vol, &field})) {
    record_output(out, [vol, field, d, h, w, vox](Tape& t, const ArrayXd& g) {
      const double* m = vol.array().data();
      const double* u = field.array().data();
      ArrayXd gm, gu;
      const bool want_m = vol.node >= 0;
      const bool want_u = field.node >= 0;
      if (want_m) gm = ArrayXd::Zero(vox);
      if (want_u) gu = ArrayXd::Zero(3 * vox);
      for (Index z = 0; z < d; ++z) {
        for (Index r = 0; r < h; ++r) {
          for (Index cidx = 0; cidx < w; ++cidx) {
            const Index p = (z * h + r) * w + cidx;
            const double gv = g(p);
            if (gv == 0.0) continue;
            const double rz = static_cast<double>(z) + u[p];
            const double ry = static_cast<double>(r) + u[vox + p];
            const double rx = static_cast<double>(cidx) + u[2 * vox + p];
            const double cz = std::clamp(rz, 0.0, static_cast<double>(d - 1));
            const double cy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
            const double cx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
            const AxisSample sz = sample_axis(cz, rz, d);
            const AxisSample sy = sample_axis(cy, ry, h);
            const AxisSample sx = sample_axis(cx, rx, w);
            const double fz = sz.frac, fy = sy.frac, fx = sx.frac;
            const double wz[2] = {1 - fz, fz};
            const double wy[2] = {1 - fy, fy};
            const double wx[2] = {1 - fx, fx};
            const Index iz[2] = {sz.i0, sz.i1};
            const Index iy[2] = {sy.i0, sy.i1};
            const Index ix[2] = {sx.i0, sx.i1};
            double dz = 0.0, dy = 0.0, dx = 0.0;
            for (int a = 0; a < 2; ++a) {
              for (int b2 = 0; b2 < 2; ++b2) {
                const double v0 = m[(iz[a] * h + iy[b2]) * w + ix[0]];
                const double v1 = m[(iz[a] * h + iy[b2]) * w + ix[1]];
                dx += wz[a] * wy[b2] * (v1 - v0);
              }
            }
            for (int a = 0; a < 2; ++a) {
              for (int b2 = 0; b2 < 2; ++b2) {
                const double v0 = m[(iz[a] * h + iy[0]) * w + ix[b2]];
                const double v1 = m[(iz[a] * h + iy[1]) * w + ix[b2]];
                dy += wz[a] * wx[b2] * (v1 - v0);
              }
            }
            for (int a = 0; a < 2; ++a) {
              for (int b2 = 0; b2 < 2; ++b2) {
                const double v0 = m[(iz[0] * h + iy[a]) * w + ix[b2]];
                const double v1 = m[(iz[1] * h + iy[a]) * w + ix[b2]];
                dz += wy[a] * wx[b2] * (v1 - v0);
              }
            }
            if (want_u) {
              if (sz.pass) gu(p) += gv * dz;
              if (sy.pass) gu(vox + p) += gv * dy;
              if (sx.pass) gu(2 * vox + p) += gv * dx;
            }
            if (want_m) {
              for (int a = 0; a < 2; ++a) {
                for (int b2 = 0; b2 < 2; ++b2) {
                  for (int c3 = 0; c3 < 2; ++c3) {
                    gm((iz[a] * h + iy[b2]) * w + ix[c3]) +=
                        gv * wz[a] * wy[b2] * wx[c3];
                  }
                }
              }
            }
          }
        }
      }
      if (want_m) t.accumulate(vol.node, gm);
      if (want_u) t.accumulate(field.node, gu);
    });
  }
  return out;
}

}  // namespace voxreg
