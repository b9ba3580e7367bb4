#include <cmath>

#include "ops_internal.hpp"

namespace voxreg {

using detail::record_output;
using detail::wants_grad;

namespace {

struct ConvPlan {
  Index n, cin, cout, groups;
  Index d, h, w;        // input spatial
  Index kd, kh, kw;     // kernel
  Index od, oh, ow;     // output spatial
  Index stride, padding;
  Index cin_g, cout_g;  // channels per group
};

Index conv_extent(Index in, Index pad, Index k, Index stride) {
  const Index span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    shape_error("conv3d: extent " + std::to_string(in) + " with kernel " +
                std::to_string(k) + ", padding " + std::to_string(pad) +
                ", stride " + std::to_string(stride) +
                " does not divide exactly");
  }
  return span / stride + 1;
}

ConvPlan make_plan(const Tensor& x, const Tensor& w, const Tensor* b,
                   const Conv3dOpts& o) {
  if (x.rank() != 5) shape_error("conv3d: input must be [N,Cin,D,H,W]");
  if (w.rank() != 5) shape_error("conv3d: weight must be [Cout,Cin/g,k,k,k]");
  if (o.stride < 1 || o.padding < 0 || o.groups < 1) {
    shape_error("conv3d: invalid stride/padding/groups");
  }
  ConvPlan p;
  p.n = x.dim(0);
  p.cin = x.dim(1);
  p.d = x.dim(2);
  p.h = x.dim(3);
  p.w = x.dim(4);
  p.cout = w.dim(0);
  p.kd = w.dim(2);
  p.kh = w.dim(3);
  p.kw = w.dim(4);
  p.groups = o.groups;
  p.stride = o.stride;
  p.padding = o.padding;
  if (p.cin % p.groups != 0 || p.cout % p.groups != 0) {
    shape_error("conv3d: channels not divisible by groups");
  }
  p.cin_g = p.cin / p.groups;
  p.cout_g = p.cout / p.groups;
  if (w.dim(1) != p.cin_g) {
    shape_error("conv3d: weight input channels mismatch, expected " +
                std::to_string(p.cin_g) + " got " + std::to_string(w.dim(1)));
  }
  if (b && (b->rank() != 1 || b->dim(0) != p.cout)) {
    shape_error("conv3d: bias must be [Cout]");
  }
  p.od = conv_extent(p.d, p.padding, p.kd, p.stride);
  p.oh = conv_extent(p.h, p.padding, p.kh, p.stride);
  p.ow = conv_extent(p.w, p.padding, p.kw, p.stride);
  return p;
}

// Valid output range [lo, hi) along one axis for a fixed kernel offset k:
// input index i = o*stride + k - pad must land in [0, in).
void out_range(Index in, Index out, Index k, Index pad, Index stride,
               Index& lo, Index& hi) {
  Index num = pad - k;
  lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  Index top = in - 1 + pad - k;  // largest valid o*stride
  hi = top < 0 ? 0 : std::min(out, top / stride + 1);
  if (lo > hi) lo = hi;
}

void conv_forward(const ConvPlan& p, const double* x, const double* wgt,
                  const double* bias, double* y) {
  const Index xc = p.d * p.h * p.w;
  const Index yc = p.od * p.oh * p.ow;
  const Index wc = p.cin_g * p.kd * p.kh * p.kw;
  for (Index n = 0; n < p.n; ++n) {
    for (Index oc = 0; oc < p.cout; ++oc) {
      double* yb = y + (n * p.cout + oc) * yc;
      const double b0 = bias ? bias[oc] : 0.0;
      for (Index i = 0; i < yc; ++i) yb[i] = b0;
    }
  }
  for (Index n = 0; n < p.n; ++n) {
    for (Index g = 0; g < p.groups; ++g) {
      for (Index ocg = 0; ocg < p.cout_g; ++ocg) {
        const Index oc = g * p.cout_g + ocg;
        double* yb = y + (n * p.cout + oc) * yc;
        for (Index icg = 0; icg < p.cin_g; ++icg) {
          const Index ic = g * p.cin_g + icg;
          const double* xb = x + (n * p.cin + ic) * xc;
          for (Index kd = 0; kd < p.kd; ++kd) {
            Index dlo, dhi;
            out_range(p.d, p.od, kd, p.padding, p.stride, dlo, dhi);
            for (Index kh = 0; kh < p.kh; ++kh) {
              Index hlo, hhi;
              out_range(p.h, p.oh, kh, p.padding, p.stride, hlo, hhi);
              for (Index kw = 0; kw < p.kw; ++kw) {
                Index wlo, whi;
                out_range(p.w, p.ow, kw, p.padding, p.stride, wlo, whi);
                const double wv =
                    wgt[(oc * wc) + ((icg * p.kd + kd) * p.kh + kh) * p.kw + kw];
                if (wv == 0.0) continue;
                for (Index od = dlo; od < dhi; ++od) {
                  const Index id = od * p.stride + kd - p.padding;
                  for (Index oh = hlo; oh < hhi; ++oh) {
                    const Index ih = oh * p.stride + kh - p.padding;
                    const double* xr = xb + (id * p.h + ih) * p.w;
                    double* yr = yb + (od * p.oh + oh) * p.ow;
                    for (Index ow = wlo; ow < whi; ++ow) {
                      yr[ow] += wv * xr[ow * p.stride + kw - p.padding];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward(const ConvPlan& p, const double* x, const double* wgt,
                   const double* gy, double* gx, double* gw, double* gb) {
  const Index xc = p.d * p.h * p.w;
  const Index yc = p.od * p.oh * p.ow;
  const Index wc = p.cin_g * p.kd * p.kh * p.kw;
  if (gb) {
    for (Index n = 0; n < p.n; ++n) {
      for (Index oc = 0; oc < p.cout; ++oc) {
        const double* gyb = gy + (n * p.cout + oc) * yc;
        double acc = 0.0;
        for (Index i = 0; i < yc; ++i) acc += gyb[i];
        gb[oc] += acc;
      }
    }
  }
  for (Index n = 0; n < p.n; ++n) {
    for (Index g = 0; g < p.groups; ++g) {
      for (Index ocg = 0; ocg < p.cout_g; ++ocg) {
        const Index oc = g * p.cout_g + ocg;
        const double* gyb = gy + (n * p.cout + oc) * yc;
        for (Index icg = 0; icg < p.cin_g; ++icg) {
          const Index ic = g * p.cin_g + icg;
          const double* xb = x + (n * p.cin + ic) * xc;
          double* gxb = gx ? gx + (n * p.cin + ic) * xc : nullptr;
          for (Index kd = 0; kd < p.kd; ++kd) {
            Index dlo, dhi;
            out_range(p.d, p.od, kd, p.padding, p.stride, dlo, dhi);
            for (Index kh = 0; kh < p.kh; ++kh) {
              Index hlo, hhi;
              out_range(p.h, p.oh, kh, p.padding, p.stride, hlo, hhi);
              for (Index kw = 0; kw < p.kw; ++kw) {
                Index wlo, whi;
                out_range(p.w, p.ow, kw, p.padding, p.stride, wlo, whi);
                const Index wi =
                    (oc * wc) + ((icg * p.kd + kd) * p.kh + kh) * p.kw + kw;
                const double wv = wgt[wi];
                double wacc = 0.0;
                for (Index od = dlo; od < dhi; ++od) {
                  const Index id = od * p.stride + kd - p.padding;
                  for (Index oh = hlo; oh < hhi; ++oh) {
                    const Index ih = oh * p.stride + kh - p.padding;
                    const double* xr = xb + (id * p.h + ih) * p.w;
                    double* gxr = gxb ? gxb + (id * p.h + ih) * p.w : nullptr;
                    const double* gyr = gyb + (od * p.oh + oh) * p.ow;
                    for (Index ow = wlo; ow < whi; ++ow) {
                      const Index iw = ow * p.stride + kw - p.padding;
                      const double gv = gyr[ow];
                      wacc += gv * xr[iw];
                      if (gxr) gxr[iw] += gv * wv;
                    }
                  }
                }
                if (gw) gw[wi] += wacc;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* b,
              const Conv3dOpts& opts) {
  ConvPlan p = make_plan(x, w, b, opts);
  ArrayXd y(p.n * p.cout * p.od * p.oh * p.ow);
  conv_forward(p, x.array().data(), w.array().data(),
               b ? b->array().data() : nullptr, y.data());
  Tensor out(Shape{p.n, p.cout, p.od, p.oh, p.ow}, std::move(y));
  detail::debug_check_finite("conv3d", out);

  const Tensor bias = b ? *b : Tensor();
  const bool has_bias = b != nullptr;
  if ((b && wants_grad({&x, &w, b})) || (!b && wants_grad({&x, &w}))) {
    record_output(out, [x, w, bias, has_bias, p](Tape& t, const ArrayXd& g) {
      ArrayXd gx, gw, gb;
      double* gxp = nullptr;
      double* gwp = nullptr;
      double* gbp = nullptr;
      if (x.node >= 0) {
        gx = ArrayXd::Zero(x.size());
        gxp = gx.data();
      }
      if (w.node >= 0) {
        gw = ArrayXd::Zero(w.size());
        gwp = gw.data();
      }
      if (has_bias && bias.node >= 0) {
        gb = ArrayXd::Zero(bias.size());
        gbp = gb.data();
      }
      conv_backward(p, x.array().data(), w.array().data(), g.data(), gxp, gwp,
                    gbp);
      if (gxp) t.accumulate(x.node, gx);
      if (gwp) t.accumulate(w.node, gw);
      if (gbp) t.accumulate(bias.node, gb);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
  if (w.rank() != 2) shape_error("linear: weight must be [Din,Dout]");
  if (x.rank() < 1 || x.dim(x.rank() - 1) != w.dim(0)) {
    shape_error("linear: last axis of x (" + shape_to_string(x.shape()) +
                ") must match Din=" + std::to_string(w.dim(0)));
  }
  const Index din = w.dim(0);
  const Index dout = w.dim(1);
  const Index rows = x.size() / din;
  if (b && (b->rank() != 1 || b->dim(0) != dout)) {
    shape_error("linear: bias must be [Dout]");
  }

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> xm(x.array().data(), rows, din);
  Eigen::Map<const RowMat> wm(w.array().data(), din, dout);
  ArrayXd y(rows * dout);
  Eigen::Map<RowMat> ym(y.data(), rows, dout);
  ym.noalias() = xm * wm;
  if (b) {
    Eigen::Map<const Eigen::RowVectorXd> bv(b->array().data(), dout);
    ym.rowwise() += bv;
  }

  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor out(std::move(out_shape), std::move(y));
  detail::debug_check_finite("linear", out);

  const Tensor bias = b ? *b : Tensor();
  const bool has_bias = b != nullptr;
  if ((b && wants_grad({&x, &w, b})) || (!b && wants_grad({&x, &w}))) {
    record_output(out, [x, w, bias, has_bias, rows, din, dout](
                           Tape& t, const ArrayXd& g) {
      Eigen::Map<const RowMat> gm(g.data(), rows, dout);
      Eigen::Map<const RowMat> xm2(x.array().data(), rows, din);
      Eigen::Map<const RowMat> wm2(w.array().data(), din, dout);
      if (x.node >= 0) {
        ArrayXd gx(rows * din);
        Eigen::Map<RowMat>(gx.data(), rows, din).noalias() =
            gm * wm2.transpose();
        t.accumulate(x.node, gx);
      }
      if (w.node >= 0) {
        ArrayXd gw(din * dout);
        Eigen::Map<RowMat>(gw.data(), din, dout).noalias() =
            xm2.transpose() * gm;
        t.accumulate(w.node, gw);
      }
      if (has_bias && bias.node >= 0) {
        ArrayXd gb(dout);
        Eigen::Map<Eigen::RowVectorXd>(gb.data(), dout) = gm.colwise().sum();
        t.accumulate(bias.node, gb);
      }
    });
  }
  return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps) {
  if (x.rank() < 3) shape_error("instance_norm: input must be [N,C,...]");
  const Index n = x.dim(0);
  const Index c = x.dim(1);
  Index count = 1;
  for (Index i = 2; i < x.rank(); ++i) count *= x.dim(i);
  if (count < 2) {
    shape_error("instance_norm: needs >= 2 elements per (sample, channel)");
  }
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 ||
      beta.dim(0) != c) {
    shape_error("instance_norm: gamma/beta must be [C]");
  }

  const ArrayXd& v = x.array();
  ArrayXd y(x.size());
  ArrayXd mean(n * c), inv_std(n * c);
  for (Index lane = 0; lane < n * c; ++lane) {
    const Index base = lane * count;
    auto seg = v.segment(base, count);
    const double mu = seg.mean();
    const double var = (seg - mu).square().sum() / static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + eps);
    mean(lane) = mu;
    inv_std(lane) = inv;
    const double gc = gamma.array()(lane % c);
    const double bc = beta.array()(lane % c);
    y.segment(base, count) = (seg - mu) * inv * gc + bc;
  }
  Tensor out(x.shape(), std::move(y));
  detail::debug_check_finite("instance_norm", out);

  if (wants_grad({&x, &gamma, &beta})) {
    record_output(out, [x, gamma, beta, mean, inv_std, n, c, count](
                           Tape& t, const ArrayXd& g) {
      ArrayXd gx, ggamma, gbeta;
      if (x.node >= 0) gx.resize(x.size());
      if (gamma.node >= 0) ggamma = ArrayXd::Zero(c);
      if (beta.node >= 0) gbeta = ArrayXd::Zero(c);
      const ArrayXd& v = x.array();
      const double inv_count = 1.0 / static_cast<double>(count);
      for (Index lane = 0; lane < n * c; ++lane) {
        const Index base = lane * count;
        auto vseg = v.segment(base, count);
        auto gseg = g.segment(base, count);
        ArrayXd xhat = (vseg - mean(lane)) * inv_std(lane);
        if (beta.node >= 0) gbeta(lane % c) += gseg.sum();
        if (gamma.node >= 0) ggamma(lane % c) += (gseg * xhat).sum();
        if (x.node >= 0) {
          const double gc = gamma.array()(lane % c);
          const double mean_g = gseg.mean();
          const double mean_gx = (gseg * xhat).sum() * inv_count;
          gx.segment(base, count) =
              gc * inv_std(lane) * (gseg - mean_g - xhat * mean_gx);
        }
      }
      if (x.node >= 0) t.accumulate(x.node, gx);
      if (gamma.node >= 0) t.accumulate(gamma.node, ggamma);
      if (beta.node >= 0) t.accumulate(beta.node, gbeta);
    });
  }
  return out;
}

}  // namespace voxreg
