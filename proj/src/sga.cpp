#include "voxreg/sga.hpp"

#include <algorithm>
#include <set>

namespace voxreg {

namespace {

// Fan-in uniform init for a conv weight [out, in, kd, kh, kw].
Tensor conv_init(Shape shape, Rng& rng) {
  Index fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

void check_spec(const Tensor& x, const GraphSpec& spec) {
  spec.validate();
  if (x.rank() != 5) shape_error("sga: input must be [N,C,D,H,W]");
  if (x.dim(2) != spec.dims[0] || x.dim(3) != spec.dims[1] ||
      x.dim(4) != spec.dims[2]) {
    shape_error("sga: GraphSpec dims do not match input spatial shape");
  }
}

}  // namespace

std::vector<Index> sga_neighbors(const GraphSpec& spec,
                                 const std::array<Index, 3>& p) {
  spec.validate();
  const auto& dims = spec.dims;
  for (int a = 0; a < 3; ++a) {
    if (p[static_cast<size_t>(a)] < 0 ||
        p[static_cast<size_t>(a)] >= dims[static_cast<size_t>(a)]) {
      shape_error("sga_neighbors: voxel outside dims");
    }
  }
  std::set<Index> found;
  const Index hw = dims[1] * dims[2];
  auto flat = [&](Index z, Index y, Index x) { return z * hw + y * dims[2] + x; };
  for (int a = 0; a < 3; ++a) {
    const Index len = dims[static_cast<size_t>(a)];
    for (Index m = 0; m * spec.stride_k < len; ++m) {
      std::array<Index, 3> q = p;
      q[static_cast<size_t>(a)] =
          (q[static_cast<size_t>(a)] + m * spec.stride_k) % len;
      found.insert(flat(q[0], q[1], q[2]));
    }
  }
  return std::vector<Index>(found.begin(), found.end());
}

Tensor sga_relative_max(const Tensor& x, const GraphSpec& spec) {
  check_spec(x, spec);
  // X_j starts at zero; the m=0 self term contributes exactly zero as well.
  Tensor xj = Tensor::zeros(x.shape());
  for (Axis3 axis : {Axis3::width, Axis3::height, Axis3::depth}) {
    const Index len = x.dim(detail::axis3_to_dim(axis));
    for (Index m = 0; m * spec.stride_k < len; ++m) {
      // x[p] - x[p + mK] (circular): roll by -mK brings p+mK to position p.
      Tensor rel = sub(x, roll3d(x, axis, -(m * spec.stride_k)));
      xj = elem_max(rel, xj);
    }
  }
  return xj;
}

Tensor sga_oracle(const Tensor& x, const GraphSpec& spec) {
  check_spec(x, spec);
  const Index vox = spec.dims[0] * spec.dims[1] * spec.dims[2];
  if (vox > 16 * 16 * 16) {
    throw std::invalid_argument("sga_oracle: inputs limited to 16^3 voxels");
  }
  const Index lanes = x.dim(0) * x.dim(1);
  const ArrayXd& v = x.array();
  ArrayXd out(x.size());

  for (Index z = 0; z < spec.dims[0]; ++z) {
    for (Index y = 0; y < spec.dims[1]; ++y) {
      for (Index c = 0; c < spec.dims[2]; ++c) {
        const Index p = (z * spec.dims[1] + y) * spec.dims[2] + c;
        const std::vector<Index> nbrs = sga_neighbors(spec, {z, y, c});
        for (Index lane = 0; lane < lanes; ++lane) {
          const Index base = lane * vox;
          double best = 0.0;  // matches the zero-initialized X_j
          for (Index q : nbrs) {
            best = std::max(best, v(base + p) - v(base + q));
          }
          out(base + p) = best;
        }
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor mrconv_sga(const Tensor& x, const GraphSpec& spec, const Tensor& w,
                  const Tensor* b) {
  Tensor xj = sga_relative_max(x, spec);
  return conv3d(concat(x, xj, 1), w, b);
}

GrapherParams make_grapher_params(Index c, Rng& rng) {
  GrapherParams p;
  p.w_in = conv_init({c, c, 1, 1, 1}, rng);
  p.b_in = Tensor::zeros({c});
  p.n1_gamma = Tensor::constant({c}, 1.0);
  p.n1_beta = Tensor::zeros({c});
  p.mr_w = conv_init({c, 2 * c, 1, 1, 1}, rng);
  p.mr_b = Tensor::zeros({c});
  p.n2_gamma = Tensor::constant({c}, 1.0);
  p.n2_beta = Tensor::zeros({c});
  p.w_out = conv_init({c, c, 1, 1, 1}, rng);
  p.b_out = Tensor::zeros({c});
  p.n3_gamma = Tensor::constant({c}, 1.0);
  p.n3_beta = Tensor::zeros({c});
  return p;
}

FFNParams make_ffn_params(Index c, Rng& rng, Index expansion) {
  FFNParams p;
  const Index hidden = expansion * c;
  p.w1 = conv_init({hidden, c, 1, 1, 1}, rng);
  p.b1 = Tensor::zeros({hidden});
  p.n1_gamma = Tensor::constant({hidden}, 1.0);
  p.n1_beta = Tensor::zeros({hidden});
  p.w2 = conv_init({c, hidden, 1, 1, 1}, rng);
  p.b2 = Tensor::zeros({c});
  p.n2_gamma = Tensor::constant({c}, 1.0);
  p.n2_beta = Tensor::zeros({c});
  return p;
}

SGABlockParams make_sga_block_params(Index c, Rng& rng, Index expansion) {
  SGABlockParams p;
  p.grapher = make_grapher_params(c, rng);
  p.ffn = make_ffn_params(c, rng, expansion);
  return p;
}

Tensor grapher(const Tensor& x, const GrapherParams& p, const GraphSpec& spec) {
  if (x.rank() != 5 || x.dim(1) != p.w_in.dim(0)) {
    shape_error("grapher: channel count does not match params");
  }
  Tensor h = conv3d(x, p.w_in, &p.b_in);
  h = instance_norm(h, p.n1_gamma, p.n1_beta);
  h = mrconv_sga(h, spec, p.mr_w, &p.mr_b);
  h = instance_norm(h, p.n2_gamma, p.n2_beta);
  h = gelu(h);
  h = conv3d(h, p.w_out, &p.b_out);
  h = instance_norm(h, p.n3_gamma, p.n3_beta);
  return add(h, x);
}

Tensor ffn(const Tensor& x, const FFNParams& p) {
  if (x.rank() != 5 || x.dim(1) != p.w1.dim(1)) {
    shape_error("ffn: channel count does not match params");
  }
  Tensor h = conv3d(x, p.w1, &p.b1);
  h = instance_norm(h, p.n1_gamma, p.n1_beta);
  h = gelu(h);
  h = conv3d(h, p.w2, &p.b2);
  h = instance_norm(h, p.n2_gamma, p.n2_beta);
  return add(h, x);
}

Tensor sga_block(const Tensor& x, const GraphSpec& spec,
                 const SGABlockParams& p) {
  return ffn(grapher(x, p.grapher, spec), p.ffn);
}

}  // namespace voxreg
