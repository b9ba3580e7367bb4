#include "voxreg/ssaformer.hpp"

#include <chrono>
#include <cmath>

namespace voxreg {

namespace {

Tensor matrix_init(Shape shape, Rng& rng) {
  const Index fan_in = shape[0];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

void check_tokens(const Tensor& tokens, Index d, const char* op) {
  if (tokens.rank() != 2) shape_error(std::string(op) + ": tokens must be [k,d]");
  if (tokens.dim(1) != d) {
    shape_error(std::string(op) + ": token dim " + std::to_string(tokens.dim(1)) +
                " does not match params d=" + std::to_string(d));
  }
  if (tokens.dim(0) < 1) shape_error(std::string(op) + ": need k >= 1 tokens");
}

}  // namespace

SSAParams make_ssa_params(Index d, Index d_out, Rng& rng) {
  SSAParams p;
  p.w_i = matrix_init({d}, rng);
  p.w_k = matrix_init({d, d}, rng);
  p.w_v = matrix_init({d, d}, rng);
  p.w_o = matrix_init({d, d_out}, rng);
  return p;
}

Tensor context_scores(const TokenSequence& tokens, const SSAParams& p) {
  const Index d = p.w_i.dim(0);
  check_tokens(tokens, d, "context_scores");
  const Index k = tokens.dim(0);
  // latent projection: one scalar per token, scaled by 1/sqrt(d)
  Tensor latent = linear(tokens, reshape(p.w_i, {d, 1}));
  Tensor raw = scale(latent, 1.0 / std::sqrt(static_cast<double>(d)));
  return reshape(softmax(raw, 0), {k});
}

Tensor context_vector(const TokenSequence& tokens, const Tensor& cs,
                      const SSAParams& p) {
  const Index d = p.w_k.dim(0);
  check_tokens(tokens, d, "context_vector");
  const Index k = tokens.dim(0);
  if (cs.size() != k) shape_error("context_vector: scores must have length k");
  Tensor keys = linear(tokens, p.w_k);                  // [k,d]
  Tensor weighted = mul(keys, reshape(cs, {k, 1}));     // broadcast over d
  return reshape(sum_axis(weighted, 0, true), {d});
}

TokenSequence ssa(const TokenSequence& tokens, const SSAParams& p) {
  const Index d = p.w_v.dim(0);
  check_tokens(tokens, d, "ssa");
  const Index k = tokens.dim(0);
  Tensor cs = context_scores(tokens, p);
  Tensor cv = context_vector(tokens, cs, p);
  Tensor values = relu(linear(tokens, p.w_v));          // [k,d]
  Tensor propagated = mul(values, reshape(cv, {1, d}));  // broadcast over k
  (void)k;
  return linear(propagated, p.w_o);                      // [k,d_out]
}

MHAParams make_mha_params(Index d, Index d_out, Rng& rng) {
  MHAParams p;
  p.w_q = matrix_init({d, d}, rng);
  p.w_k = matrix_init({d, d}, rng);
  p.w_v = matrix_init({d, d}, rng);
  p.w_o = matrix_init({d, d_out}, rng);
  return p;
}

TokenSequence mha_reference(const TokenSequence& tokens, Index heads,
                            const MHAParams& p) {
  const Index d = p.w_q.dim(0);
  check_tokens(tokens, d, "mha_reference");
  if (heads < 1 || d % heads != 0) {
    shape_error("mha_reference: d must be divisible by heads");
  }
  const Index k = tokens.dim(0);
  const Index dh = d / heads;
  const Index d_out = p.w_o.dim(1);

  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> h(tokens.array().data(), k, d);
  Eigen::Map<const RowMat> wq(p.w_q.array().data(), d, d);
  Eigen::Map<const RowMat> wk(p.w_k.array().data(), d, d);
  Eigen::Map<const RowMat> wv(p.w_v.array().data(), d, d);
  Eigen::Map<const RowMat> wo(p.w_o.array().data(), d, d_out);

  RowMat q = h * wq;
  RowMat key = h * wk;
  RowMat val = h * wv;
  RowMat ctx(k, d);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (Index head = 0; head < heads; ++head) {
    auto qh = q.middleCols(head * dh, dh);
    auto kh = key.middleCols(head * dh, dh);
    auto vh = val.middleCols(head * dh, dh);
    RowMat scores = (qh * kh.transpose()) * inv_scale;  // [k,k]
    for (Index row = 0; row < k; ++row) {
      const double m = scores.row(row).maxCoeff();
      scores.row(row) = (scores.row(row).array() - m).exp().matrix();
      scores.row(row) /= scores.row(row).sum();
    }
    ctx.middleCols(head * dh, dh) = scores * vh;
  }
  ArrayXd out(k * d_out);
  Eigen::Map<RowMat>(out.data(), k, d_out).noalias() = ctx * wo;
  return Tensor(Shape{k, d_out}, std::move(out));
}

DCSParams make_dcs_params(Index c, Rng& rng) {
  DCSParams p;
  const double bound = 1.0 / std::sqrt(27.0);
  p.dw_w = random_uniform({c, 1, 3, 3, 3}, rng, -bound, bound);
  p.dw_b = Tensor::zeros({c});
  p.channel_scale = Tensor::constant({c}, 1.0);
  p.pw_w = random_uniform({c, c, 1, 1, 1}, rng,
                          -1.0 / std::sqrt(static_cast<double>(c)),
                          1.0 / std::sqrt(static_cast<double>(c)));
  p.pw_b = Tensor::zeros({c});
  return p;
}

Tensor dcs(const Tensor& x, const DCSParams& p) {
  if (x.rank() != 5) shape_error("dcs: input must be [N,C,D,H,W]");
  const Index c = x.dim(1);
  if (p.dw_w.dim(0) != c) shape_error("dcs: channel count mismatch");
  Conv3dOpts dw_opts;
  dw_opts.padding = 1;
  dw_opts.groups = c;
  Tensor h = conv3d(x, p.dw_w, &p.dw_b, dw_opts);
  h = gelu(h);
  h = mul(h, reshape(p.channel_scale, {1, c, 1, 1, 1}));
  return conv3d(h, p.pw_w, &p.pw_b);
}

SSAFormerParams make_ssaformer_params(Index c, Rng& rng) {
  SSAFormerParams p;
  p.n1_gamma = Tensor::constant({c}, 1.0);
  p.n1_beta = Tensor::zeros({c});
  p.ssa = make_ssa_params(c, c, rng);
  p.n2_gamma = Tensor::constant({c}, 1.0);
  p.n2_beta = Tensor::zeros({c});
  p.dcs = make_dcs_params(c, rng);
  return p;
}

Tensor ssaformer_block(const Tensor& x, const SSAFormerParams& p) {
  if (x.rank() != 5 || x.dim(0) != 1) {
    shape_error("ssaformer_block: input must be [1,C,D,H,W]");
  }
  const Index d = x.dim(2), h = x.dim(3), w = x.dim(4);
  Tensor t = tokens_from_volume(instance_norm(x, p.n1_gamma, p.n1_beta));
  Tensor mixed = volume_from_tokens(ssa(t, p.ssa), d, h, w);
  Tensor y1 = add(x, mixed);
  Tensor y2 = add(y1, dcs(instance_norm(y1, p.n2_gamma, p.n2_beta), p.dcs));
  return y2;
}

MixerFlops count_mixer_flops(MixerKind kind, Index k, Index d) {
  MixerFlops f;
  const long long kk = k, dd = d;
  if (kind == MixerKind::ssa) {
    // latent scores k*d; key proj k*d^2; weighted sum k*d; value proj k*d^2;
    // propagate k*d; output proj k*d^2
    f.score_term = kk * dd;
    f.total = f.score_term + 3 * kk * dd * dd + 2 * kk * dd;
  } else {
    // q/k/v projections 3*k*d^2; score matrix k^2*d; context k^2*d;
    // output proj k*d^2
    f.score_term = kk * kk * dd;
    f.total = 4 * kk * dd * dd + 2 * kk * kk * dd;
  }
  return f;
}

MixerBenchRow bench_mixer(MixerKind kind, Index k, Index d, int iters,
                          std::uint64_t seed) {
  Rng rng(seed);
  Tensor tokens = random_uniform({k, d}, rng, -1.0, 1.0);
  SSAParams sp = make_ssa_params(d, d, rng);
  MHAParams mp = make_mha_params(d, d, rng);
  volatile double sink = 0.0;

  auto run_once = [&]() {
    Tensor out = kind == MixerKind::ssa ? ssa(tokens, sp)
                                        : mha_reference(tokens, 4, mp);
    sink = sink + out.array()(0);
  };
  run_once();  // warm-up

  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) run_once();
  const auto stop = std::chrono::steady_clock::now();
  const long long ns =
      std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start)
          .count() /
      std::max(1, iters);

  MixerBenchRow row;
  row.kind = kind;
  row.k = k;
  row.d = d;
  row.flops = count_mixer_flops(kind, k, d).total;
  row.wall_ns = ns;
  return row;
}

}  // namespace voxreg
