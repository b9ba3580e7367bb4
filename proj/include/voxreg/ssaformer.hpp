#pragma once

#include <cstdint>

#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

/// Token sequence for the bottleneck mixer: rank-2 Tensor [k, d] holding the
/// flattened spatial positions of the feature map as tokens.
using TokenSequence = Tensor;

/// Separable self-attention weights. The input branch projects each token to
/// one scalar (the latent-token score); key/value/output are plain matrices.
/// All projections are bias-free.
struct SSAParams {
  Tensor w_i;  // [d]
  Tensor w_k;  // [d,d]
  Tensor w_v;  // [d,d]
  Tensor w_o;  // [d,d_out]
};

SSAParams make_ssa_params(Index d, Index d_out, Rng& rng);

/// Context scores c_s[k]: softmax over tokens of <w_i, H_i> / sqrt(d).
Tensor context_scores(const TokenSequence& tokens, const SSAParams& p);

/// Context vector c_v[d] = sum_i c_s_i * (key projection of H_i).
Tensor context_vector(const TokenSequence& tokens, const Tensor& cs,
                      const SSAParams& p);

/// Full separable self-attention: per-token output
/// y_i = (c_v ⊙ ReLU(value proj of H_i)) * W_O, cost linear in k.
TokenSequence ssa(const TokenSequence& tokens, const SSAParams& p);

/// Reference multi-head attention (k x k score matrix). Forward values only;
/// exists for correctness and speed comparisons against ssa.
struct MHAParams {
  Tensor w_q, w_k, w_v;  // [d,d]
  Tensor w_o;            // [d,d_out]
};

MHAParams make_mha_params(Index d, Index d_out, Rng& rng);

TokenSequence mha_reference(const TokenSequence& tokens, Index heads,
                            const MHAParams& p);

/// Depthwise-conv channel MLP: 3^3 depthwise conv -> GeLU -> per-channel
/// scale -> 1^3 pointwise conv. The three linear stages compose to the
/// identity when given identity kernels and a unit scale.
struct DCSParams {
  Tensor dw_w, dw_b;     // [C,1,3,3,3], [C] depthwise (groups == C)
  Tensor channel_scale;  // [C]
  Tensor pw_w, pw_b;     // [C,C,1,1,1], [C]
};

DCSParams make_dcs_params(Index channels, Rng& rng);

Tensor dcs(const Tensor& x, const DCSParams& p);

/// MetaFormer-style bottleneck block with pre-normalization:
///   y1 = x + unflatten(ssa(flatten(norm(x))))
///   y2 = y1 + dcs(norm(y1))
struct SSAFormerParams {
  Tensor n1_gamma, n1_beta;
  SSAParams ssa;
  Tensor n2_gamma, n2_beta;
  DCSParams dcs;
};

SSAFormerParams make_ssaformer_params(Index channels, Rng& rng);

Tensor ssaformer_block(const Tensor& x, const SSAFormerParams& p);

/// Analytic multiply-accumulate counts of one token-mixer forward pass.
/// score_term isolates the attention-score cost: linear in k for ssa,
/// quadratic for mha.
enum class MixerKind { ssa, mha };

struct MixerFlops {
  long long total = 0;
  long long score_term = 0;
};

MixerFlops count_mixer_flops(MixerKind kind, Index k, Index d);

/// Wall time of one forward pass over `iters` runs, in nanoseconds per run.
/// Single-threaded.
struct MixerBenchRow {
  MixerKind kind;
  Index k, d;
  long long flops;
  long long wall_ns;
};

MixerBenchRow bench_mixer(MixerKind kind, Index k, Index d, int iters,
                          std::uint64_t seed);

}  // namespace voxreg
