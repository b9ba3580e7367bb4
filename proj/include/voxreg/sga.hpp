#pragma once

#include <array>
#include <vector>

#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

/// Fixed voxel connectivity: every voxel links to every stride_k-th voxel
/// along its row, column and depth directions (circular), so the neighbour
/// pattern is identical at every position.
struct GraphSpec {
  Index stride_k = 1;
  std::array<Index, 3> dims{};  // D, H, W

  void validate() const {
    if (stride_k < 1) {
      throw std::invalid_argument("GraphSpec: stride_k must be >= 1");
    }
  }
};

/// Flat voxel indices of the neighbours of p (self included), deduplicated.
std::vector<Index> sga_neighbors(const GraphSpec& spec,
                                 const std::array<Index, 3>& p);

/// Roll-based max-relative feature map X_j for x[N,C,D,H,W]:
/// element-wise max over x - roll(x) for every axis shift m*K < extent.
/// Differentiable; no reshape anywhere on this path.
Tensor sga_relative_max(const Tensor& x, const GraphSpec& spec);

/// Brute-force X_j by explicit adjacency iteration (verification only; no
/// rolls, small inputs). Forward values only.
Tensor sga_oracle(const Tensor& x, const GraphSpec& spec);

/// MRConv: Conv3d(Concat(X, X_j)) with a 1x1x1 kernel w[C,2C,1,1,1].
Tensor mrconv_sga(const Tensor& x, const GraphSpec& spec, const Tensor& w,
                  const Tensor* b = nullptr);

/// Graph block parameters. Channel mixing is by 1x1x1 convolutions; a
/// normalization follows every channel-mixing or graph-conv layer.
struct GrapherParams {
  Tensor w_in, b_in;    // [C,C,1,1,1], [C]
  Tensor n1_gamma, n1_beta;
  Tensor mr_w, mr_b;    // [C,2C,1,1,1], [C]
  Tensor n2_gamma, n2_beta;
  Tensor w_out, b_out;  // [C,C,1,1,1], [C]
  Tensor n3_gamma, n3_beta;
};

struct FFNParams {
  Tensor w1, b1;  // [hidden,C,1,1,1], [hidden]
  Tensor n1_gamma, n1_beta;
  Tensor w2, b2;  // [C,hidden,1,1,1], [C]
  Tensor n2_gamma, n2_beta;
};

struct SGABlockParams {
  GrapherParams grapher;
  FFNParams ffn;
};

GrapherParams make_grapher_params(Index channels, Rng& rng);
FFNParams make_ffn_params(Index channels, Rng& rng, Index expansion = 4);
SGABlockParams make_sga_block_params(Index channels, Rng& rng,
                                     Index expansion = 4);

/// Residual graph block: y = norm(conv_out(gelu(norm(mrconv(norm(conv_in(x))))))) + x.
Tensor grapher(const Tensor& x, const GrapherParams& p, const GraphSpec& spec);

/// Residual two-layer channel MLP with GeLU.
Tensor ffn(const Tensor& x, const FFNParams& p);

/// Grapher followed by FFN.
Tensor sga_block(const Tensor& x, const GraphSpec& spec,
                 const SGABlockParams& p);

}  // namespace voxreg
