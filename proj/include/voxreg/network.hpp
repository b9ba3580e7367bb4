#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxreg/adam.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/sga.hpp"
#include "voxreg/ssaformer.hpp"

namespace voxreg {

/// U-shaped registration network layout. Defaults are the desk-scale
/// configuration; inputs must be divisible by 2^stages.
struct NetworkConfig {
  Index stages = 4;
  std::vector<Index> channels = {8, 16, 16, 32};
  std::vector<Index> stride_k = {2, 2, 2, 2};  // SGA stride per stage
  Index bottleneck_d = 32;  // mixer embedding dim == channels.back()
  Index lncc_window = 9;
  double lambda_reg = 1.0;
  double lr = 1e-4;

  void validate() const;
};

struct EncoderStageParams {
  Tensor down_w, down_b;  // 2^3 stride-2 conv
  Tensor norm_gamma, norm_beta;
  SGABlockParams sga;
};

struct DecoderStageParams {
  Tensor w, b;  // 3^3 conv after upsampling + skip concat
  Tensor norm_gamma, norm_beta;
};

/// All trainable state plus the config that shaped it. Parameter traversal
/// order (named_params) is the canonical checkpoint order.
struct RegistrationModel {
  NetworkConfig config;
  std::vector<EncoderStageParams> encoder;
  SSAFormerParams bottleneck;
  std::vector<DecoderStageParams> decoder;
  Tensor flow_w, flow_b;  // 3^3 conv to 3 channels, zero-initialized

  std::vector<NamedParam> named_params();
  Index param_count() const;
};

/// Fresh model with fan-in uniform init everywhere except the zero-init flow
/// head, so the initial transform is the identity.
RegistrationModel build_model(const NetworkConfig& config, std::uint64_t seed);

struct ForwardResult {
  Volume warped;           // [D,H,W]
  DeformationField field;  // [3,D,H,W]
};

/// Full forward pass: concat(M,F) -> SGA encoder -> SSAFormer bottleneck ->
/// decoder with skips -> flow head -> spatial transform of M.
ForwardResult forward(const RegistrationModel& model, const Volume& moving,
                      const Volume& fixed);

/// out(p) = M(p + u(p)), trilinear with clamp-to-border.
Volume spatial_transform(const Volume& moving, const DeformationField& field);

/// Nearest-neighbour label resampling at p + u(p); labels are never blended.
LabelMap label_transform(const LabelMap& labels, const DeformationField& field);

struct RegPair {
  Volume moving;
  Volume fixed;
};

struct TrainOptions {
  Index epochs = 200;
  SimKind sim = SimKind::lncc;
  bool verbose = false;
};

struct EpochLoss {
  double sim = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Unsupervised training: per step forward -> similarity + smoothness loss ->
/// backward -> Adam (batch size 1, fixed pair order). Deterministic given the
/// model seed. Throws on non-finite loss.
std::vector<EpochLoss> train(RegistrationModel& model,
                             const std::vector<RegPair>& pairs,
                             const TrainOptions& options);

}  // namespace voxreg
