#include "voxreg/network.hpp"

#include <cmath>
#include <iostream>

namespace voxreg {

void NetworkConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("config: stages must be >= 1");
  if (static_cast<Index>(channels.size()) != stages) {
    throw std::invalid_argument("config: channels list must have one entry per stage");
  }
  if (static_cast<Index>(stride_k.size()) != stages) {
    throw std::invalid_argument("config: stride_k list must have one entry per stage");
  }
  for (Index c : channels) {
    if (c < 1) throw std::invalid_argument("config: channels must be positive");
  }
  for (Index k : stride_k) {
    if (k < 1) throw std::invalid_argument("config: stride_k must be >= 1");
  }
  if (bottleneck_d != channels.back()) {
    throw std::invalid_argument(
        "config: bottleneck_d must equal the last stage's channel count");
  }
  if (lncc_window < 1 || lncc_window % 2 == 0) {
    throw std::invalid_argument("config: lncc_window must be odd");
  }
  if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
  if (lambda_reg < 0.0) {
    throw std::invalid_argument("config: lambda_reg must be >= 0");
  }
}

namespace {

Tensor conv_init(Shape shape, Rng& rng) {
  Index fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

// Decoder output channels mirror the encoder: stage t emits the channel
// count of encoder stage (stages-2-t); the final full-resolution stage
// reuses the first stage's width.
Index decoder_out_channels(const NetworkConfig& cfg, Index t) {
  const Index s = cfg.stages;
  return t + 2 <= s ? cfg.channels[static_cast<size_t>(s - 2 - t)]
                    : cfg.channels[0];
}

Index decoder_skip_channels(const NetworkConfig& cfg, Index t) {
  return t + 1 < cfg.stages ? cfg.channels[static_cast<size_t>(cfg.stages - 2 - t)]
                            : 2;  // last skip is the raw two-channel input
}

Index decoder_in_channels(const NetworkConfig& cfg, Index t) {
  const Index up = t == 0 ? cfg.channels.back()
                          : decoder_out_channels(cfg, t - 1);
  return up + decoder_skip_channels(cfg, t);
}

void append_sga_params(std::vector<NamedParam>& out, const std::string& prefix,
                       SGABlockParams& p) {
  GrapherParams& g = p.grapher;
  out.push_back({prefix + ".grapher.w_in.w", &g.w_in});
  out.push_back({prefix + ".grapher.w_in.b", &g.b_in});
  out.push_back({prefix + ".grapher.norm1.gamma", &g.n1_gamma});
  out.push_back({prefix + ".grapher.norm1.beta", &g.n1_beta});
  out.push_back({prefix + ".grapher.mrconv.w", &g.mr_w});
  out.push_back({prefix + ".grapher.mrconv.b", &g.mr_b});
  out.push_back({prefix + ".grapher.norm2.gamma", &g.n2_gamma});
  out.push_back({prefix + ".grapher.norm2.beta", &g.n2_beta});
  out.push_back({prefix + ".grapher.w_out.w", &g.w_out});
  out.push_back({prefix + ".grapher.w_out.b", &g.b_out});
  out.push_back({prefix + ".grapher.norm3.gamma", &g.n3_gamma});
  out.push_back({prefix + ".grapher.norm3.beta", &g.n3_beta});
  FFNParams& f = p.ffn;
  out.push_back({prefix + ".ffn.w1.w", &f.w1});
  out.push_back({prefix + ".ffn.w1.b", &f.b1});
  out.push_back({prefix + ".ffn.norm1.gamma", &f.n1_gamma});
  out.push_back({prefix + ".ffn.norm1.beta", &f.n1_beta});
  out.push_back({prefix + ".ffn.w2.w", &f.w2});
  out.push_back({prefix + ".ffn.w2.b", &f.b2});
  out.push_back({prefix + ".ffn.norm2.gamma", &f.n2_gamma});
  out.push_back({prefix + ".ffn.norm2.beta", &f.n2_beta});
}

}  // namespace

std::vector<NamedParam> RegistrationModel::named_params() {
  std::vector<NamedParam> out;
  for (size_t s = 0; s < encoder.size(); ++s) {
    const std::string prefix = "enc" + std::to_string(s + 1);
    EncoderStageParams& e = encoder[s];
    out.push_back({prefix + ".down.w", &e.down_w});
    out.push_back({prefix + ".down.b", &e.down_b});
    out.push_back({prefix + ".norm.gamma", &e.norm_gamma});
    out.push_back({prefix + ".norm.beta", &e.norm_beta});
    append_sga_params(out, prefix + ".sga", e.sga);
  }
  out.push_back({"bottleneck.norm1.gamma", &bottleneck.n1_gamma});
  out.push_back({"bottleneck.norm1.beta", &bottleneck.n1_beta});
  out.push_back({"bottleneck.ssa.w_i", &bottleneck.ssa.w_i});
  out.push_back({"bottleneck.ssa.w_k", &bottleneck.ssa.w_k});
  out.push_back({"bottleneck.ssa.w_v", &bottleneck.ssa.w_v});
  out.push_back({"bottleneck.ssa.w_o", &bottleneck.ssa.w_o});
  out.push_back({"bottleneck.norm2.gamma", &bottleneck.n2_gamma});
  out.push_back({"bottleneck.norm2.beta", &bottleneck.n2_beta});
  out.push_back({"bottleneck.dcs.dw.w", &bottleneck.dcs.dw_w});
  out.push_back({"bottleneck.dcs.dw.b", &bottleneck.dcs.dw_b});
  out.push_back({"bottleneck.dcs.scale", &bottleneck.dcs.channel_scale});
  out.push_back({"bottleneck.dcs.pw.w", &bottleneck.dcs.pw_w});
  out.push_back({"bottleneck.dcs.pw.b", &bottleneck.dcs.pw_b});
  for (size_t t = 0; t < decoder.size(); ++t) {
    const std::string prefix = "dec" + std::to_string(t + 1);
    DecoderStageParams& d = decoder[t];
    out.push_back({prefix + ".conv.w", &d.w});
    out.push_back({prefix + ".conv.b", &d.b});
    out.push_back({prefix + ".norm.gamma", &d.norm_gamma});
    out.push_back({prefix + ".norm.beta", &d.norm_beta});
  }
  out.push_back({"flow.w", &flow_w});
  out.push_back({"flow.b", &flow_b});
  return out;
}

Index RegistrationModel::param_count() const {
  Index total = 0;
  auto& self = const_cast<RegistrationModel&>(*this);
  for (const NamedParam& p : self.named_params()) total += p.tensor->size();
  return total;
}

RegistrationModel build_model(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  RegistrationModel model;
  model.config = config;

  Index cin = 2;  // moving and fixed, channel-concatenated
  for (Index s = 0; s < config.stages; ++s) {
    const Index c = config.channels[static_cast<size_t>(s)];
    EncoderStageParams e;
    e.down_w = conv_init({c, cin, 2, 2, 2}, rng);
    e.down_b = Tensor::zeros({c});
    e.norm_gamma = Tensor::constant({c}, 1.0);
    e.norm_beta = Tensor::zeros({c});
    e.sga = make_sga_block_params(c, rng);
    model.encoder.push_back(std::move(e));
    cin = c;
  }

  model.bottleneck = make_ssaformer_params(config.bottleneck_d, rng);

  for (Index t = 0; t < config.stages; ++t) {
    const Index in_c = decoder_in_channels(config, t);
    const Index out_c = decoder_out_channels(config, t);
    DecoderStageParams d;
    d.w = conv_init({out_c, in_c, 3, 3, 3}, rng);
    d.b = Tensor::zeros({out_c});
    d.norm_gamma = Tensor::constant({out_c}, 1.0);
    d.norm_beta = Tensor::zeros({out_c});
    model.decoder.push_back(std::move(d));
  }

  const Index last_c = decoder_out_channels(config, config.stages - 1);
  model.flow_w = Tensor::zeros({3, last_c, 3, 3, 3});
  model.flow_b = Tensor::zeros({3});
  return model;
}

ForwardResult forward(const RegistrationModel& model, const Volume& moving,
                      const Volume& fixed) {
  const NetworkConfig& cfg = model.config;
  cfg.validate();
  if (moving.rank() != 3 || moving.shape() != fixed.shape()) {
    shape_error("forward: moving/fixed must be [D,H,W] with equal dims");
  }
  const Index d = moving.dim(0), h = moving.dim(1), w = moving.dim(2);
  const Index div = Index(1) << cfg.stages;
  if (d % div || h % div || w % div) {
    throw std::invalid_argument(
        "forward: input dims must be divisible by 2^stages");
  }

  Tensor x = concat(reshape(moving, {1, 1, d, h, w}),
                    reshape(fixed, {1, 1, d, h, w}), 1);
  std::vector<Tensor> skips;
  skips.push_back(x);

  Index sd = d, sh = h, sw = w;
  Conv3dOpts down_opts;
  down_opts.stride = 2;
  for (Index s = 0; s < cfg.stages; ++s) {
    const EncoderStageParams& e = model.encoder[static_cast<size_t>(s)];
    x = conv3d(x, e.down_w, &e.down_b, down_opts);
    x = instance_norm(x, e.norm_gamma, e.norm_beta);
    x = gelu(x);
    sd /= 2;
    sh /= 2;
    sw /= 2;
    GraphSpec spec{cfg.stride_k[static_cast<size_t>(s)], {sd, sh, sw}};
    x = sga_block(x, spec, e.sga);
    skips.push_back(x);
  }

  x = ssaformer_block(x, model.bottleneck);

  Conv3dOpts dec_opts;
  dec_opts.padding = 1;
  for (Index t = 0; t < cfg.stages; ++t) {
    const DecoderStageParams& dec = model.decoder[static_cast<size_t>(t)];
    x = upsample_trilinear_x2(x);
    x = concat(x, skips[static_cast<size_t>(cfg.stages - 1 - t)], 1);
    x = conv3d(x, dec.w, &dec.b, dec_opts);
    x = instance_norm(x, dec.norm_gamma, dec.norm_beta);
    x = gelu(x);
  }

  Conv3dOpts flow_opts;
  flow_opts.padding = 1;
  Tensor flow = conv3d(x, model.flow_w, &model.flow_b, flow_opts);
  Tensor field = reshape(flow, {3, d, h, w});
  Volume warped = warp_trilinear(moving, field);
  return ForwardResult{std::move(warped), std::move(field)};
}

Volume spatial_transform(const Volume& moving, const DeformationField& field) {
  return warp_trilinear(moving, field);
}

LabelMap label_transform(const LabelMap& labels, const DeformationField& field) {
  if (labels.rank() != 3) shape_error("label_transform: labels must be [D,H,W]");
  if (field.rank() != 4 || field.dim(0) != 3 || field.dim(1) != labels.dim(0) ||
      field.dim(2) != labels.dim(1) || field.dim(3) != labels.dim(2)) {
    shape_error("label_transform: field dims must match labels");
  }
  const Index d = labels.dim(0), h = labels.dim(1), w = labels.dim(2);
  const Index vox = d * h * w;
  const double* u = field.array().data();
  LabelMap out(labels.shape());
  auto& dst = out.array_mut();
  const auto& src = labels.array();
  auto nearest = [](double c, Index len) {
    Index i = static_cast<Index>(std::floor(c + 0.5));
    if (i < 0) i = 0;
    if (i > len - 1) i = len - 1;
    return i;
  };
  for (Index z = 0; z < d; ++z) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index p = (z * h + y) * w + x;
        const Index iz = nearest(static_cast<double>(z) + u[p], d);
        const Index iy = nearest(static_cast<double>(y) + u[vox + p], h);
        const Index ix = nearest(static_cast<double>(x) + u[2 * vox + p], w);
        dst(p) = src((iz * h + iy) * w + ix);
      }
    }
  }
  return out;
}

std::vector<EpochLoss> train(RegistrationModel& model,
                             const std::vector<RegPair>& pairs,
                             const TrainOptions& options) {
  if (pairs.empty()) {
    throw std::invalid_argument("train: need at least one pair");
  }
  const NetworkConfig& cfg = model.config;
  AdamState state;
  state.lr = cfg.lr;
  std::vector<EpochLoss> history;
  history.reserve(static_cast<size_t>(options.epochs));

  for (Index epoch = 0; epoch < options.epochs; ++epoch) {
    EpochLoss mean;
    for (const RegPair& pair : pairs) {
      Tape tape;
      std::vector<NamedParam> params = model.named_params();
      for (NamedParam& p : params) tape.watch(*p.tensor);
      LossBreakdown loss;
      {
        TapeScope scope(tape);
        ForwardResult res = forward(model, pair.moving, pair.fixed);
        loss = total_loss(pair.fixed, pair.moving, res.field, cfg.lambda_reg,
                          options.sim, cfg.lncc_window);
      }
      if (!std::isfinite(loss.total)) {
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) +
            " (sim=" + std::to_string(loss.sim) +
            ", reg=" + std::to_string(loss.reg) + ")");
      }
      GradientMap grads = tape.backward(loss.value);
      adam_step(params, grads, state);
      mean.sim += loss.sim;
      mean.reg += loss.reg;
      mean.total += loss.total;
    }
    const double n = static_cast<double>(pairs.size());
    mean.sim /= n;
    mean.reg /= n;
    mean.total /= n;
    history.push_back(mean);
    if (options.verbose) {
      std::cout << "epoch " << (epoch + 1) << "/" << options.epochs
                << " sim=" << mean.sim << " reg=" << mean.reg
                << " total=" << mean.total << "\n";
    }
  }
  return history;
}

}  // namespace voxreg
