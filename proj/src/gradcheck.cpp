#include "voxreg/gradcheck.hpp"

#include <cmath>
#include <memory>

#include "voxreg/losses.hpp"
#include "voxreg/metrics.hpp"
#include "voxreg/network.hpp"
#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"
#include "voxreg/sga.hpp"
#include "voxreg/ssaformer.hpp"

namespace voxreg {

GradCheckResult run_gradcheck_case(const GradCheckCase& c, double h,
                                   double tol, double abs_floor) {
  GradCheckResult result;
  result.name = c.name;

  std::vector<Tensor> params = c.params;
  Tape tape;
  for (Tensor& p : params) tape.watch(p);
  Tensor loss_value;
  {
    TapeScope scope(tape);
    loss_value = c.loss(params);
  }
  if (loss_value.size() != 1) {
    throw std::invalid_argument("gradcheck: loss must be scalar in case " +
                                c.name);
  }
  GradientMap grads = tape.backward(loss_value);

  std::vector<Tensor> analytic;
  for (Tensor& p : params) {
    const Tensor& g = grads.at(p);
    if (!detail::all_finite(g.array())) {
      result.pass = false;
      result.max_rel_err = std::numeric_limits<double>::infinity();
      return result;
    }
    analytic.push_back(g);
  }

  auto eval = [&]() { return c.loss(params).value(); };

  Rng sampler(0xC0FFEEULL ^ static_cast<std::uint64_t>(c.params.size()));
  double max_rel = 0.0;
  Index checked = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<Index> idx;
    if (c.samples_per_param <= 0 || c.samples_per_param >= p.size()) {
      idx.resize(static_cast<size_t>(p.size()));
      for (Index j = 0; j < p.size(); ++j) idx[static_cast<size_t>(j)] = j;
    } else {
      for (Index s = 0; s < c.samples_per_param; ++s) {
        idx.push_back(sampler.uniform_index(0, p.size() - 1));
      }
    }
    for (Index j : idx) {
      const double orig = p.array()(j);
      p.array_mut()(j) = orig + h;
      const double f_plus = eval();
      p.array_mut()(j) = orig - h;
      const double f_minus = eval();
      p.array_mut()(j) = orig;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double ad = analytic[i].array()(j);
      const double diff = std::abs(ad - fd);
      ++checked;
      if (diff <= abs_floor) continue;
      const double rel = diff / std::max(std::abs(ad), std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  result.max_rel_err = max_rel;
  result.checked = checked;
  result.pass = max_rel < tol;
  return result;
}

namespace {

// Loss probe: a fixed random weighting makes every output element contribute
// a generic gradient.
Tensor probe(const Tensor& reference_output, Rng& rng) {
  return random_uniform(reference_output.shape(), rng, -1.0, 1.0);
}

Tensor signed_away_from_zero(Shape shape, Rng& rng, double lo = 0.05,
                             double hi = 1.0) {
  ArrayXd data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) {
    const double mag = rng.uniform(lo, hi);
    data(i) = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return Tensor(std::move(shape), std::move(data));
}

using LossFn = std::function<Tensor(std::vector<Tensor>&)>;

GradCheckCase make_case(std::string name, std::vector<Tensor> params,
                        LossFn fn, Index samples = 0) {
  GradCheckCase c;
  c.name = std::move(name);
  c.params = std::move(params);
  c.loss = std::move(fn);
  c.samples_per_param = samples;
  return c;
}

void add_tensor_cases(std::vector<GradCheckCase>& cases, Rng& rng) {
  {
    Tensor a = random_uniform({2, 3, 4}, rng, -1, 1);
    Tensor b = random_uniform({2, 1, 4}, rng, -1, 1);
    for (auto [name, op] : std::initializer_list<
             std::pair<const char*, Tensor (*)(const Tensor&, const Tensor&)>>{
             {"add_broadcast", &add},
             {"sub_broadcast", &sub},
             {"mul_broadcast", &mul}}) {
      Tensor r = probe(op(a, b), rng);
      cases.push_back(make_case(name, {a, b}, [op, r](std::vector<Tensor>& p) {
        return sum_all(mul(op(p[0], p[1]), r));
      }));
    }
    Tensor den = random_uniform({2, 1, 4}, rng, 0.5, 2.0);
    Tensor r = probe(div(a, den), rng);
    cases.push_back(make_case("div_broadcast", {a, den},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(div(p[0], p[1]), r));
                              }));
  }
  {
    Tensor a = random_uniform({3, 4, 5}, rng, -1, 1);
    Tensor b = random_uniform({3, 4, 5}, rng, -1, 1);
    Tensor r = probe(a, rng);
    cases.push_back(make_case("elem_max", {a, b},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(elem_max(p[0], p[1]), r));
                              }));
  }
  {
    Tensor x = random_uniform({4, 5}, rng, -2, 2);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("scale_shift", {x}, [r](std::vector<Tensor>& p) {
      return sum_all(mul(shift(scale(p[0], 1.7), -0.3), r));
    }));
    cases.push_back(make_case("gelu", {x}, [r](std::vector<Tensor>& p) {
      return sum_all(mul(gelu(p[0]), r));
    }));
    cases.push_back(make_case("softmax_axis1", {x},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(softmax(p[0], 1), r));
                              }));
    cases.push_back(make_case("softmax_axis0", {x},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(softmax(p[0], 0), r));
                              }));
  }
  {
    Tensor x = signed_away_from_zero({4, 6}, rng);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("relu", {x}, [r](std::vector<Tensor>& p) {
      return sum_all(mul(relu(p[0]), r));
    }));
  }
  {
    Tensor x = random_uniform({3, 4}, rng, 0.5, 2.0);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("sqrt", {x}, [r](std::vector<Tensor>& p) {
      return sum_all(mul(sqrt_elem(p[0]), r));
    }));
  }
  {
    Tensor x = random_uniform({2, 3, 4}, rng, -1, 1);
    cases.push_back(make_case("mean_all", {x}, [](std::vector<Tensor>& p) {
      return mean_all(mul(p[0], p[0]));
    }));
    Tensor r1 = probe(sum_axis(x, 1, true), rng);
    cases.push_back(make_case("sum_axis_keep", {x},
                              [r1](std::vector<Tensor>& p) {
                                return sum_all(mul(sum_axis(p[0], 1, true), r1));
                              }));
    Tensor r2 = probe(sum_axis(x, 0, false), rng);
    cases.push_back(make_case("sum_axis_drop", {x},
                              [r2](std::vector<Tensor>& p) {
                                return sum_all(mul(sum_axis(p[0], 0, false), r2));
                              }));
    Tensor r3 = probe(x, rng);
    cases.push_back(make_case("reshape", {x}, [r3](std::vector<Tensor>& p) {
      return sum_all(mul(reshape(reshape(p[0], {4, 6}), {2, 3, 4}), r3));
    }));
    Tensor r4 = probe(slice(x, 1, 1, 2), rng);
    cases.push_back(make_case("slice", {x}, [r4](std::vector<Tensor>& p) {
      return sum_all(mul(slice(p[0], 1, 1, 2), r4));
    }));
  }
  {
    Tensor a = random_uniform({2, 2, 3}, rng, -1, 1);
    Tensor b = random_uniform({2, 4, 3}, rng, -1, 1);
    Tensor r = probe(concat(a, b, 1), rng);
    cases.push_back(make_case("concat", {a, b}, [r](std::vector<Tensor>& p) {
      return sum_all(mul(concat(p[0], p[1], 1), r));
    }));
  }
  {
    Tensor x = random_uniform({1, 3, 2, 3, 2}, rng, -1, 1);
    Tensor r = probe(tokens_from_volume(x), rng);
    cases.push_back(make_case("tokens_roundtrip", {x},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(tokens_from_volume(p[0]), r));
                              }));
  }
  {
    Tensor x = random_uniform({1, 2, 4, 3, 5}, rng, -1, 1);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("roll3d", {x}, [r](std::vector<Tensor>& p) {
      Tensor y = roll3d(p[0], Axis3::depth, 3);
      y = roll3d(y, Axis3::height, -2);
      y = roll3d(y, Axis3::width, 7);
      return sum_all(mul(y, r));
    }));
  }
  {
    Tensor x = random_uniform({1, 2, 4, 4, 4}, rng, -1, 1);
    Tensor w = random_uniform({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor b = random_uniform({3}, rng, -0.5, 0.5);
    Conv3dOpts opts;
    opts.padding = 1;
    Tensor r = probe(conv3d(x, w, &b, opts), rng);
    cases.push_back(make_case("conv3d_k3p1", {x, w, b},
                              [r, opts](std::vector<Tensor>& p) {
                                return sum_all(
                                    mul(conv3d(p[0], p[1], &p[2], opts), r));
                              }));
  }
  {
    Tensor x = random_uniform({1, 2, 4, 4, 4}, rng, -1, 1);
    Tensor w = random_uniform({4, 2, 2, 2, 2}, rng, -0.5, 0.5);
    Tensor b = random_uniform({4}, rng, -0.5, 0.5);
    Conv3dOpts opts;
    opts.stride = 2;
    Tensor r = probe(conv3d(x, w, &b, opts), rng);
    cases.push_back(make_case("conv3d_k2s2", {x, w, b},
                              [r, opts](std::vector<Tensor>& p) {
                                return sum_all(
                                    mul(conv3d(p[0], p[1], &p[2], opts), r));
                              }));
  }
  {
    Tensor x = random_uniform({1, 4, 3, 3, 3}, rng, -1, 1);
    Tensor w = random_uniform({4, 2, 1, 1, 1}, rng, -0.5, 0.5);
    Conv3dOpts opts;
    opts.groups = 2;
    Tensor r = probe(conv3d(x, w, nullptr, opts), rng);
    cases.push_back(make_case("conv3d_groups", {x, w},
                              [r, opts](std::vector<Tensor>& p) {
                                return sum_all(
                                    mul(conv3d(p[0], p[1], nullptr, opts), r));
                              }));
  }
  {
    Tensor x = random_uniform({2, 3, 5}, rng, -1, 1);
    Tensor w = random_uniform({5, 4}, rng, -0.5, 0.5);
    Tensor b = random_uniform({4}, rng, -0.5, 0.5);
    Tensor r = probe(linear(x, w, &b), rng);
    cases.push_back(make_case("linear", {x, w, b},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(linear(p[0], p[1], &p[2]), r));
                              }));
  }
  {
    Tensor x = random_uniform({2, 3, 4, 2, 2}, rng, -1, 1);
    Tensor gamma = random_uniform({3}, rng, 0.5, 1.5);
    Tensor beta = random_uniform({3}, rng, -0.5, 0.5);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("instance_norm", {x, gamma, beta},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(
                                    mul(instance_norm(p[0], p[1], p[2]), r));
                              }));
  }
  {
    Tensor x = random_uniform({1, 2, 2, 3, 2}, rng, -1, 1);
    Tensor r = probe(upsample_trilinear_x2(x), rng);
    cases.push_back(make_case("upsample_trilinear_x2", {x},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(upsample_trilinear_x2(p[0]), r));
                              }));
  }
  {
    Tensor vol = random_uniform({5, 6, 7}, rng, 0, 1);
    Tensor field = random_uniform({3, 5, 6, 7}, rng, 0.1, 0.7);
    Tensor r = probe(vol, rng);
    cases.push_back(make_case("warp_trilinear", {vol, field},
                              [r](std::vector<Tensor>& p) {
                                return sum_all(mul(warp_trilinear(p[0], p[1]), r));
                              }));
  }
}

void add_sga_cases(std::vector<GradCheckCase>& cases, Rng& rng) {
  const GraphSpec spec{2, {6, 6, 6}};
  {
    Tensor x = random_uniform({1, 2, 6, 6, 6}, rng, -1, 1);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("sga_relative_max", {x},
                              [r, spec](std::vector<Tensor>& p) {
                                return sum_all(mul(sga_relative_max(p[0], spec), r));
                              }));
  }
  {
    Tensor x = random_uniform({1, 2, 6, 6, 6}, rng, -1, 1);
    Tensor w = random_uniform({2, 4, 1, 1, 1}, rng, -0.5, 0.5);
    Tensor b = random_uniform({2}, rng, -0.2, 0.2);
    Tensor r = probe(x, rng);
    cases.push_back(make_case("mrconv_sga", {x, w, b},
                              [r, spec](std::vector<Tensor>& p) {
                                return sum_all(
                                    mul(mrconv_sga(p[0], spec, p[1], &p[2]), r));
                              }));
  }
  {
    Rng init = rng.fork(11);
    GrapherParams gp = make_grapher_params(2, init);
    Tensor x = random_uniform({1, 2, 6, 6, 6}, rng, -1, 1);
    Tensor r = probe(x, rng);
    std::vector<Tensor> params{x,        gp.w_in,     gp.b_in,  gp.n1_gamma,
                               gp.n1_beta, gp.mr_w,   gp.mr_b,  gp.n2_gamma,
                               gp.n2_beta, gp.w_out,  gp.b_out, gp.n3_gamma,
                               gp.n3_beta};
    cases.push_back(make_case(
        "grapher", params,
        [r, spec](std::vector<Tensor>& p) {
          GrapherParams q;
          q.w_in = p[1];
          q.b_in = p[2];
          q.n1_gamma = p[3];
          q.n1_beta = p[4];
          q.mr_w = p[5];
          q.mr_b = p[6];
          q.n2_gamma = p[7];
          q.n2_beta = p[8];
          q.w_out = p[9];
          q.b_out = p[10];
          q.n3_gamma = p[11];
          q.n3_beta = p[12];
          return sum_all(mul(grapher(p[0], q, spec), r));
        },
        4));
  }
  {
    Rng init = rng.fork(12);
    FFNParams fp = make_ffn_params(2, init);
    Tensor x = random_uniform({1, 2, 4, 4, 4}, rng, -1, 1);
    Tensor r = probe(x, rng);
    std::vector<Tensor> params{x,          fp.w1,      fp.b1, fp.n1_gamma,
                               fp.n1_beta, fp.w2,      fp.b2, fp.n2_gamma,
                               fp.n2_beta};
    cases.push_back(make_case(
        "ffn", params,
        [r](std::vector<Tensor>& p) {
          FFNParams q;
          q.w1 = p[1];
          q.b1 = p[2];
          q.n1_gamma = p[3];
          q.n1_beta = p[4];
          q.w2 = p[5];
          q.b2 = p[6];
          q.n2_gamma = p[7];
          q.n2_beta = p[8];
          return sum_all(mul(ffn(p[0], q), r));
        },
        4));
  }
}

void add_ssa_cases(std::vector<GradCheckCase>& cases, Rng& rng) {
  {
    Rng init = rng.fork(21);
    SSAParams sp = make_ssa_params(3, 3, init);
    Tensor h = random_uniform({5, 3}, rng, -1, 1);
    cases.push_back(make_case("context_scores", {h, sp.w_i},
                              [](std::vector<Tensor>& p) {
                                SSAParams q;
                                q.w_i = p[1];
                                // probe via weighted sum of scores
                                Tensor cs = context_scores(p[0], q);
                                Tensor r = Tensor({5}, std::vector<double>{
                                                           0.9, -0.2, 0.4, -0.7,
                                                           0.3});
                                return sum_all(mul(cs, r));
                              }));
    Tensor r = probe(ssa(h, sp), rng);
    cases.push_back(make_case("ssa", {h, sp.w_i, sp.w_k, sp.w_v, sp.w_o},
                              [r](std::vector<Tensor>& p) {
                                SSAParams q;
                                q.w_i = p[1];
                                q.w_k = p[2];
                                q.w_v = p[3];
                                q.w_o = p[4];
                                return sum_all(mul(ssa(p[0], q), r));
                              }));
  }
  {
    Rng init = rng.fork(22);
    DCSParams dp = make_dcs_params(3, init);
    Tensor x = random_uniform({1, 3, 3, 3, 3}, rng, -1, 1);
    Tensor r = probe(x, rng);
    cases.push_back(make_case(
        "dcs", {x, dp.dw_w, dp.dw_b, dp.channel_scale, dp.pw_w, dp.pw_b},
        [r](std::vector<Tensor>& p) {
          DCSParams q;
          q.dw_w = p[1];
          q.dw_b = p[2];
          q.channel_scale = p[3];
          q.pw_w = p[4];
          q.pw_b = p[5];
          return sum_all(mul(dcs(p[0], q), r));
        }));
  }
  {
    Rng init = rng.fork(23);
    auto sf = std::make_shared<SSAFormerParams>(make_ssaformer_params(3, init));
    Tensor x = random_uniform({1, 3, 2, 2, 2}, rng, -1, 1);
    Tensor r = probe(x, rng);
    std::vector<Tensor> params{x,
                               sf->n1_gamma,
                               sf->n1_beta,
                               sf->ssa.w_i,
                               sf->ssa.w_k,
                               sf->ssa.w_v,
                               sf->ssa.w_o,
                               sf->n2_gamma,
                               sf->n2_beta,
                               sf->dcs.dw_w,
                               sf->dcs.dw_b,
                               sf->dcs.channel_scale,
                               sf->dcs.pw_w,
                               sf->dcs.pw_b};
    cases.push_back(make_case(
        "ssaformer_block", params,
        [r, sf](std::vector<Tensor>& p) {
          SSAFormerParams q = *sf;
          q.n1_gamma = p[1];
          q.n1_beta = p[2];
          q.ssa.w_i = p[3];
          q.ssa.w_k = p[4];
          q.ssa.w_v = p[5];
          q.ssa.w_o = p[6];
          q.n2_gamma = p[7];
          q.n2_beta = p[8];
          q.dcs.dw_w = p[9];
          q.dcs.dw_b = p[10];
          q.dcs.channel_scale = p[11];
          q.dcs.pw_w = p[12];
          q.dcs.pw_b = p[13];
          return sum_all(mul(ssaformer_block(p[0], q), r));
        },
        6));
  }
}

void add_losses_cases(std::vector<GradCheckCase>& cases, Rng& rng) {
  {
    Tensor f = random_uniform({6, 6, 6}, rng, 0, 1);
    Tensor w = random_uniform({6, 6, 6}, rng, 0, 1);
    cases.push_back(make_case("mse_loss", {f, w}, [](std::vector<Tensor>& p) {
      return mse_loss(p[0], p[1]);
    }));
    cases.push_back(make_case("lncc_w3", {f, w},
                              [](std::vector<Tensor>& p) {
                                return lncc_value(p[0], p[1], 3);
                              },
                              24));
  }
  {
    Tensor field = random_uniform({3, 4, 5, 6}, rng, -0.8, 0.8);
    cases.push_back(make_case("reg_loss", {field}, [](std::vector<Tensor>& p) {
      return reg_loss(p[0]);
    }));
  }
  {
    Tensor moving = random_uniform({6, 6, 6}, rng, 0, 1);
    Tensor fixed = random_uniform({6, 6, 6}, rng, 0, 1);
    Tensor field = random_uniform({3, 6, 6, 6}, rng, 0.1, 0.6);
    cases.push_back(make_case("total_loss_lncc", {moving, field},
                              [fixed](std::vector<Tensor>& p) {
                                return total_loss(fixed, p[0], p[1], 0.7,
                                                  SimKind::lncc, 3)
                                    .value;
                              },
                              24));
    cases.push_back(make_case("total_loss_mse", {moving, field},
                              [fixed](std::vector<Tensor>& p) {
                                return total_loss(fixed, p[0], p[1], 0.7,
                                                  SimKind::mse, 3)
                                    .value;
                              },
                              24));
  }
}

void add_network_case(std::vector<GradCheckCase>& cases, Rng& rng) {
  NetworkConfig cfg;
  cfg.stages = 2;
  cfg.channels = {4, 8};
  cfg.stride_k = {2, 2};
  cfg.bottleneck_d = 8;
  cfg.lncc_window = 3;
  auto model = std::make_shared<RegistrationModel>(build_model(cfg, 99));
  // Small nonzero flow output keeps the warp off the interpolation kinks at
  // integer sample coordinates.
  Rng flow_rng = rng.fork(31);
  model->flow_w = random_uniform(model->flow_w.shape(), flow_rng, -0.02, 0.02);
  model->flow_b = random_uniform(model->flow_b.shape(), flow_rng, 0.15, 0.35);

  Tensor moving = random_uniform({8, 8, 8}, rng, 0, 1);
  Tensor fixed = random_uniform({8, 8, 8}, rng, 0, 1);

  std::vector<Tensor> params;
  for (const NamedParam& p : model->named_params()) params.push_back(*p.tensor);
  cases.push_back(make_case(
      "network_8cube", params,
      [model, moving, fixed, cfg](std::vector<Tensor>& p) {
        std::vector<NamedParam> named = model->named_params();
        for (size_t i = 0; i < named.size(); ++i) *named[i].tensor = p[i];
        ForwardResult res = forward(*model, moving, fixed);
        return total_loss(fixed, moving, res.field, cfg.lambda_reg,
                          SimKind::lncc, cfg.lncc_window)
            .value;
      },
      1));
}

}  // namespace

std::vector<GradCheckCase> make_gradcheck_suite(const std::string& module,
                                                std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckCase> cases;
  const bool all = module == "all";
  if (all || module == "tensor") add_tensor_cases(cases, rng);
  if (all || module == "sga") add_sga_cases(cases, rng);
  if (all || module == "ssa") add_ssa_cases(cases, rng);
  if (all || module == "losses") add_losses_cases(cases, rng);
  if (all || module == "network") add_network_case(cases, rng);
  if (cases.empty()) {
    throw std::invalid_argument(
        "unknown gradcheck module '" + module +
        "' (expected all|tensor|sga|ssa|losses|network)");
  }
  return cases;
}

std::vector<GradCheckResult> run_gradcheck(const std::string& module,
                                           std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  for (const GradCheckCase& c : make_gradcheck_suite(module, seed)) {
    results.push_back(run_gradcheck_case(c));
  }
  return results;
}

}  // namespace voxreg
