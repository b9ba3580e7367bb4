#include <doctest.h>

#include <cmath>

#include "voxreg/gradcheck.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/metrics.hpp"
#include "voxreg/network.hpp"
#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"

using namespace voxreg;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.stages = 2;
  cfg.channels = {4, 8};
  cfg.stride_k = {2, 2};
  cfg.bottleneck_d = 8;
  cfg.lncc_window = 3;
  return cfg;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.array()(i) != b.array()(i)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.channels = {4};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.lncc_window = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.bottleneck_d = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("identity at initialization") {
  NetworkConfig cfg = small_config();
  RegistrationModel model = build_model(cfg, 5);
  Rng rng(50);
  Volume moving = random_uniform({8, 8, 8}, rng, 0, 1);
  Volume fixed = random_uniform({8, 8, 8}, rng, 0, 1);

  ForwardResult res = forward(model, moving, fixed);
  CHECK(res.field.shape() == Shape{3, 8, 8, 8});
  for (Index i = 0; i < res.field.size(); ++i) {
    CHECK(res.field.array()(i) == 0.0);
  }
  CHECK(bits_equal(res.warped, moving));

  // total loss at init is pure similarity
  LossBreakdown lb = total_loss(fixed, moving, res.field, cfg.lambda_reg,
                                SimKind::lncc, cfg.lncc_window);
  CHECK(lb.reg == 0.0);
  CHECK(lb.total == lb.sim);
  CHECK(lb.sim ==
        doctest::Approx(
            sim_loss(fixed, moving, SimKind::lncc, cfg.lncc_window).value())
            .epsilon(1e-15));
}

TEST_CASE("forward validates dims") {
  RegistrationModel model = build_model(small_config(), 5);
  Rng rng(51);
  Volume bad = random_uniform({6, 8, 8}, rng, 0, 1);  // 6 % 4 != 0
  Volume fixed = random_uniform({6, 8, 8}, rng, 0, 1);
  CHECK_THROWS_AS(forward(model, bad, fixed), std::invalid_argument);
}

TEST_CASE("spatial_transform pinned behaviours") {
  Rng rng(52);
  Volume m = random_uniform({5, 6, 7}, rng, 0, 1);

  // zero field: exact copy
  Tensor zero = Tensor::zeros({3, 5, 6, 7});
  CHECK(bits_equal(spatial_transform(m, zero), m));

  // integer shift (-1,0,0): out(p) = M(p - 1 along depth) on interior voxels
  Tensor shift_f = Tensor::zeros({3, 5, 6, 7});
  for (Index i = 0; i < 5 * 6 * 7; ++i) shift_f.array_mut()(i) = -1.0;
  Volume shifted = spatial_transform(m, shift_f);
  for (Index z = 1; z < 5; ++z) {
    for (Index y = 0; y < 6; ++y) {
      for (Index x = 0; x < 7; ++x) {
        CHECK(shifted.at({z, y, x}) == m.at({z - 1, y, x}));
      }
    }
  }

  // half-voxel shift on a linear ramp: trilinear is exact on linear fields
  Volume ramp = Tensor::zeros({4, 4, 8});
  for (Index z = 0; z < 4; ++z) {
    for (Index y = 0; y < 4; ++y) {
      for (Index x = 0; x < 8; ++x) {
        ramp.set({z, y, x}, 0.1 * static_cast<double>(x));
      }
    }
  }
  Tensor half = Tensor::zeros({3, 4, 4, 8});
  for (Index i = 0; i < 4 * 4 * 8; ++i) {
    half.array_mut()(2 * 4 * 4 * 8 + i) = 0.5;
  }
  Volume out = spatial_transform(ramp, half);
  for (Index z = 0; z < 4; ++z) {
    for (Index y = 0; y < 4; ++y) {
      for (Index x = 0; x < 7; ++x) {  // interior along the ramp axis
        CHECK(out.at({z, y, x}) ==
              doctest::Approx(0.1 * (static_cast<double>(x) + 0.5))
                  .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("label_transform pinned behaviours") {
  LabelMap labels(Shape{4, 4, 4});
  for (Index i = 0; i < labels.size(); ++i) {
    labels.array_mut()(i) = static_cast<std::uint16_t>(i % 3);
  }
  Tensor zero = Tensor::zeros({3, 4, 4, 4});
  LabelMap same = label_transform(labels, zero);
  for (Index i = 0; i < labels.size(); ++i) {
    CHECK(same.array()(i) == labels.array()(i));
  }

  // integer shift along width
  Tensor shift_f = Tensor::zeros({3, 4, 4, 4});
  for (Index i = 0; i < 64; ++i) shift_f.array_mut()(2 * 64 + i) = 1.0;
  LabelMap moved = label_transform(labels, shift_f);
  for (Index z = 0; z < 4; ++z) {
    for (Index y = 0; y < 4; ++y) {
      for (Index x = 0; x < 3; ++x) {
        CHECK(moved.at({z, y, x}) == labels.at({z, y, x + 1}));
      }
    }
  }

  // closure: outputs only ever take input label values
  Rng rng(53);
  Tensor noisy = random_uniform({3, 4, 4, 4}, rng, -2, 2);
  LabelMap warped = label_transform(labels, noisy);
  for (Index i = 0; i < warped.size(); ++i) {
    CHECK(warped.array()(i) <= 2);
  }
}

TEST_CASE("param_count closed form for the small config") {
  RegistrationModel model = build_model(small_config(), 5);
  // independent arithmetic: counts per layer for stages=2, channels={4,8}
  auto sga_params = [](Index c) {
    const Index grapher = (c * c + c) + 2 * c + (2 * c * c + c) + 2 * c +
                          (c * c + c) + 2 * c;
    const Index ffn = (4 * c * c + 4 * c) + 8 * c + (4 * c * c + c) + 2 * c;
    return grapher + ffn;
  };
  const Index enc1 = (4 * 2 * 8 + 4) + 2 * 4 + sga_params(4);
  const Index enc2 = (8 * 4 * 8 + 8) + 2 * 8 + sga_params(8);
  const Index bottleneck = 2 * 8 + (8 + 8 * 8 + 8 * 8 + 8 * 8) + 2 * 8 +
                           (8 * 27 + 8 + 8 + 8 * 8 + 8);
  const Index dec1 = (4 * (8 + 4) * 27 + 4) + 2 * 4;
  const Index dec2 = (4 * (4 + 2) * 27 + 4) + 2 * 4;
  const Index flow = 3 * 4 * 27 + 3;
  const Index want = enc1 + enc2 + bottleneck + dec1 + dec2 + flow;
  CHECK(model.param_count() == want);

  // spec'd single-layer arithmetic: linear 8->4 with bias, conv 2->4 3^3
  CHECK(8 * 4 + 4 == 36);
  CHECK(2 * 4 * 27 + 4 == 220);
}

TEST_CASE("training drops the loss and stays deterministic") {
  NetworkConfig cfg = small_config();
  std::vector<RegPair> pairs;
  Rng rng(54);
  {
    Volume moving = random_uniform({8, 8, 8}, rng, 0, 1);
    Tensor field = random_uniform({3, 8, 8, 8}, rng, -0.8, 0.8);
    Volume fixed = spatial_transform(moving, field);
    pairs.push_back(RegPair{moving, fixed});
  }

  TrainOptions opt;
  opt.epochs = 8;
  opt.sim = SimKind::mse;

  RegistrationModel m1 = build_model(cfg, 9);
  std::vector<EpochLoss> h1 = train(m1, pairs, opt);
  CHECK(h1.size() == 8);
  CHECK(h1.back().total < h1.front().total);

  RegistrationModel m2 = build_model(cfg, 9);
  std::vector<EpochLoss> h2 = train(m2, pairs, opt);
  auto p1 = m1.named_params();
  auto p2 = m2.named_params();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(bits_equal(*p1[i].tensor, *p2[i].tensor));
  }
  for (size_t e = 0; e < h1.size(); ++e) {
    CHECK(h1[e].total == h2[e].total);
  }
}

TEST_CASE("epochs=0 leaves the model at initialization") {
  NetworkConfig cfg = small_config();
  RegistrationModel trained = build_model(cfg, 12);
  RegistrationModel reference = build_model(cfg, 12);
  std::vector<RegPair> pairs;
  Rng rng(55);
  Volume m = random_uniform({8, 8, 8}, rng, 0, 1);
  pairs.push_back(RegPair{m, m});
  TrainOptions opt;
  opt.epochs = 0;
  std::vector<EpochLoss> h = train(trained, pairs, opt);
  CHECK(h.empty());
  auto pa = trained.named_params();
  auto pb = reference.named_params();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(bits_equal(*pa[i].tensor, *pb[i].tensor));
  }
}

TEST_CASE("lr=0 keeps parameters and loss constant") {
  NetworkConfig cfg = small_config();
  cfg.lr = 0.0;
  RegistrationModel model = build_model(cfg, 13);
  RegistrationModel reference = build_model(cfg, 13);
  std::vector<RegPair> pairs;
  Rng rng(56);
  Volume moving = random_uniform({8, 8, 8}, rng, 0, 1);
  Volume fixed = random_uniform({8, 8, 8}, rng, 0, 1);
  pairs.push_back(RegPair{moving, fixed});
  TrainOptions opt;
  opt.epochs = 4;
  opt.sim = SimKind::mse;
  std::vector<EpochLoss> h = train(model, pairs, opt);
  for (const EpochLoss& e : h) CHECK(e.total == h.front().total);
  auto pa = model.named_params();
  auto pb = reference.named_params();
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(bits_equal(*pa[i].tensor, *pb[i].tensor));
  }
}

TEST_CASE("finite-difference suite: full network at 8^3") {
  for (const GradCheckResult& r : run_gradcheck("network", 111)) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
