#include <doctest.h>

#include <cmath>

#include "voxreg/losses.hpp"
#include "voxreg/metrics.hpp"
#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"

using namespace voxreg;

TEST_CASE("mse pinned values and oracle") {
  Rng rng(41);
  Tensor f = random_uniform({4, 4, 4}, rng, 0, 1);
  CHECK(mse(f, f) == 0.0);

  Tensor zero = Tensor::zeros({4, 4, 4});
  Tensor one = Tensor::constant({4, 4, 4}, 1.0);
  CHECK(mse(zero, one) == 1.0);

  Tensor w = random_uniform({4, 4, 4}, rng, 0, 1);
  double want = 0;
  for (Index i = 0; i < f.size(); ++i) {
    const double d = f.array()(i) - w.array()(i);
    want += d * d;
  }
  want /= static_cast<double>(f.size());
  CHECK(mse(f, w) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("lncc correlation identities") {
  Rng rng(42);
  Tensor f = random_uniform({10, 10, 10}, rng, 0, 1);

  CHECK(std::abs(lncc(f, f, 5) - 1.0) < 1e-9);

  // positive affine invariance: W = 2F + 3
  Tensor w = shift(scale(f, 2.0), 3.0);
  CHECK(std::abs(lncc(f, w, 5) - 1.0) < 1e-9);

  // anti-correlation: W = -F
  Tensor neg = scale(f, -1.0);
  CHECK(std::abs(lncc(f, neg, 5) + 1.0) < 1e-9);

  // range on unrelated volumes
  Tensor g = random_uniform({10, 10, 10}, rng, 0, 1);
  const double v = lncc(f, g, 5);
  CHECK(v <= 1.0);
  CHECK(v >= -1.0);

  CHECK_THROWS_AS(lncc(f, g, 4), std::invalid_argument);
  CHECK_THROWS_AS(lncc(f, g, 11), std::invalid_argument);
}

TEST_CASE("sim_loss composition") {
  Rng rng(43);
  Tensor f = random_uniform({8, 8, 8}, rng, 0, 1);
  CHECK(sim_loss(f, f, SimKind::lncc, 5).value() ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sim_loss(f, f, SimKind::mse, 5).value() == 0.0);
  Tensor neg = scale(f, -1.0);
  CHECK(sim_loss(f, neg, SimKind::lncc, 5).value() ==
        doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("reg_loss pinned values") {
  CHECK(reg_loss(Tensor::zeros({3, 4, 5, 6})).value() == 0.0);
  CHECK(reg_loss(Tensor::constant({3, 4, 5, 6}, 2.5)).value() == 0.0);

  // ramp of slope s along depth in component 0
  const Index d = 5, h = 4, w = 3;
  const double s = 0.75;
  Tensor field = Tensor::zeros({3, d, h, w});
  for (Index z = 0; z < d; ++z) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        field.set({0, z, y, x}, s * static_cast<double>(z));
      }
    }
  }
  // every forward difference along depth contributes s^2; (d-1)*h*w of them
  const double want = s * s * static_cast<double>((d - 1) * h * w) /
                      static_cast<double>(d * h * w);
  CHECK(reg_loss(field).value() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("total_loss breakdown invariant") {
  Rng rng(44);
  Tensor moving = random_uniform({8, 8, 8}, rng, 0, 1);
  Tensor fixed = random_uniform({8, 8, 8}, rng, 0, 1);
  Tensor field = random_uniform({3, 8, 8, 8}, rng, -0.4, 0.4);
  for (double lambda : {0.0, 1.0, 2.5}) {
    LossBreakdown lb =
        total_loss(fixed, moving, field, lambda, SimKind::lncc, 5);
    CHECK(std::abs(lb.total - (lb.sim + lambda * lb.reg)) < 1e-12);
    CHECK(lb.lambda == lambda);
  }
}

TEST_CASE("dice pinned cases") {
  LabelMap a(Shape{2, 2, 2});
  LabelMap b(Shape{2, 2, 2});
  // a: label 1 at voxels {0,1}; b: label 1 at voxels {1,2} -> dice 0.5
  a.array_mut()(0) = 1;
  a.array_mut()(1) = 1;
  b.array_mut()(1) = 1;
  b.array_mut()(2) = 1;
  MetricReport r = dice(a, b, {1});
  CHECK(r.dice_per_label.at(1) == 0.5);

  // identical maps: every present label scores 1
  MetricReport same = dice(a, a, present_labels(a, a));
  CHECK(same.dice_mean == 1.0);

  // disjoint masks score 0
  LabelMap c(Shape{2, 2, 2});
  c.array_mut()(5) = 1;
  MetricReport dj = dice(a, c, {1});
  CHECK(dj.dice_per_label.at(1) == 0.0);

  // label absent from both is excluded and recorded
  MetricReport und = dice(a, b, {1, 7});
  CHECK(und.undefined_labels == std::vector<std::uint16_t>{7});
  CHECK(und.dice_mean == 0.5);

  // symmetry
  MetricReport ab = dice(a, b, {1});
  MetricReport ba = dice(b, a, {1});
  CHECK(ab.dice_mean == ba.dice_mean);
}

TEST_CASE("jacobian determinant pinned fields") {
  const Index n = 6;
  // identity: determinant one everywhere
  Tensor zero = Tensor::zeros({3, n, n, n});
  Tensor det = jacobian_determinant(zero);
  for (Index i = 0; i < det.size(); ++i) CHECK(det.array()(i) == 1.0);
  CHECK(njd_percent(zero) == 0.0);

  // uniform dilation u(p) = 0.5 * p: J = 1.5 I, det = 3.375
  Tensor dil = Tensor::zeros({3, n, n, n});
  for (Index z = 0; z < n; ++z) {
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        dil.set({0, z, y, x}, 0.5 * static_cast<double>(z));
        dil.set({1, z, y, x}, 0.5 * static_cast<double>(y));
        dil.set({2, z, y, x}, 0.5 * static_cast<double>(x));
      }
    }
  }
  Tensor det2 = jacobian_determinant(dil);
  for (Index z = 1; z < n - 1; ++z) {
    for (Index y = 1; y < n - 1; ++y) {
      for (Index x = 1; x < n - 1; ++x) {
        CHECK(std::abs(det2.at({z, y, x}) - 3.375) < 1e-9);
      }
    }
  }

  // mirror along width: phi_x = (W-1) - x, orientation flip everywhere
  Tensor mirror = Tensor::zeros({3, n, n, n});
  for (Index z = 0; z < n; ++z) {
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        mirror.set({2, z, y, x},
                   static_cast<double>(n - 1 - 2 * x));
      }
    }
  }
  Tensor det3 = jacobian_determinant(mirror);
  for (Index i = 0; i < det3.size(); ++i) CHECK(det3.array()(i) < 0.0);
  CHECK(njd_percent(mirror) == 100.0);
}

TEST_CASE("njd fraction matches a constructed folded region") {
  // z-only profile: phi_z rises with slope 1, then reflects after z = m.
  // The same stencil applied to the 1-d profile predicts the folded rows.
  const Index d = 8, h = 3, w = 3, m = 5;
  std::vector<double> profile(static_cast<size_t>(d));
  for (Index z = 0; z < d; ++z) {
    const double phi = z <= m ? static_cast<double>(z)
                              : static_cast<double>(2 * m) - z;
    profile[static_cast<size_t>(z)] = phi;
  }
  Tensor field = Tensor::zeros({3, d, h, w});
  for (Index z = 0; z < d; ++z) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        field.set({0, z, y, x}, profile[static_cast<size_t>(z)] -
                                    static_cast<double>(z));
      }
    }
  }
  // independent 1-d prediction with the same stencil rules
  Index folded_rows = 0;
  for (Index z = 0; z < d; ++z) {
    double dphi;
    if (z == 0) {
      dphi = profile[1] - profile[0];
    } else if (z == d - 1) {
      dphi = profile[static_cast<size_t>(d - 1)] -
             profile[static_cast<size_t>(d - 2)];
    } else {
      dphi = 0.5 * (profile[static_cast<size_t>(z + 1)] -
                    profile[static_cast<size_t>(z - 1)]);
    }
    if (dphi <= 0.0) ++folded_rows;
  }
  const double want =
      100.0 * static_cast<double>(folded_rows * h * w) /
      static_cast<double>(d * h * w);
  CHECK(njd_percent(field) == doctest::Approx(want).epsilon(1e-12));
  CHECK(folded_rows > 0);  // the construction really folds
}

TEST_CASE("njd monotone under adding folded voxels") {
  const Index n = 6;
  Tensor field = Tensor::zeros({3, n, n, n});
  double prev = njd_percent(field);
  // progressively mirror more z-slabs
  for (Index upto : {1, 2, 4}) {
    Tensor f2 = field;
    for (Index z = 0; z < upto; ++z) {
      for (Index y = 0; y < n; ++y) {
        for (Index x = 0; x < n; ++x) {
          f2.set({0, z, y, x}, -3.0 * static_cast<double>(z) - 1.0);
        }
      }
    }
    const double now = njd_percent(f2);
    CHECK(now >= prev);
    prev = now;
  }
}
