#include <doctest.h>

#include <algorithm>

#include "voxreg/gradcheck.hpp"
#include "voxreg/rng.hpp"
#include "voxreg/sga.hpp"

using namespace voxreg;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.array()(i) != b.array()(i)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sga_neighbors pinned examples") {
  // stride exceeds extent: only the voxel itself
  GraphSpec s1{4, {4, 4, 4}};
  CHECK(sga_neighbors(s1, {1, 2, 3}) ==
        std::vector<Index>{1 * 16 + 2 * 4 + 3});

  // every second voxel along a row of nine
  GraphSpec s2{2, {1, 1, 9}};
  CHECK(sga_neighbors(s2, {0, 0, 0}) == std::vector<Index>{0, 2, 4, 6, 8});

  // full row+column+depth cross through p for K=1: 7 distinct voxels in 3^3
  GraphSpec s3{1, {3, 3, 3}};
  const auto nbrs = sga_neighbors(s3, {1, 1, 1});
  CHECK(nbrs.size() == 7);
  CHECK(std::find(nbrs.begin(), nbrs.end(), 1 * 9 + 1 * 3 + 1) != nbrs.end());
}

TEST_CASE("sga_oracle trivial values") {
  GraphSpec spec{2, {4, 4, 4}};
  Tensor flat = Tensor::constant({1, 1, 4, 4, 4}, 0.7);
  Tensor xj = sga_oracle(flat, spec);
  for (Index i = 0; i < xj.size(); ++i) CHECK(xj.array()(i) == 0.0);

  // one hot voxel: at the hot voxel, max difference is 1 (it has non-self
  // neighbours); elsewhere differences are <= 0 so X_j stays 0
  Tensor hot = Tensor::zeros({1, 1, 4, 4, 4});
  hot.set({0, 0, 1, 1, 1}, 1.0);
  Tensor xj2 = sga_oracle(hot, spec);
  CHECK(xj2.at({0, 0, 1, 1, 1}) == 1.0);
  CHECK(xj2.at({0, 0, 0, 0, 0}) == 0.0);
}

TEST_CASE("roll-based X_j equals adjacency oracle bit-exactly") {
  Rng rng(77);
  for (Index k : {1, 2, 4}) {
    for (Index n : {4, 6, 8}) {
      GraphSpec spec{k, {n, n, n}};
      for (int rep = 0; rep < 3; ++rep) {
        Tensor x = random_uniform({1, 2, n, n, n}, rng, -1, 1);
        CHECK(bits_equal(sga_relative_max(x, spec), sga_oracle(x, spec)));
      }
    }
  }
}

TEST_CASE("X_j is equivariant under circular translation") {
  Rng rng(78);
  GraphSpec spec{2, {6, 6, 6}};
  Tensor x = random_uniform({1, 2, 6, 6, 6}, rng, -1, 1);
  Tensor xj = sga_relative_max(x, spec);
  for (Axis3 axis : {Axis3::depth, Axis3::height, Axis3::width}) {
    Tensor shifted = roll3d(x, axis, 2);
    Tensor xj_shifted = sga_relative_max(shifted, spec);
    CHECK(bits_equal(xj_shifted, roll3d(xj, axis, 2)));
  }
}

TEST_CASE("mrconv trivial cases") {
  GraphSpec spec{2, {4, 4, 4}};
  Rng rng(79);

  // spatially constant input: all rolls equal x, X_j == 0
  Tensor c = Tensor::constant({1, 2, 4, 4, 4}, 1.25);
  Tensor xj = sga_relative_max(c, spec);
  for (Index i = 0; i < xj.size(); ++i) CHECK(xj.array()(i) == 0.0);

  // K >= all dims: only the m=0 self term survives
  GraphSpec wide{5, {4, 4, 4}};
  Tensor x = random_uniform({1, 2, 4, 4, 4}, rng, -1, 1);
  Tensor xj2 = sga_relative_max(x, wide);
  for (Index i = 0; i < xj2.size(); ++i) CHECK(xj2.array()(i) == 0.0);

  Tensor w = random_uniform({2, 4, 1, 1, 1}, rng, -1, 1);
  Tensor b = random_uniform({2}, rng, -1, 1);
  Tensor got = mrconv_sga(x, wide, w, &b);
  Tensor want = conv3d(concat(x, Tensor::zeros(x.shape()), 1), w, &b);
  CHECK(bits_equal(got, want));

  GraphSpec bad{0, {4, 4, 4}};
  CHECK_THROWS_AS(sga_relative_max(x, bad), std::invalid_argument);
}

TEST_CASE("grapher and ffn residual guarantees") {
  Rng rng(80);
  const Index c = 3;
  GraphSpec spec{2, {4, 4, 4}};
  Tensor x = random_uniform({1, c, 4, 4, 4}, rng, -1, 1);

  SGABlockParams p = make_sga_block_params(c, rng);
  p.grapher.w_out = Tensor::zeros(p.grapher.w_out.shape());
  p.grapher.b_out = Tensor::zeros(p.grapher.b_out.shape());
  Tensor y = grapher(x, p.grapher, spec);
  CHECK(bits_equal(y, x));

  p.ffn.w2 = Tensor::zeros(p.ffn.w2.shape());
  p.ffn.b2 = Tensor::zeros(p.ffn.b2.shape());
  CHECK(bits_equal(ffn(x, p.ffn), x));

  // both zeroed: the whole block is the identity
  CHECK(bits_equal(sga_block(x, spec, p), x));

  // shape preservation with live weights
  SGABlockParams q = make_sga_block_params(c, rng);
  CHECK(sga_block(x, spec, q).shape() == x.shape());
}

TEST_CASE("finite-difference suite: sga") {
  for (const GradCheckResult& r : run_gradcheck("sga", 987)) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
