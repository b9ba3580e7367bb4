#include <doctest.h>

#include <cmath>

#include "voxreg/gradcheck.hpp"
#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"
#include "voxreg/ssaformer.hpp"

using namespace voxreg;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.array()(i) != b.array()(i)) return false;
  }
  return true;
}

// Literal per-equation evaluation of the separable-attention pipeline,
// straight loops over tokens. Matches the implementation's row-vector
// convention y = x * W.
Tensor ssa_transcription_oracle(const Tensor& h, const SSAParams& p) {
  const Index k = h.dim(0), d = h.dim(1);
  const Index d_out = p.w_o.dim(1);
  // latent scalar per token, scaled
  std::vector<double> score(static_cast<size_t>(k));
  for (Index i = 0; i < k; ++i) {
    double acc = 0;
    for (Index j = 0; j < d; ++j) acc += p.w_i.array()(j) * h.at({i, j});
    score[static_cast<size_t>(i)] = acc / std::sqrt(static_cast<double>(d));
  }
  // softmax over the token axis
  double m = score[0];
  for (double s : score) m = std::max(m, s);
  double denom = 0;
  std::vector<double> cs(static_cast<size_t>(k));
  for (Index i = 0; i < k; ++i) {
    cs[static_cast<size_t>(i)] = std::exp(score[static_cast<size_t>(i)] - m);
    denom += cs[static_cast<size_t>(i)];
  }
  for (double& c : cs) c /= denom;
  // context vector: weighted sum of key projections
  std::vector<double> cv(static_cast<size_t>(d), 0.0);
  for (Index i = 0; i < k; ++i) {
    for (Index j2 = 0; j2 < d; ++j2) {
      double key = 0;
      for (Index j = 0; j < d; ++j) key += h.at({i, j}) * p.w_k.at({j, j2});
      cv[static_cast<size_t>(j2)] += cs[static_cast<size_t>(i)] * key;
    }
  }
  // broadcastted element-wise propagation, then the output projection
  Tensor out = Tensor::zeros({k, d_out});
  for (Index i = 0; i < k; ++i) {
    std::vector<double> prop(static_cast<size_t>(d));
    for (Index j2 = 0; j2 < d; ++j2) {
      double val = 0;
      for (Index j = 0; j < d; ++j) val += h.at({i, j}) * p.w_v.at({j, j2});
      prop[static_cast<size_t>(j2)] =
          cv[static_cast<size_t>(j2)] * std::max(0.0, val);
    }
    for (Index o = 0; o < d_out; ++o) {
      double acc = 0;
      for (Index j = 0; j < d; ++j) {
        acc += prop[static_cast<size_t>(j)] * p.w_o.at({j, o});
      }
      out.set({i, o}, acc);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("context_scores pinned cases") {
  Rng rng(31);
  SSAParams p = make_ssa_params(3, 3, rng);

  // single token: softmax of a singleton
  Tensor h1 = random_uniform({1, 3}, rng, -1, 1);
  Tensor cs1 = context_scores(h1, p);
  CHECK(cs1.size() == 1);
  CHECK(cs1.array()(0) == doctest::Approx(1.0).epsilon(1e-15));

  // identical tokens: uniform scores
  Tensor row = random_uniform({1, 3}, rng, -1, 1);
  Tensor same = concat(concat(row, row, 0), concat(row, row, 0), 0);
  Tensor cs = context_scores(same, p);
  for (Index i = 0; i < 4; ++i) {
    CHECK(cs.array()(i) == doctest::Approx(0.25).epsilon(1e-12));
  }

  // hand case: k=2, d=1, H=[[0],[1]], w_i=[1] -> softmax([0,1])
  SSAParams tiny;
  tiny.w_i = Tensor({1}, std::vector<double>{1});
  tiny.w_k = Tensor({1, 1}, std::vector<double>{1});
  tiny.w_v = Tensor({1, 1}, std::vector<double>{1});
  tiny.w_o = Tensor({1, 1}, std::vector<double>{1});
  Tensor h = Tensor({2, 1}, std::vector<double>{0, 1});
  Tensor got = context_scores(h, tiny);
  const double e = std::exp(1.0);
  CHECK(got.array()(0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
  CHECK(got.array()(1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));

  // probability vector on random input
  Tensor hr = random_uniform({6, 3}, rng, -2, 2);
  Tensor csr = context_scores(hr, p);
  double sum = 0;
  for (Index i = 0; i < csr.size(); ++i) {
    CHECK(csr.array()(i) >= 0.0);
    sum += csr.array()(i);
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("context_vector pinned cases") {
  Rng rng(32);
  SSAParams p = make_ssa_params(2, 2, rng);
  Tensor h = random_uniform({3, 2}, rng, -1, 1);

  // one-hot scores select one key projection
  Tensor onehot = Tensor({3}, std::vector<double>{0, 1, 0});
  Tensor cv = context_vector(h, onehot, p);
  Tensor keys = linear(h, p.w_k);
  for (Index j = 0; j < 2; ++j) {
    CHECK(cv.array()(j) == doctest::Approx(keys.at({1, j})).epsilon(1e-14));
  }

  // identity W_K with uniform scores gives the token mean
  SSAParams pid = p;
  pid.w_k = Tensor({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor uniform = Tensor::constant({3}, 1.0 / 3.0);
  Tensor mean = context_vector(h, uniform, pid);
  for (Index j = 0; j < 2; ++j) {
    const double want = (h.at({0, j}) + h.at({1, j}) + h.at({2, j})) / 3.0;
    CHECK(mean.array()(j) == doctest::Approx(want).epsilon(1e-14));
  }

  // explicit summation oracle
  Tensor cs = context_scores(h, p);
  Tensor got = context_vector(h, cs, p);
  for (Index j2 = 0; j2 < 2; ++j2) {
    double want = 0;
    for (Index i = 0; i < 3; ++i) {
      double key = 0;
      for (Index j = 0; j < 2; ++j) key += h.at({i, j}) * p.w_k.at({j, j2});
      want += cs.array()(i) * key;
    }
    CHECK(got.array()(j2) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("ssa trivial and transcription oracle") {
  Rng rng(33);
  SSAParams p = make_ssa_params(3, 3, rng);

  // zero value projection blanks the output
  SSAParams pz = p;
  pz.w_v = Tensor::zeros({3, 3});
  Tensor h = random_uniform({4, 3}, rng, -1, 1);
  Tensor out = ssa(h, pz);
  for (Index i = 0; i < out.size(); ++i) CHECK(out.array()(i) == 0.0);

  // k=1 closed form: c_s = [1]
  Tensor h1 = random_uniform({1, 3}, rng, -1, 1);
  Tensor got1 = ssa(h1, p);
  Tensor keys = linear(h1, p.w_k);
  Tensor vals = relu(linear(h1, p.w_v));
  Tensor prop = mul(vals, keys);
  Tensor want1 = linear(prop, p.w_o);
  for (Index i = 0; i < got1.size(); ++i) {
    CHECK(got1.array()(i) == doctest::Approx(want1.array()(i)).epsilon(1e-13));
  }

  // random case vs the straight-line equation transcription
  Tensor h4 = random_uniform({4, 3}, rng, -1, 1);
  Tensor got = ssa(h4, p);
  Tensor want = ssa_transcription_oracle(h4, p);
  for (Index i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got.array()(i) - want.array()(i)) < 1e-12);
  }
}

TEST_CASE("ssa is permutation-consistent") {
  Rng rng(34);
  SSAParams p = make_ssa_params(3, 2, rng);
  Tensor h = random_uniform({5, 3}, rng, -1, 1);
  Tensor base = ssa(h, p);

  // permute tokens, run, invert the permutation
  const std::vector<Index> perm{3, 0, 4, 1, 2};
  Tensor hp = Tensor::zeros({5, 3});
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 3; ++j) hp.set({i, j}, h.at({perm[static_cast<size_t>(i)], j}));
  }
  Tensor outp = ssa(hp, p);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 2; ++j) {
      CHECK(std::abs(outp.at({i, j}) -
                     base.at({perm[static_cast<size_t>(i)], j})) < 1e-12);
    }
  }
}

TEST_CASE("mha_reference pinned cases") {
  Rng rng(35);
  MHAParams p = make_mha_params(4, 4, rng);

  // k=1: softmax over one token is 1, so out = (value proj) * W_O
  Tensor h1 = random_uniform({1, 4}, rng, -1, 1);
  Tensor got1 = mha_reference(h1, 2, p);
  Tensor want1 = linear(linear(h1, p.w_v), p.w_o);
  for (Index i = 0; i < got1.size(); ++i) {
    CHECK(got1.array()(i) == doctest::Approx(want1.array()(i)).epsilon(1e-12));
  }

  // identical tokens: every row equals the single-token output
  Tensor row = random_uniform({1, 4}, rng, -1, 1);
  Tensor same = concat(concat(row, row, 0), row, 0);
  Tensor gots = mha_reference(same, 2, p);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) {
      CHECK(gots.at({i, j}) ==
            doctest::Approx(mha_reference(row, 2, p).at({0, j})).epsilon(1e-12));
    }
  }

  // k=3 single head vs explicit softmax(QK^T/sqrt(d))V oracle
  Tensor h3 = random_uniform({3, 4}, rng, -1, 1);
  Tensor got = mha_reference(h3, 1, p);
  Tensor q = linear(h3, p.w_q);
  Tensor key = linear(h3, p.w_k);
  Tensor val = linear(h3, p.w_v);
  Tensor want = Tensor::zeros({3, 4});
  for (Index i = 0; i < 3; ++i) {
    double scores[3];
    double m = -1e300;
    for (Index j = 0; j < 3; ++j) {
      double acc = 0;
      for (Index c = 0; c < 4; ++c) acc += q.at({i, c}) * key.at({j, c});
      scores[j] = acc / 2.0;  // sqrt(4)
      m = std::max(m, scores[j]);
    }
    double denom = 0;
    for (Index j = 0; j < 3; ++j) {
      scores[j] = std::exp(scores[j] - m);
      denom += scores[j];
    }
    for (Index j = 0; j < 3; ++j) scores[j] /= denom;
    for (Index c = 0; c < 4; ++c) {
      double ctx = 0;
      for (Index j = 0; j < 3; ++j) ctx += scores[j] * val.at({j, c});
      want.set({i, c}, ctx);
    }
  }
  Tensor want_o = linear(want, p.w_o);
  for (Index i = 0; i < got.size(); ++i) {
    CHECK(got.array()(i) == doctest::Approx(want_o.array()(i)).epsilon(1e-11));
  }

  CHECK_THROWS_AS(mha_reference(h3, 3, p), std::invalid_argument);
}

TEST_CASE("dcs linear path and shapes") {
  Rng rng(36);
  const Index c = 2;
  DCSParams p;
  p.dw_w = Tensor::zeros({c, 1, 3, 3, 3});
  for (Index ch = 0; ch < c; ++ch) p.dw_w.set({ch, 0, 1, 1, 1}, 1.0);
  p.dw_b = Tensor::zeros({c});
  p.channel_scale = Tensor::constant({c}, 1.0);
  p.pw_w = Tensor::zeros({c, c, 1, 1, 1});
  for (Index ch = 0; ch < c; ++ch) p.pw_w.set({ch, ch, 0, 0, 0}, 1.0);
  p.pw_b = Tensor::zeros({c});

  // identity kernels and unit scale: every linear stage passes through, so
  // the block reduces to its activation alone
  Tensor x = random_uniform({1, c, 3, 4, 3}, rng, -1, 1);
  Tensor got = dcs(x, p);
  Tensor want = gelu(x);
  CHECK(bits_equal(got, want));

  DCSParams live = make_dcs_params(c, rng);
  CHECK(dcs(x, live).shape() == x.shape());
}

TEST_CASE("ssaformer_block identity and shape") {
  Rng rng(37);
  const Index c = 3;
  SSAFormerParams p = make_ssaformer_params(c, rng);
  p.ssa.w_o = Tensor::zeros(p.ssa.w_o.shape());
  p.dcs.pw_w = Tensor::zeros(p.dcs.pw_w.shape());
  p.dcs.pw_b = Tensor::zeros(p.dcs.pw_b.shape());
  Tensor x = random_uniform({1, c, 2, 3, 4}, rng, -1, 1);
  CHECK(bits_equal(ssaformer_block(x, p), x));

  SSAFormerParams live = make_ssaformer_params(c, rng);
  CHECK(ssaformer_block(x, live).shape() == x.shape());
}

TEST_CASE("mixer flop counts scale as claimed") {
  for (Index d : {16, 64}) {
    for (Index k : {64, 256, 2048}) {
      MixerFlops s1 = count_mixer_flops(MixerKind::ssa, k, d);
      MixerFlops s2 = count_mixer_flops(MixerKind::ssa, 2 * k, d);
      CHECK(s2.total == 2 * s1.total);
      MixerFlops m1 = count_mixer_flops(MixerKind::mha, k, d);
      MixerFlops m2 = count_mixer_flops(MixerKind::mha, 2 * k, d);
      CHECK(m2.score_term == 4 * m1.score_term);
    }
  }

  // closed-form spot values, evaluated independently
  // ssa(k,d): k*(3d^2 + 3d); mha score term: k^2*d
  MixerFlops a = count_mixer_flops(MixerKind::ssa, 256, 64);
  CHECK(a.total == 256LL * (3 * 64 * 64 + 3 * 64));
  MixerFlops b = count_mixer_flops(MixerKind::ssa, 512, 64);
  CHECK(b.total == 512LL * (3 * 64 * 64 + 3 * 64));
  CHECK(count_mixer_flops(MixerKind::mha, 256, 64).score_term ==
        256LL * 256LL * 64LL);
  CHECK(count_mixer_flops(MixerKind::mha, 512, 64).score_term ==
        512LL * 512LL * 64LL);
}

TEST_CASE("finite-difference suite: ssa") {
  for (const GradCheckResult& r : run_gradcheck("ssa", 555)) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
