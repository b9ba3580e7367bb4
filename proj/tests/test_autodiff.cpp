#include <doctest.h>

#include "voxreg/gradcheck.hpp"
#include "voxreg/ops.hpp"
#include "voxreg/rng.hpp"

using namespace voxreg;

TEST_CASE("backward of sum gives ones") {
  Rng rng(11);
  Tensor x = random_uniform({3, 4}, rng, -1, 1);
  Tape tape;
  tape.watch(x);
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(x);
  }
  GradientMap grads = tape.backward(loss);
  const Tensor& g = grads.at(x);
  for (Index i = 0; i < g.size(); ++i) CHECK(g.array()(i) == 1.0);
}

TEST_CASE("backward of sum of squares gives 2x") {
  Rng rng(12);
  Tensor x = random_uniform({2, 5}, rng, -1, 1);
  Tape tape;
  tape.watch(x);
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(mul(x, x));
  }
  GradientMap grads = tape.backward(loss);
  const Tensor& g = grads.at(x);
  for (Index i = 0; i < g.size(); ++i) {
    CHECK(g.array()(i) == doctest::Approx(2.0 * x.array()(i)).epsilon(1e-15));
  }
}

TEST_CASE("gradient accumulation is linear over losses") {
  Rng rng(13);
  Tensor x = random_uniform({4, 4}, rng, -1, 1);

  auto grad_of = [&](int which) {
    Tensor p = x;
    Tape tape;
    tape.watch(p);
    Tensor loss;
    {
      TapeScope scope(tape);
      Tensor l1 = sum_all(mul(p, p));
      Tensor l2 = sum_all(gelu(p));
      loss = which == 0 ? l1 : which == 1 ? l2 : add(l1, l2);
    }
    return tape.backward(loss).at(p);
  };

  Tensor g1 = grad_of(0);
  Tensor g2 = grad_of(1);
  Tensor g12 = grad_of(2);
  for (Index i = 0; i < x.size(); ++i) {
    CHECK(g12.array()(i) ==
          doctest::Approx(g1.array()(i) + g2.array()(i)).epsilon(1e-14));
  }
}

TEST_CASE("backward rejects non-scalar loss and double use") {
  Rng rng(14);
  Tensor x = random_uniform({3}, rng, -1, 1);
  Tape tape;
  tape.watch(x);
  Tensor y;
  {
    TapeScope scope(tape);
    y = mul(x, x);
  }
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tensor s;
  {
    // tape is still usable until a successful backward
    TapeScope scope(tape);
    s = sum_all(y);
  }
  GradientMap grads = tape.backward(s);
  CHECK(grads.contains(x));
  CHECK_THROWS_AS(tape.backward(s), std::runtime_error);
}

TEST_CASE("untracked tensors never receive gradients") {
  Rng rng(15);
  Tensor x = random_uniform({3}, rng, -1, 1);
  Tensor c = random_uniform({3}, rng, -1, 1);  // constant
  Tape tape;
  tape.watch(x);
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(mul(x, c));
  }
  GradientMap grads = tape.backward(loss);
  CHECK(grads.contains(x));
  CHECK(!c.requires_grad);
  CHECK(c.node == -1);
}

TEST_CASE("ops are deterministic across repeat evaluation") {
  Rng rng(16);
  Tensor x = random_uniform({1, 2, 4, 4, 4}, rng, -1, 1);
  Tensor w = random_uniform({2, 2, 3, 3, 3}, rng, -1, 1);
  Conv3dOpts opts;
  opts.padding = 1;
  Tensor a = conv3d(x, w, nullptr, opts);
  Tensor b = conv3d(x, w, nullptr, opts);
  for (Index i = 0; i < a.size(); ++i) CHECK(a.array()(i) == b.array()(i));
}

TEST_CASE("finite-difference suite: tensor ops") {
  for (const GradCheckResult& r : run_gradcheck("tensor", 321)) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("finite-difference suite: losses") {
  for (const GradCheckResult& r : run_gradcheck("losses", 654)) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
  }
}
