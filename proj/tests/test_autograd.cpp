#include <functional>
#include <memory>

#include "doctest.h"
#include "oracles.hpp"
#include "rcn/tape.hpp"

using namespace rcn;

namespace {

// Checks d(loss)/d(param) against central differences for every coordinate.
// rebuild() must recompute the scalar loss from the current tensor contents.
void check_grad(Tensor<double>& param, const Tensor<double>& analytic,
                const std::function<double()>& rebuild, double tol = 1e-5,
                double step = 1e-5) {
  REQUIRE(analytic.shape() == param.shape());
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double fd = oracle::central_diff(rebuild, param[i], step);
    CHECK_MESSAGE(oracle::close_rel(analytic[i], fd, tol),
                  "coord ", i, ": analytic ", analytic[i], " vs fd ", fd);
  }
}

}  // namespace

TEST_CASE("backward of sum(relu(x)) is the indicator of positive entries") {
  Tensor<double> x(Shape5{1, 1, 1, 1, 4});
  x[0] = -1.5; x[1] = 2.0; x[2] = 0.0; x[3] = 0.75;
  Tape<double> tape;
  Var xv = tape.leaf(x, true);
  Var loss = tape.sum_all(tape.relu(xv));
  tape.backward(loss);
  const Tensor<double>& g = tape.grad(xv);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 1.0);
}

TEST_CASE("backward of c*theta is c") {
  Tensor<double> theta(Shape5{}, 3.0);
  Tape<double> tape;
  Var tv = tape.leaf(theta, true);
  Var loss = tape.scale(tv, -2.5);
  tape.backward(loss);
  CHECK(tape.grad(tv)[0] == doctest::Approx(-2.5));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>(Shape5{1, 2, 1, 1, 1}, 1.0), true);
  Var y = tape.relu(x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("backward may run only once per tape") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>(Shape5{}, 2.0), true);
  Var loss = tape.scale(x, 1.0);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("gradients are deterministic across repeated runs") {
  Rng rng(31);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 3, 4, 4});
  Tensor<double> w = oracle::rand_tensor<double>(rng, Shape5{3, 2, 1, 3, 3});
  auto run = [&]() {
    Tape<double> tape;
    Var xv = tape.leaf(x, true);
    Var wv = tape.leaf(w, true);
    Var loss = tape.sum_all(tape.relu(tape.conv_spatial2d(xv, wv, 1, 1)));
    tape.backward(loss);
    return std::pair<Tensor<double>, Tensor<double>>(tape.grad(xv),
                                                     tape.grad(wv));
  };
  auto [gx1, gw1] = run();
  auto [gx2, gw2] = run();
  CHECK(oracle::bit_equal(gx1, gx2));
  CHECK(oracle::bit_equal(gw1, gw2));
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(41);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{2, 2, 3, 4, 4});
  Tensor<double> w = oracle::rand_tensor<double>(rng, Shape5{3, 2, 2, 3, 3});
  const ConvGeom g{2, 3, 3, 1, 2, 1, 1};
  auto forward = [&]() {
    Tape<double> tape;
    Var xv = tape.leaf(x, true);
    Var wv = tape.leaf(w, true);
    // squared ReLU makes the loss curved in every input
    Var y = tape.conv3d(xv, wv, g);
    Var loss = tape.sum_all(tape.relu(y));
    return std::tuple<Tape<double>, Var, Var, Var>(std::move(tape), xv, wv,
                                                   loss);
  };
  auto [tape, xv, wv, loss] = forward();
  tape.backward(loss);
  Tensor<double> gx = tape.grad(xv);
  Tensor<double> gw = tape.grad(wv);
  auto eval = [&]() {
    Tape<double> t2;
    Var a = t2.leaf(x, false);
    Var b = t2.leaf(w, false);
    return t2.value(t2.sum_all(t2.relu(t2.conv3d(a, b, g))))[0];
  };
  check_grad(x, gx, eval);
  check_grad(w, gw, eval);
}

TEST_CASE("batchnorm train-mode gradients match finite differences") {
  Rng rng(43);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{3, 2, 2, 2, 2});
  Tensor<double> gamma = oracle::rand_tensor<double>(rng, Shape5{1, 2, 1, 1, 1});
  Tensor<double> beta = oracle::rand_tensor<double>(rng, Shape5{1, 2, 1, 1, 1});
  auto eval_mode = [&](BnMode mode) {
    return [&, mode]() {
      Tensor<double> rm(Shape5{1, 2, 1, 1, 1}, 0.1);
      Tensor<double> rv(Shape5{1, 2, 1, 1, 1}, 1.4);
      Tape<double> t;
      Var xv = t.leaf(x, false);
      Var gv = t.leaf(gamma, false);
      Var bv = t.leaf(beta, false);
      Var y = t.batchnorm(xv, gv, bv, rm, rv, 1e-5, 0.1, mode);
      return t.value(t.sum_all(t.relu(y)))[0];
    };
  };
  for (BnMode mode : {BnMode::kTrain, BnMode::kEval}) {
    Tensor<double> rm(Shape5{1, 2, 1, 1, 1}, 0.1);
    Tensor<double> rv(Shape5{1, 2, 1, 1, 1}, 1.4);
    Tape<double> tape;
    Var xv = tape.leaf(x, true);
    Var gv = tape.leaf(gamma, true);
    Var bv = tape.leaf(beta, true);
    Var y = tape.batchnorm(xv, gv, bv, rm, rv, 1e-5, 0.1, mode);
    Var loss = tape.sum_all(tape.relu(y));
    tape.backward(loss);
    check_grad(x, tape.grad(xv), eval_mode(mode), 2e-5);
    check_grad(gamma, tape.grad(gv), eval_mode(mode), 2e-5);
    check_grad(beta, tape.grad(bv), eval_mode(mode), 2e-5);
  }
}

TEST_CASE("pool / mean / loss gradients match finite differences") {
  Rng rng(47);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{2, 3, 2, 3, 3});
  const std::vector<int> labels{1, 2};
  auto eval = [&]() {
    Tape<double> t;
    Var xv = t.leaf(x, false);
    Var pooled = t.spatial_avg_pool(xv);
    Var video = t.temporal_mean(pooled);
    return t.value(t.cross_entropy(video, labels))[0];
  };
  Tape<double> tape;
  Var xv = tape.leaf(x, true);
  Var loss =
      tape.cross_entropy(tape.temporal_mean(tape.spatial_avg_pool(xv)), labels);
  tape.backward(loss);
  check_grad(x, tape.grad(xv), eval);
}

TEST_CASE("bce gradients match finite differences") {
  Rng rng(53);
  Tensor<double> z = oracle::rand_tensor<double>(rng, Shape5{2, 3, 4, 1, 1});
  Tensor<double> mask(z.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto eval = [&]() {
    Tape<double> t;
    Var zv = t.leaf(z, false);
    return t.value(t.bce_multilabel(zv, mask))[0];
  };
  Tape<double> tape;
  Var zv = tape.leaf(z, true);
  tape.backward(tape.bce_multilabel(zv, mask));
  check_grad(z, tape.grad(zv), eval);
}

TEST_CASE("rcu_scan gradients match finite differences through time") {
  Rng rng(59);
  Tensor<double> s = oracle::rand_tensor<double>(rng, Shape5{2, 3, 4, 2, 2});
  Tensor<double> whh = oracle::rand_tensor<double>(rng, Shape5{3, 3, 1, 1, 1}, 0.5);
  Tensor<double> h0 = oracle::rand_tensor<double>(rng, Shape5{2, 3, 1, 2, 2});
  auto eval = [&]() {
    Tape<double> t;
    Var sv = t.leaf(s, false);
    Var wv = t.leaf(whh, false);
    Var hv = t.leaf(h0, false);
    return t.value(t.sum_all(t.relu(t.rcu_scan(sv, wv, hv))))[0];
  };
  Tape<double> tape;
  Var sv = tape.leaf(s, true);
  Var wv = tape.leaf(whh, true);
  Var hv = tape.leaf(h0, true);
  Var loss = tape.sum_all(tape.relu(tape.rcu_scan(sv, wv, hv)));
  tape.backward(loss);
  check_grad(s, tape.grad(sv), eval);
  check_grad(whh, tape.grad(wv), eval);
  check_grad(h0, tape.grad(hv), eval);
}

TEST_CASE("composite random graph gradient check") {
  // conv -> bn -> relu -> pointwise -> pool -> mean -> cross entropy,
  // differentiated w.r.t. roughly ten parameters split over two kernels
  Rng rng(61);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{2, 2, 3, 4, 4});
  Tensor<double> w1 = oracle::rand_tensor<double>(rng, Shape5{2, 2, 1, 3, 3});
  Tensor<double> w2 = oracle::rand_tensor<double>(rng, Shape5{3, 2, 1, 1, 1});
  Tensor<double> gamma(Shape5{1, 2, 1, 1, 1}, 1.0);
  Tensor<double> beta(Shape5{1, 2, 1, 1, 1}, 0.0);
  const std::vector<int> labels{0, 2};
  auto build = [&](bool want_grad) {
    auto tape = std::make_shared<Tape<double>>();
    Tensor<double> rm(Shape5{1, 2, 1, 1, 1}, 0.0);
    Tensor<double> rv(Shape5{1, 2, 1, 1, 1}, 1.0);
    Var xv = tape->leaf(x, false);
    Var w1v = tape->leaf(w1, want_grad);
    Var w2v = tape->leaf(w2, want_grad);
    Var gv = tape->leaf(gamma, want_grad);
    Var bv = tape->leaf(beta, want_grad);
    Var y = tape->conv_spatial2d(xv, w1v, 1, 1);
    y = tape->batchnorm(y, gv, bv, rm, rv, 1e-5, 0.1, BnMode::kTrain);
    y = tape->relu(y);
    y = tape->conv_pointwise(y, w2v);
    Var video = tape->temporal_mean(tape->spatial_avg_pool(y));
    Var loss = tape->cross_entropy(video, labels);
    return std::tuple<std::shared_ptr<Tape<double>>, Var, Var, Var, Var, Var>(
        tape, w1v, w2v, gv, bv, loss);
  };
  auto [tape, w1v, w2v, gv, bv, loss] = build(true);
  tape->backward(loss);
  auto eval = [&]() {
    auto [t2, a, b, c, d, l] = build(false);
    return t2->value(l)[0];
  };
  check_grad(w1, tape->grad(w1v), eval);
  check_grad(w2, tape->grad(w2v), eval);
  check_grad(gamma, tape->grad(gv), eval);
  check_grad(beta, tape->grad(bv), eval);
}

TEST_CASE("cross entropy of uniform scores is ln C") {
  const int C = 7;
  Tape<double> tape;
  Var scores = tape.leaf(Tensor<double>(Shape5{1, C, 1, 1, 1}, 0.42), false);
  Var loss = tape.cross_entropy(scores, {3});
  CHECK(tape.value(loss)[0] == doctest::Approx(std::log(double(C))).epsilon(1e-12));
}

TEST_CASE("cross entropy closed-form two-class example") {
  Tape<double> tape;
  Tensor<double> s(Shape5{1, 2, 1, 1, 1});
  s[0] = 2.0;
  s[1] = 0.0;
  Var loss = tape.cross_entropy(tape.leaf(s, false), {0});
  CHECK(tape.value(loss)[0] ==
        doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tape<double> tape;
  Var s = tape.leaf(Tensor<double>(Shape5{1, 3, 1, 1, 1}), false);
  CHECK_THROWS_AS(tape.cross_entropy(s, {3}), std::invalid_argument);
}

TEST_CASE("bce approaches zero for saturated correct logits") {
  Tape<double> tape;
  Tensor<double> z(Shape5{1, 2, 3, 1, 1});
  Tensor<double> mask(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    mask[i] = (i % 2 == 0) ? 1.0 : 0.0;
    z[i] = mask[i] > 0.5 ? 40.0 : -40.0;
  }
  Var loss = tape.bce_multilabel(tape.leaf(z, false), mask);
  CHECK(tape.value(loss)[0] < 1e-12);
}
