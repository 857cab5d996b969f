#include <memory>

#include "doctest.h"
#include "oracles.hpp"
#include "rcn/layers.hpp"

using namespace rcn;

TEST_CASE("rcu_step scalar recursion h_t = 0.5 h + 2 x") {
  RcuParams<double> p = make_rcu<double>(1, 1, 1, 1);
  p.pad_s = 0;
  p.w_xh.fill(2.0);
  p.w_hh.fill(0.5);
  Tensor<double> h(Shape5{1, 1, 1, 1, 1});  // h0 = 0
  const double xs[3] = {1.0, 2.0, 3.0};
  const double expect[3] = {2.0, 5.0, 8.5};
  for (int t = 0; t < 3; ++t) {
    Tensor<double> x(Shape5{1, 1, 1, 1, 1}, xs[t]);
    h = rcu_step(x, h, p);
    CHECK(h[0] == doctest::Approx(expect[t]).epsilon(1e-15));
  }
}

TEST_CASE("rcu_step rejects mismatched hidden extents") {
  RcuParams<double> p = make_rcu<double>(1, 1, 3, 1);
  Tensor<double> x(Shape5{1, 1, 1, 4, 4});
  Tensor<double> h(Shape5{1, 1, 1, 3, 3});
  CHECK_THROWS_AS(rcu_step(x, h, p), std::invalid_argument);
}

TEST_CASE("rcu with zero hidden kernel is a per-frame 2D conv") {
  Rng rng(21);
  RcuParams<double> p = make_rcu<double>(2, 3, 3, 1);
  p.w_xh = oracle::rand_tensor<double>(rng, p.w_xh.shape());
  // w_hh stays zero
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 5, 6, 6});
  Tensor<double> h0 = zero_hidden(p, x.shape());
  Tensor<double> h = rcu_forward(x, p, h0);
  Tensor<double> ref;
  conv3d_forward(x, p.w_xh, ConvGeom{1, 3, 3, 1, 1, 0, 1}, ref);
  CHECK(oracle::bit_equal(h, ref));
}

TEST_CASE("rcu with identity hidden kernel is a running sum of 2D responses") {
  Rng rng(22);
  RcuParams<double> p = make_rcu<double>(2, 3, 3, 1);
  p.w_xh = oracle::rand_tensor<double>(rng, p.w_xh.shape());
  for (int i = 0; i < 3; ++i) p.w_hh.at(i, i, 0, 0, 0) = 1.0;
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 4, 5, 5});
  Tensor<double> h = rcu_forward(x, p, zero_hidden(p, x.shape()));
  Tensor<double> s;
  conv3d_forward(x, p.w_xh, ConvGeom{1, 3, 3, 1, 1, 0, 1}, s);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int v = 0; v < 5; ++v) {
        double run = 0;
        for (int t = 0; t < 4; ++t) {
          run += s.at(0, c, t, y, v);
          CHECK(h.at(0, c, t, y, v) == doctest::Approx(run).epsilon(1e-12));
        }
      }
}

TEST_CASE("rcu_forward equals iterating rcu_step") {
  Rng rng(23);
  RcuParams<double> p = make_rcu<double>(3, 4, 3, 2);
  p.w_xh = oracle::rand_tensor<double>(rng, p.w_xh.shape());
  p.w_hh = oracle::rand_tensor<double>(rng, p.w_hh.shape(), 0.4);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{2, 3, 6, 9, 9});
  Tensor<double> whole = rcu_forward(x, p, zero_hidden(p, x.shape()));

  Tensor<double> h = zero_hidden(p, x.shape());
  for (int t = 0; t < 6; ++t) {
    Tensor<double> frame(Shape5{2, 3, 1, 9, 9});
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 9; ++y)
          for (int v = 0; v < 9; ++v)
            frame.at(b, c, 0, y, v) = x.at(b, c, t, y, v);
    h = rcu_step(frame, h, p);
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 5; ++y)
          for (int v = 0; v < 5; ++v)
            CHECK(h.at(b, c, 0, y, v) == whole.at(b, c, t, y, v));
  }
}

TEST_CASE("rcu_forward preserves T for every T in 1..17") {
  RcuParams<double> p = make_rcu<double>(1, 2, 3, 1);
  for (int t : {1, 2, 3, 5, 8, 13, 17}) {
    Tensor<double> x(Shape5{1, 1, t, 4, 4}, 1.0);
    Tensor<double> h = rcu_forward(x, p, zero_hidden(p, x.shape()));
    CHECK(h.shape().t == t);
  }
}

TEST_CASE("rcu causality: futures do not touch the past (bit-exact)") {
  Rng rng(29);
  RcuParams<double> p = make_rcu<double>(2, 3, 3, 1);
  p.w_xh = oracle::rand_tensor<double>(rng, p.w_xh.shape());
  p.w_hh = oracle::rand_tensor<double>(rng, p.w_hh.shape());
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 8, 5, 5});
  Tensor<double> base = rcu_forward(x, p, zero_hidden(p, x.shape()));
  for (int trial = 0; trial < 20; ++trial) {
    const int cut = 1 + static_cast<int>(rng.uniform_int(7));  // perturb > cut-1
    Tensor<double> xp = x;
    for (int t = cut; t < 8; ++t)
      for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 5; ++y)
          for (int v = 0; v < 5; ++v)
            xp.at(0, c, t, y, v) += rng.normal();
    Tensor<double> out = rcu_forward(xp, p, zero_hidden(p, xp.shape()));
    for (int t = 0; t < cut; ++t)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 5; ++y)
          for (int v = 0; v < 5; ++v)
            CHECK(out.at(0, c, t, y, v) == base.at(0, c, t, y, v));
  }
}

TEST_CASE("rcu_forward is linear in the input for h0 = 0") {
  Rng rng(31);
  RcuParams<double> p = make_rcu<double>(2, 2, 3, 1);
  p.w_xh = oracle::rand_tensor<double>(rng, p.w_xh.shape());
  p.w_hh = oracle::rand_tensor<double>(rng, p.w_hh.shape(), 0.5);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 5, 4, 4});
  Tensor<double> y = oracle::rand_tensor<double>(rng, Shape5{1, 2, 5, 4, 4});
  const double a = 1.7, b = -0.6;
  Tensor<double> mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
  Tensor<double> h0 = zero_hidden(p, x.shape());
  Tensor<double> hx = rcu_forward(x, p, h0);
  Tensor<double> hy = rcu_forward(y, p, h0);
  Tensor<double> hm = rcu_forward(mix, p, h0);
  for (std::size_t i = 0; i < hm.numel(); ++i)
    CHECK(hm[i] == doctest::Approx(a * hx[i] + b * hy[i]).epsilon(1e-12));
}

TEST_CASE("gradient of scalar RCU loss w.r.t. w_hh matches finite differences") {
  // 3-frame scalar RCU
  Tensor<double> x(Shape5{1, 1, 3, 1, 1});
  x.at(0, 0, 0, 0, 0) = 0.7;
  x.at(0, 0, 1, 0, 0) = -0.3;
  x.at(0, 0, 2, 0, 0) = 1.1;
  Tensor<double> wxh(Shape5{1, 1, 1, 1, 1}, 1.3);
  Tensor<double> whh(Shape5{1, 1, 1, 1, 1}, 0.6);
  auto eval = [&]() {
    Tape<double> t;
    Var h = rcu_forward(t, t.leaf(x, false), t.leaf(wxh, false),
                        t.leaf(whh, false),
                        t.leaf(Tensor<double>(Shape5{1, 1, 1, 1, 1}), false), 1,
                        0);
    return t.value(t.sum_all(t.relu(h)))[0];
  };
  Tape<double> tape;
  Var wv = tape.leaf(whh, true);
  Var h = rcu_forward(tape, tape.leaf(x, false), tape.leaf(wxh, false), wv,
                      tape.leaf(Tensor<double>(Shape5{1, 1, 1, 1, 1}), false),
                      1, 0);
  tape.backward(tape.sum_all(tape.relu(h)));
  const double analytic = tape.grad(wv)[0];
  const double fd = oracle::central_diff(eval, whh[0], 1e-6);
  CHECK(std::abs(analytic - fd) <=
        1e-6 * std::max({1.0, std::abs(analytic), std::abs(fd)}));
}

TEST_CASE("i3d_conv all-ones 3x3x3 on all-ones input, center 27") {
  TemporalConv3dParams<double> p = make_i3d_conv<double>(1, 1, 3, 3, 1, 1);
  p.w.fill(1.0);
  Tensor<double> x(Shape5{1, 1, 3, 3, 3}, 1.0);
  Tensor<double> y = i3d_conv(x, p);
  CHECK(y.shape() == Shape5{1, 1, 3, 3, 3});
  CHECK(y.at(0, 0, 1, 1, 1) == doctest::Approx(27.0));
}

TEST_CASE("i3d_conv with n=1 reduces to the spatial conv") {
  Rng rng(37);
  TemporalConv3dParams<double> p = make_i3d_conv<double>(2, 3, 1, 3, 1, 1);
  p.w = oracle::rand_tensor<double>(rng, p.w.shape());
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 4, 5, 5});
  Tensor<double> ref;
  conv3d_forward(x, p.w, ConvGeom{1, 3, 3, 1, 1, 0, 1}, ref);
  CHECK(oracle::bit_equal(i3d_conv(x, p), ref));
}

TEST_CASE("i3d_conv is anti-causal: a future frame reaches the present") {
  Rng rng(38);
  TemporalConv3dParams<double> p = make_i3d_conv<double>(1, 1, 3, 3, 1, 1);
  p.w = oracle::rand_tensor<double>(rng, p.w.shape());
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 1, 6, 4, 4});
  Tensor<double> base = i3d_conv(x, p);
  Tensor<double> xp = x;
  xp.at(0, 0, 3, 2, 2) += 1.0;  // future frame t=3
  Tensor<double> out = i3d_conv(xp, p);
  bool changed_at_2 = false;
  for (int y = 0; y < 4; ++y)
    for (int v = 0; v < 4; ++v)
      if (out.at(0, 0, 2, y, v) != base.at(0, 0, 2, y, v)) changed_at_2 = true;
  CHECK(changed_at_2);
}

TEST_CASE("middle-plane matching keeps the pair within one kernel slice") {
  const int cin = 64, cout = 64, n = 3, d = 3;
  const int m = matched_middle_planes(cin, cout, n, d);
  const long long pair_params = 1LL * m * cin * d * d + 1LL * cout * m * n;
  const long long full = 1LL * n * d * d * cin * cout;
  const long long slice = 1LL * d * d * cin + 1LL * n * cout;
  CHECK(pair_params <= full);
  CHECK(full - pair_params < slice);
}

TEST_CASE("factorized_conv: identity spatial + averaging temporal smooths") {
  // bn_mid bypassed by unit statistics (gamma=1, beta=0, eval stats 0/1);
  // middle planes forced to 2 so the identity construction fits
  FactorizedConvParams<double> p;
  p.w_spatial = Tensor<double>(Shape5{2, 2, 1, 1, 1});
  p.w_temporal = Tensor<double>(Shape5{2, 2, 3, 1, 1});
  p.bn_mid = BatchNorm<double>(2);
  p.pad_t = 1;
  p.w_spatial.fill(0.0);
  for (int i = 0; i < 2; ++i) p.w_spatial.at(i, i, 0, 0, 0) = 1.0;
  p.w_temporal.fill(0.0);
  for (int o = 0; o < 2; ++o)
    for (int dt = 0; dt < 3; ++dt) p.w_temporal.at(o, o, dt, 0, 0) = 1.0 / 3;
  p.bn_mid.eps = 0.0;
  Tensor<double> x(Shape5{1, 2, 4, 1, 1});
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 2; ++c) x.at(0, c, t, 0, 0) = t + 1 + c;
  Tensor<double> y = factorized_conv(x, p, BnMode::kEval);
  // interior frame: mean of the three neighbours, relu'd positives pass
  CHECK(y.at(0, 0, 1, 0, 0) == doctest::Approx((1.0 + 2.0 + 3.0) / 3));
  CHECK(y.at(0, 0, 2, 0, 0) == doctest::Approx((2.0 + 3.0 + 4.0) / 3));
}

TEST_CASE("residual block with zero residual branch is relu(x)") {
  // identity skip requires matching channels and stride 1; zero conv weights
  // zero out the residual branch (BN of 0 is beta = 0)
  for (Variant v : {Variant::kRcn, Variant::kI3d, Variant::k2Plus1d}) {
    Block<double> blk = make_basic_block<double>(v, 4, 4, 3, 3, 1, 1);
    Rng rng(71);
    Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 4, 4, 5, 5});
    Tensor<double> y = block_forward(blk, x, BnMode::kEval);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y[i] == doctest::Approx(std::max(x[i], 0.0)));
  }
}

TEST_CASE("residual block output shapes per variant") {
  Tensor<double> x(Shape5{1, 8, 16, 12, 12}, 0.5);
  Block<double> rcn_blk = make_basic_block<double>(Variant::kRcn, 8, 16, 3, 3, 2, 2);
  Block<double> i3d_blk = make_basic_block<double>(Variant::kI3d, 8, 16, 3, 3, 2, 2);
  CHECK(block_forward(rcn_blk, x, BnMode::kEval).shape() ==
        Shape5{1, 16, 16, 6, 6});
  CHECK(block_forward(i3d_blk, x, BnMode::kEval).shape() ==
        Shape5{1, 16, 8, 6, 6});
  CHECK(block_out_shape(rcn_blk, x.shape()) == Shape5{1, 16, 16, 6, 6});
  CHECK(block_out_shape(i3d_blk, x.shape()) == Shape5{1, 16, 8, 6, 6});
}

TEST_CASE("gradients flow through both branches of a tiny block") {
  // hand-built two-path graph: conv + skip projection, fd-checked
  Rng rng(73);
  Tensor<double> x = oracle::rand_tensor<double>(rng, Shape5{1, 2, 3, 4, 4});
  Tensor<double> wa = oracle::rand_tensor<double>(rng, Shape5{3, 2, 1, 3, 3}, 0.5);
  Tensor<double> wp = oracle::rand_tensor<double>(rng, Shape5{3, 2, 1, 1, 1}, 0.5);
  struct Built {
    Var loss, wa, wp;
  };
  auto graph = [&](Tape<double>& t, bool grad) {
    Var xv = t.leaf(x, false);
    Var wav = t.leaf(wa, grad);
    Var wpv = t.leaf(wp, grad);
    Var a = t.relu(t.conv_spatial2d(xv, wav, 1, 1));
    Var skip = t.conv_pointwise(xv, wpv);
    return Built{t.sum_all(t.relu(t.add(a, skip))), wav, wpv};
  };
  Tape<double> tape;
  Built b = graph(tape, true);
  tape.backward(b.loss);
  Tensor<double> ga = tape.grad(b.wa);
  Tensor<double> gp = tape.grad(b.wp);
  auto eval = [&]() {
    Tape<double> t;
    return t.value(graph(t, false).loss)[0];
  };
  for (std::size_t i = 0; i < wa.numel(); ++i) {
    const double fd = oracle::central_diff(eval, wa[i], 1e-5);
    CHECK(oracle::close_rel(ga[i], fd, 1e-5));
  }
  for (std::size_t i = 0; i < wp.numel(); ++i) {
    const double fd = oracle::central_diff(eval, wp[i], 1e-5);
    CHECK(oracle::close_rel(gp[i], fd, 1e-5));
  }
}

TEST_CASE("unbounded horizon: RCU reaches frame 1 at any T, conv stacks do not") {
  const int T = 12;
  // RCU with identity w_hh is a running sum: d h_T / d x_1 = 1 for any T,
  // and x_1 feeds every one of the T hidden states once.
  {
    RcuParams<double> p = make_rcu<double>(1, 1, 1, 1);
    p.pad_s = 0;
    p.w_xh.fill(1.0);
    p.w_hh.at(0, 0, 0, 0, 0) = 1.0;
    Tensor<double> x(Shape5{1, 1, T, 1, 1}, 0.1);
    Tape<double> t2;
    Var x2 = t2.leaf(x, true);
    Var h2 = rcu_forward(t2, x2, t2.leaf(p.w_xh, false), t2.leaf(p.w_hh, false),
                         t2.leaf(Tensor<double>(Shape5{1, 1, 1, 1, 1}), false),
                         1, 0);
    t2.backward(t2.sum_all(h2));
    CHECK(t2.grad(x2).at(0, 0, 0, 0, 0) == doctest::Approx(double(T)));
    CHECK(t2.grad(x2).at(0, 0, T - 1, 0, 0) == doctest::Approx(1.0));
  }
  // stack of L temporal convs of extent 3: gradient of y_T w.r.t. x_1
  // vanishes once T > L + 1
  {
    const int L = 3;
    Tensor<double> x(Shape5{1, 1, T, 1, 1}, 0.3);
    Tape<double> tape;
    Var xv = tape.leaf(x, true);
    Var y = xv;
    Tensor<double> k(Shape5{1, 1, 3, 1, 1}, 0.5);
    for (int l = 0; l < L; ++l)
      y = tape.conv_temporal1d(xv = y, tape.leaf(k, false), 1, 1);
    // pick out y_T by multiplying with a one-hot "kernel" is unavailable;
    // read the dependency from the full Jacobian row via one backward pass
    // on sum, then verify the zero pattern frame by frame with perturbations
    Tensor<double> base = tape.value(y);
    for (int probe = 0; probe < 2; ++probe) {
      Tensor<double> xp = x;
      xp.at(0, 0, 0, 0, 0) += 0.7 + probe;
      Tensor<double> out;
      Tensor<double> cur = xp;
      for (int l = 0; l < L; ++l) {
        conv3d_forward(cur, k, ConvGeom{3, 1, 1, 1, 1, 1, 0}, out);
        cur = out;
      }
      // frames beyond L are unreachable from x_1
      for (int t = L + 1; t < T; ++t)
        CHECK(cur.at(0, 0, t, 0, 0) == base.at(0, 0, t, 0, 0));
      // frame L is reachable
      CHECK(cur.at(0, 0, L, 0, 0) != base.at(0, 0, L, 0, 0));
    }
  }
}
