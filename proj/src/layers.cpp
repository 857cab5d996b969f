#include "rcn/layers.hpp"

#include <stdexcept>

namespace rcn {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kRcn: return "rcn";
    case Variant::kI3d: return "i3d";
    case Variant::k2Plus1d: return "2plus1d";
  }
  return "?";
}

Variant variant_from_name(const std::string& s) {
  if (s == "rcn") return Variant::kRcn;
  if (s == "i3d") return Variant::kI3d;
  if (s == "2plus1d") return Variant::k2Plus1d;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

int matched_middle_planes(int cin, int cout, int n, int d) {
  const long long num = 1LL * n * d * d * cin * cout;
  const long long den = 1LL * d * d * cin + 1LL * n * cout;
  const long long m = num / den;
  return m < 1 ? 1 : static_cast<int>(m);
}

template <typename T>
RcuParams<T> make_rcu(int cin, int n_kernels, int d, int stride_s) {
  RcuParams<T> p;
  p.w_xh = Tensor<T>(Shape5{n_kernels, cin, 1, d, d});
  p.w_hh = Tensor<T>(Shape5{n_kernels, n_kernels, 1, 1, 1});
  p.stride_s = stride_s;
  p.pad_s = d / 2;
  return p;
}

template <typename T>
TemporalConv3dParams<T> make_i3d_conv(int cin, int cout, int n, int d,
                                      int stride_t, int stride_s) {
  TemporalConv3dParams<T> p;
  p.w = Tensor<T>(Shape5{cout, cin, n, d, d});
  p.stride_t = stride_t;
  p.stride_s = stride_s;
  p.pad_t = n / 2;
  p.pad_s = d / 2;
  return p;
}

template <typename T>
FactorizedConvParams<T> make_factorized_conv(int cin, int cout, int n, int d,
                                             int stride_t, int stride_s) {
  const int m = matched_middle_planes(cin, cout, n, d);
  FactorizedConvParams<T> p;
  p.w_spatial = Tensor<T>(Shape5{m, cin, 1, d, d});
  p.w_temporal = Tensor<T>(Shape5{cout, m, n, 1, 1});
  p.bn_mid = BatchNorm<T>(m);
  p.stride_t = stride_t;
  p.stride_s = stride_s;
  p.pad_t = n / 2;
  p.pad_s = d / 2;
  return p;
}

template <typename T>
Unit<T> make_unit(Variant v, int cin, int cout, int n, int d, int stride_t,
                  int stride_s) {
  switch (v) {
    case Variant::kRcn:
      // temporal stride forced to 1: the recurrence preserves resolution
      return make_rcu<T>(cin, cout, d, stride_s);
    case Variant::kI3d:
      return make_i3d_conv<T>(cin, cout, n, d, stride_t, stride_s);
    case Variant::k2Plus1d:
      return make_factorized_conv<T>(cin, cout, n, d, stride_t, stride_s);
  }
  throw std::logic_error("bad variant");
}

namespace {
template <typename T>
int out_channels_impl(const Unit<T>& u) {
  return std::visit([](const auto& p) { return p.out_channels(); }, u);
}
}  // namespace

int unit_out_channels(const Unit<float>& u) { return out_channels_impl(u); }
int unit_out_channels(const Unit<double>& u) { return out_channels_impl(u); }

template <typename T>
Shape5 unit_out_shape(const Unit<T>& u, const Shape5& in) {
  if (const auto* r = std::get_if<RcuParams<T>>(&u)) {
    const Shape5& k = r->w_xh.shape();
    return conv_out_shape(in, k.b, ConvGeom{1, k.h, k.w, 1, r->stride_s, 0,
                                            r->pad_s});
  }
  if (const auto* c = std::get_if<TemporalConv3dParams<T>>(&u))
    return conv_out_shape(in, c->out_channels(), c->geom());
  const auto& f = std::get<FactorizedConvParams<T>>(u);
  const Shape5& ks = f.w_spatial.shape();
  Shape5 mid = conv_out_shape(
      in, ks.b, ConvGeom{1, ks.h, ks.w, 1, f.stride_s, 0, f.pad_s});
  return conv_out_shape(mid, f.out_channels(),
                        ConvGeom{f.w_temporal.shape().t, 1, 1, f.stride_t, 1,
                                 f.pad_t, 0});
}

template <typename T>
Tensor<T> zero_hidden(const RcuParams<T>& p, const Shape5& input_shape) {
  Shape5 out = unit_out_shape<T>(Unit<T>{p}, input_shape);
  return Tensor<T>(Shape5{out.b, out.c, 1, out.h, out.w});
}

template <typename T>
Tensor<T> rcu_step(const Tensor<T>& x_t, const Tensor<T>& h_prev,
                   const RcuParams<T>& p) {
  if (x_t.shape().t != 1)
    throw std::invalid_argument("rcu_step: expected a single frame, got " +
                                x_t.shape().str());
  const Shape5& k = p.w_xh.shape();
  Tensor<T> s;
  conv3d_forward(x_t, p.w_xh, ConvGeom{1, k.h, k.w, 1, p.stride_s, 0, p.pad_s},
                 s);
  if (h_prev.shape() != s.shape())
    throw std::invalid_argument("rcu_step: hidden state " +
                                h_prev.shape().str() +
                                " does not match spatial response " +
                                s.shape().str());
  Tensor<T> hc;
  conv3d_forward(h_prev, p.w_hh, ConvGeom{}, hc);
  Tensor<T> h;
  add_forward(hc, s, h);
  return h;
}

template <typename T>
Tensor<T> rcu_forward(const Tensor<T>& x_seq, const RcuParams<T>& p,
                      const Tensor<T>& h0) {
  const Shape5& k = p.w_xh.shape();
  Tensor<T> s;
  conv3d_forward(x_seq, p.w_xh,
                 ConvGeom{1, k.h, k.w, 1, p.stride_s, 0, p.pad_s}, s);
  Tensor<T> h;
  rcu_scan_forward(s, p.w_hh, h0, h);
  return h;
}

template <typename T>
Var rcu_forward(Tape<T>& tape, Var x_seq, Var w_xh, Var w_hh, Var h0,
                int stride_s, int pad_s) {
  Var s = tape.conv_spatial2d(x_seq, w_xh, stride_s, pad_s);
  return tape.rcu_scan(s, w_hh, h0);
}

template <typename T>
Tensor<T> i3d_conv(const Tensor<T>& x, const TemporalConv3dParams<T>& p) {
  Tensor<T> y;
  conv3d_forward(x, p.w, p.geom(), y);
  return y;
}

template <typename T>
Tensor<T> factorized_conv(const Tensor<T>& x, FactorizedConvParams<T>& p,
                          BnMode mode) {
  const Shape5& ks = p.w_spatial.shape();
  Tensor<T> mid;
  conv3d_forward(x, p.w_spatial,
                 ConvGeom{1, ks.h, ks.w, 1, p.stride_s, 0, p.pad_s}, mid);
  Tensor<T> bn_out;
  batchnorm_forward<T>(mid, p.bn_mid.gamma, p.bn_mid.beta, p.bn_mid.running_mean,
                    p.bn_mid.running_var, p.bn_mid.eps, p.bn_mid.momentum,
                    mode, bn_out, nullptr, nullptr);
  Tensor<T> act;
  relu_forward(bn_out, act);
  Tensor<T> y;
  conv3d_forward(act, p.w_temporal,
                 ConvGeom{p.w_temporal.shape().t, 1, 1, p.stride_t, 1, p.pad_t,
                          0},
                 y);
  return y;
}

template <typename T>
Tensor<T> unit_forward(Unit<T>& u, const Tensor<T>& x, BnMode mode) {
  if (auto* r = std::get_if<RcuParams<T>>(&u)) {
    Tensor<T> h0 = zero_hidden(*r, x.shape());
    return rcu_forward(x, *r, h0);
  }
  if (auto* c = std::get_if<TemporalConv3dParams<T>>(&u)) return i3d_conv(x, *c);
  return factorized_conv(x, std::get<FactorizedConvParams<T>>(u), mode);
}

template <typename T>
void unit_params(Unit<T>& u, const std::string& prefix,
                 std::vector<ParamRef<T>>& out) {
  if (auto* r = std::get_if<RcuParams<T>>(&u)) {
    out.push_back({prefix + ".w_xh", &r->w_xh, ParamKind::kConvKernel});
    out.push_back({prefix + ".w_hh", &r->w_hh, ParamKind::kHiddenKernel});
    return;
  }
  if (auto* c = std::get_if<TemporalConv3dParams<T>>(&u)) {
    out.push_back({prefix + ".w", &c->w, ParamKind::kConvKernel});
    return;
  }
  auto& f = std::get<FactorizedConvParams<T>>(u);
  out.push_back({prefix + ".w_spatial", &f.w_spatial, ParamKind::kConvKernel});
  out.push_back({prefix + ".w_temporal", &f.w_temporal,
                 ParamKind::kConvKernel});
  out.push_back({prefix + ".bn_mid.gamma", &f.bn_mid.gamma,
                 ParamKind::kBnGamma});
  out.push_back({prefix + ".bn_mid.beta", &f.bn_mid.beta, ParamKind::kBnBeta});
  out.push_back({prefix + ".bn_mid.running_mean", &f.bn_mid.running_mean,
                 ParamKind::kBnRunningMean});
  out.push_back({prefix + ".bn_mid.running_var", &f.bn_mid.running_var,
                 ParamKind::kBnRunningVar});
}

namespace {

template <typename T>
void bn_params(BatchNorm<T>& bn, const std::string& prefix,
               std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &bn.gamma, ParamKind::kBnGamma});
  out.push_back({prefix + ".beta", &bn.beta, ParamKind::kBnBeta});
  out.push_back({prefix + ".running_mean", &bn.running_mean,
                 ParamKind::kBnRunningMean});
  out.push_back({prefix + ".running_var", &bn.running_var,
                 ParamKind::kBnRunningVar});
}

template <typename T>
Tensor<T> bn_eval(BatchNorm<T>& bn, const Tensor<T>& x, BnMode mode) {
  Tensor<T> y;
  batchnorm_forward<T>(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                    bn.eps, bn.momentum, mode, y, nullptr, nullptr);
  return y;
}

}  // namespace

template <typename T>
BasicBlock<T> make_basic_block(Variant v, int cin, int cout, int n, int d,
                               int stride_t, int stride_s) {
  BasicBlock<T> blk;
  blk.conv_a = make_unit<T>(v, cin, cout, n, d, stride_t, stride_s);
  blk.bn_a = BatchNorm<T>(cout);
  blk.conv_b = make_unit<T>(v, cout, cout, n, d, 1, 1);
  blk.bn_b = BatchNorm<T>(cout);
  const int eff_st = (v == Variant::kRcn) ? 1 : stride_t;
  if (cin != cout || stride_s != 1 || eff_st != 1) {
    blk.proj_w = Tensor<T>(Shape5{cout, cin, 1, 1, 1});
    blk.proj_bn = BatchNorm<T>(cout);
    blk.proj_stride_t = eff_st;
    blk.proj_stride_s = stride_s;
  }
  return blk;
}

template <typename T>
BottleneckBlock<T> make_bottleneck_block(Variant v, int cin, int cmid,
                                         int cout, int n, int d, int stride_t,
                                         int stride_s) {
  BottleneckBlock<T> blk;
  blk.w_reduce = Tensor<T>(Shape5{cmid, cin, 1, 1, 1});
  blk.bn_reduce = BatchNorm<T>(cmid);
  blk.conv_mid = make_unit<T>(v, cmid, cmid, n, d, stride_t, stride_s);
  blk.bn_mid = BatchNorm<T>(cmid);
  blk.w_expand = Tensor<T>(Shape5{cout, cmid, 1, 1, 1});
  blk.bn_expand = BatchNorm<T>(cout);
  const int eff_st = (v == Variant::kRcn) ? 1 : stride_t;
  if (cin != cout || stride_s != 1 || eff_st != 1) {
    blk.proj_w = Tensor<T>(Shape5{cout, cin, 1, 1, 1});
    blk.proj_bn = BatchNorm<T>(cout);
    blk.proj_stride_t = eff_st;
    blk.proj_stride_s = stride_s;
  }
  return blk;
}

namespace {

template <typename T>
Tensor<T> skip_path(const Tensor<T>& x, std::optional<Tensor<T>>& proj_w,
                    std::optional<BatchNorm<T>>& proj_bn, int st, int ss,
                    BnMode mode) {
  if (!proj_w) return x;
  Tensor<T> p;
  conv3d_forward(x, *proj_w, ConvGeom{1, 1, 1, st, ss, 0, 0}, p);
  return bn_eval(*proj_bn, p, mode);
}

}  // namespace

template <typename T>
Tensor<T> block_forward(Block<T>& blk, const Tensor<T>& x, BnMode mode) {
  if (auto* b = std::get_if<BasicBlock<T>>(&blk)) {
    Tensor<T> y = unit_forward(b->conv_a, x, mode);
    y = bn_eval(b->bn_a, y, mode);
    Tensor<T> a;
    relu_forward(y, a);
    y = unit_forward(b->conv_b, a, mode);
    y = bn_eval(b->bn_b, y, mode);
    Tensor<T> skip = skip_path(x, b->proj_w, b->proj_bn, b->proj_stride_t,
                               b->proj_stride_s, mode);
    Tensor<T> sum;
    add_forward(y, skip, sum);
    Tensor<T> out;
    relu_forward(sum, out);
    return out;
  }
  auto& b = std::get<BottleneckBlock<T>>(blk);
  Tensor<T> y;
  conv3d_forward(x, b.w_reduce, ConvGeom{}, y);
  y = bn_eval(b.bn_reduce, y, mode);
  Tensor<T> a;
  relu_forward(y, a);
  y = unit_forward(b.conv_mid, a, mode);
  y = bn_eval(b.bn_mid, y, mode);
  relu_forward(y, a);
  conv3d_forward(a, b.w_expand, ConvGeom{}, y);
  y = bn_eval(b.bn_expand, y, mode);
  Tensor<T> skip = skip_path(x, b.proj_w, b.proj_bn, b.proj_stride_t,
                             b.proj_stride_s, mode);
  Tensor<T> sum;
  add_forward(y, skip, sum);
  Tensor<T> out;
  relu_forward(sum, out);
  return out;
}

template <typename T>
Shape5 block_out_shape(const Block<T>& blk, const Shape5& in) {
  if (const auto* b = std::get_if<BasicBlock<T>>(&blk)) {
    Shape5 s = unit_out_shape(b->conv_a, in);
    return unit_out_shape(b->conv_b, s);
  }
  const auto& b = std::get<BottleneckBlock<T>>(blk);
  Shape5 s = in;
  s.c = b.w_reduce.shape().b;
  s = unit_out_shape(b.conv_mid, s);
  s.c = b.w_expand.shape().b;
  return s;
}

template <typename T>
void block_params(Block<T>& blk, const std::string& prefix,
                  std::vector<ParamRef<T>>& out) {
  if (auto* b = std::get_if<BasicBlock<T>>(&blk)) {
    unit_params(b->conv_a, prefix + ".conv_a", out);
    bn_params(b->bn_a, prefix + ".bn_a", out);
    unit_params(b->conv_b, prefix + ".conv_b", out);
    bn_params(b->bn_b, prefix + ".bn_b", out);
    if (b->proj_w) {
      out.push_back({prefix + ".proj.w", &*b->proj_w, ParamKind::kConvKernel});
      bn_params(*b->proj_bn, prefix + ".proj.bn", out);
    }
    return;
  }
  auto& b = std::get<BottleneckBlock<T>>(blk);
  out.push_back({prefix + ".reduce.w", &b.w_reduce, ParamKind::kConvKernel});
  bn_params(b.bn_reduce, prefix + ".reduce.bn", out);
  unit_params(b.conv_mid, prefix + ".mid", out);
  bn_params(b.bn_mid, prefix + ".mid_bn", out);
  out.push_back({prefix + ".expand.w", &b.w_expand, ParamKind::kConvKernel});
  bn_params(b.bn_expand, prefix + ".expand.bn", out);
  if (b.proj_w) {
    out.push_back({prefix + ".proj.w", &*b.proj_w, ParamKind::kConvKernel});
    bn_params(*b.proj_bn, prefix + ".proj.bn", out);
  }
}

#define RCN_INSTANTIATE_LAYERS(T)                                             \
  template RcuParams<T> make_rcu<T>(int, int, int, int);                      \
  template TemporalConv3dParams<T> make_i3d_conv<T>(int, int, int, int, int,  \
                                                    int);                     \
  template FactorizedConvParams<T> make_factorized_conv<T>(int, int, int,     \
                                                           int, int, int);    \
  template Unit<T> make_unit<T>(Variant, int, int, int, int, int, int);       \
  template Shape5 unit_out_shape<T>(const Unit<T>&, const Shape5&);           \
  template Tensor<T> zero_hidden<T>(const RcuParams<T>&, const Shape5&);      \
  template Tensor<T> rcu_step<T>(const Tensor<T>&, const Tensor<T>&,          \
                                 const RcuParams<T>&);                        \
  template Tensor<T> rcu_forward<T>(const Tensor<T>&, const RcuParams<T>&,    \
                                    const Tensor<T>&);                        \
  template Var rcu_forward<T>(Tape<T>&, Var, Var, Var, Var, int, int);        \
  template Tensor<T> i3d_conv<T>(const Tensor<T>&,                            \
                                 const TemporalConv3dParams<T>&);             \
  template Tensor<T> factorized_conv<T>(const Tensor<T>&,                     \
                                        FactorizedConvParams<T>&, BnMode);    \
  template Tensor<T> unit_forward<T>(Unit<T>&, const Tensor<T>&, BnMode);     \
  template void unit_params<T>(Unit<T>&, const std::string&,                  \
                               std::vector<ParamRef<T>>&);                    \
  template BasicBlock<T> make_basic_block<T>(Variant, int, int, int, int,     \
                                             int, int);                       \
  template BottleneckBlock<T> make_bottleneck_block<T>(Variant, int, int,     \
                                                       int, int, int, int,    \
                                                       int);                  \
  template Tensor<T> block_forward<T>(Block<T>&, const Tensor<T>&, BnMode);   \
  template Shape5 block_out_shape<T>(const Block<T>&, const Shape5&);         \
  template void block_params<T>(Block<T>&, const std::string&,                \
                                std::vector<ParamRef<T>>&);

RCN_INSTANTIATE_LAYERS(float)
RCN_INSTANTIATE_LAYERS(double)

}  // namespace rcn
