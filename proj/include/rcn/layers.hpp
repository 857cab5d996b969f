#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rcn/tape.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

enum class Variant { kRcn, kI3d, k2Plus1d };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta, running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : gamma(Shape5{1, channels, 1, 1, 1}, T(1)),
        beta(Shape5{1, channels, 1, 1, 1}, T(0)),
        running_mean(Shape5{1, channels, 1, 1, 1}, T(0)),
        running_var(Shape5{1, channels, 1, 1, 1}, T(1)) {}
  int channels() const { return gamma.shape().c; }
};

// Recurrent convolutional unit: h[t] = h[t-1] * w_hh + x[t] * w_xh.
// The hidden kernel is pointwise over channels; both kernels have temporal
// extent 1, so the unit never strides or shrinks time.
template <typename T>
struct RcuParams {
  Tensor<T> w_xh;  // (N, Cin, 1, d, d)
  Tensor<T> w_hh;  // (N, N, 1, 1, 1)
  int stride_s = 1;
  int pad_s = 0;

  int in_channels() const { return w_xh.shape().c; }
  int out_channels() const { return w_xh.shape().b; }
};

// Full n x d x d convolution (inflated 2D).
template <typename T>
struct TemporalConv3dParams {
  Tensor<T> w;  // (Cout, Cin, n, d, d)
  int stride_t = 1, stride_s = 1;
  int pad_t = 0, pad_s = 0;

  int in_channels() const { return w.shape().c; }
  int out_channels() const { return w.shape().b; }
  ConvGeom geom() const {
    return ConvGeom{w.shape().t, w.shape().h, w.shape().w,
                    stride_t,    stride_s,    pad_t,       pad_s};
  }
};

// (1 x d x d) spatial conv into M middle planes, BN + ReLU, then
// (n x 1 x 1) temporal conv. M is chosen to match the 3D parameter count.
template <typename T>
struct FactorizedConvParams {
  Tensor<T> w_spatial;   // (M, Cin, 1, d, d)
  Tensor<T> w_temporal;  // (Cout, M, n, 1, 1)
  BatchNorm<T> bn_mid;
  int stride_t = 1, stride_s = 1;
  int pad_t = 0, pad_s = 0;

  int in_channels() const { return w_spatial.shape().c; }
  int middle_planes() const { return w_spatial.shape().b; }
  int out_channels() const { return w_temporal.shape().b; }
};

// Middle-plane count matching the parameter total of an (n, d, d) kernel:
// M = floor(n d^2 Cin Cout / (d^2 Cin + n Cout)), at least 1.
int matched_middle_planes(int cin, int cout, int n, int d);

template <typename T>
using Unit =
    std::variant<RcuParams<T>, TemporalConv3dParams<T>, FactorizedConvParams<T>>;

template <typename T>
RcuParams<T> make_rcu(int cin, int n_kernels, int d, int stride_s);
template <typename T>
TemporalConv3dParams<T> make_i3d_conv(int cin, int cout, int n, int d,
                                      int stride_t, int stride_s);
template <typename T>
FactorizedConvParams<T> make_factorized_conv(int cin, int cout, int n, int d,
                                             int stride_t, int stride_s);
template <typename T>
Unit<T> make_unit(Variant v, int cin, int cout, int n, int d, int stride_t,
                  int stride_s);

int unit_out_channels(const Unit<float>& u);
int unit_out_channels(const Unit<double>& u);
template <typename T>
Shape5 unit_out_shape(const Unit<T>& u, const Shape5& in);

// Zero initial hidden state at the unit's output resolution.
template <typename T>
Tensor<T> zero_hidden(const RcuParams<T>& p, const Shape5& input_shape);

// One recurrence step on a single frame (t extent 1). h_prev spatial extents
// must equal the spatial-conv output extents.
template <typename T>
Tensor<T> rcu_step(const Tensor<T>& x_t, const Tensor<T>& h_prev,
                   const RcuParams<T>& p);

// Unrolls the unit over all T frames of x_seq. One hidden state per frame.
template <typename T>
Tensor<T> rcu_forward(const Tensor<T>& x_seq, const RcuParams<T>& p,
                      const Tensor<T>& h0);
template <typename T>
Var rcu_forward(Tape<T>& tape, Var x_seq, Var w_xh, Var w_hh, Var h0,
                int stride_s, int pad_s);

template <typename T>
Tensor<T> i3d_conv(const Tensor<T>& x, const TemporalConv3dParams<T>& p);

template <typename T>
Tensor<T> factorized_conv(const Tensor<T>& x, FactorizedConvParams<T>& p,
                          BnMode mode);

// Forward through any unit without a tape (inference).
template <typename T>
Tensor<T> unit_forward(Unit<T>& u, const Tensor<T>& x, BnMode mode);

// Parameter handles for a unit, for training and persistence.
enum class ParamKind {
  kConvKernel,
  kHiddenKernel,
  kBnGamma,
  kBnBeta,
  kBnRunningMean,
  kBnRunningVar
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  ParamKind kind;
};

template <typename T>
void unit_params(Unit<T>& u, const std::string& prefix,
                 std::vector<ParamRef<T>>& out);

// Residual block of two units (basic) with BN after each conv, identity or
// projection skip, and a final ReLU.
template <typename T>
struct BasicBlock {
  Unit<T> conv_a;
  BatchNorm<T> bn_a;
  Unit<T> conv_b;
  BatchNorm<T> bn_b;
  // Projection path when channel count or stride changes.
  std::optional<Tensor<T>> proj_w;  // (Cout, Cin, 1, 1, 1)
  std::optional<BatchNorm<T>> proj_bn;
  int proj_stride_t = 1, proj_stride_s = 1;
};

// Bottleneck block (1x1 reduce, d x d unit, 1x1 expand). Only the middle
// conv is spatiotemporal; the pointwise convs stay purely spatial.
template <typename T>
struct BottleneckBlock {
  Tensor<T> w_reduce;
  BatchNorm<T> bn_reduce;
  Unit<T> conv_mid;
  BatchNorm<T> bn_mid;
  Tensor<T> w_expand;
  BatchNorm<T> bn_expand;
  std::optional<Tensor<T>> proj_w;
  std::optional<BatchNorm<T>> proj_bn;
  int proj_stride_t = 1, proj_stride_s = 1;
};

template <typename T>
using Block = std::variant<BasicBlock<T>, BottleneckBlock<T>>;

template <typename T>
BasicBlock<T> make_basic_block(Variant v, int cin, int cout, int n, int d,
                               int stride_t, int stride_s);
template <typename T>
BottleneckBlock<T> make_bottleneck_block(Variant v, int cin, int cmid,
                                         int cout, int n, int d, int stride_t,
                                         int stride_s);

template <typename T>
Tensor<T> block_forward(Block<T>& blk, const Tensor<T>& x, BnMode mode);

template <typename T>
Shape5 block_out_shape(const Block<T>& blk, const Shape5& in);

template <typename T>
void block_params(Block<T>& blk, const std::string& prefix,
                  std::vector<ParamRef<T>>& out);

}  // namespace rcn
