#pragma once

#include "rcn/tensor.hpp"

namespace rcn {

// Geometry of a dense 3D convolution over (t, h, w). Spatial stride/pad are
// shared by h and w. Convolutions never carry a bias; a BN layer follows
// every convolution in all three network variants.
struct ConvGeom {
  int kt = 1, kh = 1, kw = 1;  // kernel extents
  int st = 1, ss = 1;          // temporal / spatial stride
  int pt = 0, ps = 0;          // temporal / spatial zero padding
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline Shape5 conv_out_shape(const Shape5& x, int cout, const ConvGeom& g) {
  return Shape5{x.b, cout, conv_out_extent(x.t, g.kt, g.st, g.pt),
                conv_out_extent(x.h, g.kh, g.ss, g.ps),
                conv_out_extent(x.w, g.kw, g.ss, g.ps)};
}

// Validates shapes and returns the output shape; throws std::invalid_argument
// with both shapes in the message on mismatch.
Shape5 check_conv_shapes(const Shape5& x, const Shape5& w, const ConvGeom& g);

// y = conv(x, w). Kernel layout [Cout, Cin, kt, kh, kw]. The per-element
// accumulation order is pinned: kernel position major (kt, kh, kw), input
// channel minor, so repeated runs and the streaming path are bit-identical.
template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g,
                    Tensor<T>& y);

// Gradients w.r.t. input and/or kernel; pass nullptr to skip one. Both are
// accumulated into (callers zero them first).
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw);

// Recurrent scan over time: h[t] = whh . h[t-1] + s[t], with h[-1] = h0.
// s: (B, N, T, H, W); whh: (N, N, 1, 1, 1); h0: (B, N, 1, H, W).
template <typename T>
void rcu_scan_forward(const Tensor<T>& s, const Tensor<T>& whh,
                      const Tensor<T>& h0, Tensor<T>& h);

// Backprop through time for the scan. gh is dL/dh for every step. gs, gwhh,
// gh0 are accumulated into; any may be nullptr.
template <typename T>
void rcu_scan_backward(const Tensor<T>& h, const Tensor<T>& whh,
                       const Tensor<T>& h0, const Tensor<T>& gh, Tensor<T>* gs,
                       Tensor<T>* gwhh, Tensor<T>* gh0);

enum class BnMode { kTrain, kEval };

// Per-channel batch normalization over (B, T, H, W). Train mode normalizes
// with population statistics of the current batch and folds them into the
// running estimates with the given momentum (new = (1-m)*old + m*batch);
// eval mode normalizes with the running estimates. saved_mean/saved_invstd
// receive the statistics actually used, for the backward pass.
template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, T eps, T momentum, BnMode mode,
                       Tensor<T>& y, Tensor<T>* saved_mean,
                       Tensor<T>* saved_invstd);

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& saved_mean,
                        const Tensor<T>& saved_invstd, BnMode mode,
                        const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma,
                        Tensor<T>* gbeta);

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx);

// (H, W) -> (1, 1) average.
template <typename T>
void spatial_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void spatial_avg_pool_backward(const Shape5& xshape, const Tensor<T>& gy,
                               Tensor<T>& gx);

// T -> 1 average.
template <typename T>
void temporal_mean_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void temporal_mean_backward(const Shape5& xshape, const Tensor<T>& gy,
                            Tensor<T>& gx);

template <typename T>
void add_forward(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& y);

}  // namespace rcn
