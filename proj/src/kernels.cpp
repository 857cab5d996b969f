#include "rcn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace rcn {

namespace {
template <typename T>
void ensure_shape(Tensor<T>& t, const Shape5& s) {
  if (t.shape() != s || t.numel() != s.numel()) t = Tensor<T>(s);
}
}  // namespace

Shape5 check_conv_shapes(const Shape5& x, const Shape5& w, const ConvGeom& g) {
  if (w.c != x.c)
    throw std::invalid_argument("conv: input channels " + x.str() +
                                " do not match kernel " + w.str());
  if (w.t != g.kt || w.h != g.kh || w.w != g.kw)
    throw std::invalid_argument("conv: kernel tensor " + w.str() +
                                " disagrees with stated extents (" +
                                std::to_string(g.kt) + "," +
                                std::to_string(g.kh) + "," +
                                std::to_string(g.kw) + ")");
  if (g.st < 1 || g.ss < 1 || g.pt < 0 || g.ps < 0)
    throw std::invalid_argument("conv: invalid stride/pad");
  if (x.t + 2 * g.pt < g.kt)
    throw std::invalid_argument(
        "conv: temporal extent " + std::to_string(x.t) + " with padding " +
        std::to_string(g.pt) + " is smaller than kernel extent " +
        std::to_string(g.kt));
  if (x.h + 2 * g.ps < g.kh || x.w + 2 * g.ps < g.kw)
    throw std::invalid_argument("conv: spatial extent of " + x.str() +
                                " too small for kernel " + w.str());
  return conv_out_shape(x, w.b, g);
}

namespace {

// Kernel taps in pinned order: (dt, dh, dw) major, input channel minor.
// Weights are repacked once per call into [Cout][K] rows so the inner loop
// is a contiguous dot product.
template <typename T>
void repack_weights(const Tensor<T>& w, std::vector<T>& wp) {
  const Shape5& s = w.shape();
  const int cout = s.b, cin = s.c, kt = s.t, kh = s.h, kw = s.w;
  const std::size_t K = static_cast<std::size_t>(kt) * kh * kw * cin;
  wp.resize(static_cast<std::size_t>(cout) * K);
  std::size_t idx = 0;
  for (int o = 0; o < cout; ++o)
    for (int dt = 0; dt < kt; ++dt)
      for (int dh = 0; dh < kh; ++dh)
        for (int dw = 0; dw < kw; ++dw)
          for (int i = 0; i < cin; ++i) wp[idx++] = w.at(o, i, dt, dh, dw);
}

template <typename T>
void unpack_weight_grad(const std::vector<T>& gp, Tensor<T>& gw) {
  const Shape5& s = gw.shape();
  std::size_t idx = 0;
  for (int o = 0; o < s.b; ++o)
    for (int dt = 0; dt < s.t; ++dt)
      for (int dh = 0; dh < s.h; ++dh)
        for (int dw = 0; dw < s.w; ++dw)
          for (int i = 0; i < s.c; ++i) gw.at(o, i, dt, dh, dw) += gp[idx++];
}

// Builds im2col rows for positions [p0, p0+rows) of batch element b.
// Row p holds the receptive field of output position p in pinned tap order.
template <typename T>
void im2col_block(const Tensor<T>& x, int b, const ConvGeom& g,
                  const Shape5& ys, std::size_t p0, std::size_t rows,
                  std::size_t K, std::vector<T>& col) {
  const Shape5& xs = x.shape();
  const int HW = xs.h * xs.w;
  const int THW = xs.t * HW;
  const T* xb = x.data() + static_cast<std::size_t>(b) * xs.c * THW;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = p0 + r;
    const int wo = static_cast<int>(p % ys.w);
    const int ho = static_cast<int>((p / ys.w) % ys.h);
    const int to = static_cast<int>(p / (static_cast<std::size_t>(ys.w) * ys.h));
    T* row = col.data() + r * K;
    std::size_t k = 0;
    const int tbase = to * g.st - g.pt;
    const int hbase = ho * g.ss - g.ps;
    const int wbase = wo * g.ss - g.ps;
    for (int dt = 0; dt < g.kt; ++dt) {
      const int ti = tbase + dt;
      const bool tok = ti >= 0 && ti < xs.t;
      for (int dh = 0; dh < g.kh; ++dh) {
        const int hi = hbase + dh;
        const bool hok = hi >= 0 && hi < xs.h;
        for (int dw = 0; dw < g.kw; ++dw) {
          const int wi = wbase + dw;
          if (tok && hok && wi >= 0 && wi < xs.w) {
            const T* src = xb + ti * HW + hi * xs.w + wi;
            for (int i = 0; i < xs.c; ++i) row[k++] = src[i * THW];
          } else {
            for (int i = 0; i < xs.c; ++i) row[k++] = T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a col-gradient block back into gx.
template <typename T>
void col2im_block(const std::vector<T>& gcol, int b, const ConvGeom& g,
                  const Shape5& ys, std::size_t p0, std::size_t rows,
                  std::size_t K, Tensor<T>& gx) {
  const Shape5& xs = gx.shape();
  const int HW = xs.h * xs.w;
  const int THW = xs.t * HW;
  T* xb = gx.data() + static_cast<std::size_t>(b) * xs.c * THW;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = p0 + r;
    const int wo = static_cast<int>(p % ys.w);
    const int ho = static_cast<int>((p / ys.w) % ys.h);
    const int to = static_cast<int>(p / (static_cast<std::size_t>(ys.w) * ys.h));
    const T* row = gcol.data() + r * K;
    std::size_t k = 0;
    const int tbase = to * g.st - g.pt;
    const int hbase = ho * g.ss - g.ps;
    const int wbase = wo * g.ss - g.ps;
    for (int dt = 0; dt < g.kt; ++dt) {
      const int ti = tbase + dt;
      const bool tok = ti >= 0 && ti < xs.t;
      for (int dh = 0; dh < g.kh; ++dh) {
        const int hi = hbase + dh;
        const bool hok = hi >= 0 && hi < xs.h;
        for (int dw = 0; dw < g.kw; ++dw) {
          const int wi = wbase + dw;
          if (tok && hok && wi >= 0 && wi < xs.w) {
            T* dst = xb + ti * HW + hi * xs.w + wi;
            for (int i = 0; i < xs.c; ++i) dst[i * THW] += row[k++];
          } else {
            k += xs.c;
          }
        }
      }
    }
  }
}

constexpr std::size_t kColBlockBytes = 1 << 20;  // ~1 MiB of col rows

inline std::size_t block_rows(std::size_t K, std::size_t elem) {
  std::size_t rows = kColBlockBytes / (K * elem + 1);
  return std::max<std::size_t>(1, std::min<std::size_t>(rows, 4096));
}

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g,
                    Tensor<T>& y) {
  const Shape5 ys = check_conv_shapes(x.shape(), w.shape(), g);
  ensure_shape(y, ys);
  const int cout = w.shape().b;
  const std::size_t K =
      static_cast<std::size_t>(g.kt) * g.kh * g.kw * x.shape().c;
  const std::size_t P = static_cast<std::size_t>(ys.t) * ys.h * ys.w;

  std::vector<T> wp;
  repack_weights(w, wp);
  const std::size_t rows = block_rows(K, sizeof(T));
  std::vector<T> col(rows * K);

  for (int b = 0; b < x.shape().b; ++b) {
    T* yb = y.data() + static_cast<std::size_t>(b) * cout * P;
    for (std::size_t p0 = 0; p0 < P; p0 += rows) {
      const std::size_t n = std::min(rows, P - p0);
      im2col_block(x, b, g, ys, p0, n, K, col);
      for (int o = 0; o < cout; ++o) {
        const T* wrow = wp.data() + static_cast<std::size_t>(o) * K;
        T* yrow = yb + static_cast<std::size_t>(o) * P + p0;
        for (std::size_t r = 0; r < n; ++r) {
          const T* crow = col.data() + r * K;
          T acc = T(0);
          for (std::size_t k = 0; k < K; ++k) acc += wrow[k] * crow[k];
          yrow[r] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g,
                     const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* gw) {
  const Shape5 ys = check_conv_shapes(x.shape(), w.shape(), g);
  if (gy.shape() != ys)
    throw std::invalid_argument("conv backward: gradient shape " +
                                gy.shape().str() + " does not match output " +
                                ys.str());
  const int cout = w.shape().b;
  const std::size_t K =
      static_cast<std::size_t>(g.kt) * g.kh * g.kw * x.shape().c;
  const std::size_t P = static_cast<std::size_t>(ys.t) * ys.h * ys.w;

  std::vector<T> wp;
  std::vector<T> gwp;
  if (gx) repack_weights(w, wp);
  if (gw) gwp.assign(static_cast<std::size_t>(cout) * K, T(0));

  const std::size_t rows = block_rows(K, sizeof(T));
  std::vector<T> col;
  std::vector<T> gcol;
  if (gw) col.resize(rows * K);
  if (gx) gcol.resize(rows * K);

  for (int b = 0; b < x.shape().b; ++b) {
    const T* gyb = gy.data() + static_cast<std::size_t>(b) * cout * P;
    for (std::size_t p0 = 0; p0 < P; p0 += rows) {
      const std::size_t n = std::min(rows, P - p0);
      if (gw) {
        im2col_block(x, b, g, ys, p0, n, K, col);
        for (int o = 0; o < cout; ++o) {
          const T* gyrow = gyb + static_cast<std::size_t>(o) * P + p0;
          T* grow = gwp.data() + static_cast<std::size_t>(o) * K;
          for (std::size_t r = 0; r < n; ++r) {
            const T gv = gyrow[r];
            if (gv == T(0)) continue;
            const T* crow = col.data() + r * K;
            for (std::size_t k = 0; k < K; ++k) grow[k] += gv * crow[k];
          }
        }
      }
      if (gx) {
        std::fill(gcol.begin(), gcol.begin() + n * K, T(0));
        for (std::size_t r = 0; r < n; ++r) {
          T* crow = gcol.data() + r * K;
          for (int o = 0; o < cout; ++o) {
            const T gv = gyb[static_cast<std::size_t>(o) * P + p0 + r];
            if (gv == T(0)) continue;
            const T* wrow = wp.data() + static_cast<std::size_t>(o) * K;
            for (std::size_t k = 0; k < K; ++k) crow[k] += gv * wrow[k];
          }
        }
        col2im_block(gcol, b, g, ys, p0, n, K, *gx);
      }
    }
  }
  if (gw) unpack_weight_grad(gwp, *gw);
}

template <typename T>
void rcu_scan_forward(const Tensor<T>& s, const Tensor<T>& whh,
                      const Tensor<T>& h0, Tensor<T>& h) {
  const Shape5& ss = s.shape();
  const int N = ss.c;
  if (whh.shape().b != N || whh.shape().c != N || whh.shape().t != 1 ||
      whh.shape().h != 1 || whh.shape().w != 1)
    throw std::invalid_argument("rcu: hidden kernel " + whh.shape().str() +
                                " must be (N,N,1,1,1) with N=" +
                                std::to_string(N));
  if (h0.shape().b != ss.b || h0.shape().c != N || h0.shape().t != 1 ||
      h0.shape().h != ss.h || h0.shape().w != ss.w)
    throw std::invalid_argument("rcu: initial state " + h0.shape().str() +
                                " does not match spatial response " +
                                ss.str());
  ensure_shape(h, ss);

  const std::size_t HW = static_cast<std::size_t>(ss.h) * ss.w;
  const std::size_t cstride = static_cast<std::size_t>(ss.t) * HW;
  for (int b = 0; b < ss.b; ++b) {
    const T* sb = s.data() + static_cast<std::size_t>(b) * N * cstride;
    T* hb = h.data() + static_cast<std::size_t>(b) * N * cstride;
    const T* prev0 = h0.data() + static_cast<std::size_t>(b) * N * HW;
    for (int t = 0; t < ss.t; ++t) {
      for (int o = 0; o < N; ++o) {
        T* out = hb + o * cstride + t * HW;
        const T* wrow = whh.data() + static_cast<std::size_t>(o) * N;
        std::fill(out, out + HW, T(0));
        for (int i = 0; i < N; ++i) {
          const T wv = wrow[i];
          const T* prev = (t == 0) ? prev0 + i * HW
                                   : hb + i * cstride + (t - 1) * HW;
          for (std::size_t p = 0; p < HW; ++p) out[p] += wv * prev[p];
        }
        const T* sp = sb + o * cstride + t * HW;
        for (std::size_t p = 0; p < HW; ++p) out[p] += sp[p];
      }
    }
  }
}

template <typename T>
void rcu_scan_backward(const Tensor<T>& h, const Tensor<T>& whh,
                       const Tensor<T>& h0, const Tensor<T>& gh, Tensor<T>* gs,
                       Tensor<T>* gwhh, Tensor<T>* gh0) {
  const Shape5& hs = h.shape();
  const int N = hs.c;
  const std::size_t HW = static_cast<std::size_t>(hs.h) * hs.w;
  const std::size_t cstride = static_cast<std::size_t>(hs.t) * HW;
  std::vector<T> carry(static_cast<std::size_t>(N) * HW);
  std::vector<T> cur(static_cast<std::size_t>(N) * HW);

  for (int b = 0; b < hs.b; ++b) {
    const T* hb = h.data() + static_cast<std::size_t>(b) * N * cstride;
    const T* ghb = gh.data() + static_cast<std::size_t>(b) * N * cstride;
    std::fill(carry.begin(), carry.end(), T(0));
    for (int t = hs.t - 1; t >= 0; --t) {
      // total gradient reaching h[t]: direct + carried through h[t+1]
      for (int o = 0; o < N; ++o) {
        const T* g = ghb + o * cstride + t * HW;
        T* c = cur.data() + o * HW;
        const T* ca = carry.data() + o * HW;
        for (std::size_t p = 0; p < HW; ++p) c[p] = g[p] + ca[p];
      }
      if (gs) {
        T* gsb = gs->data() + static_cast<std::size_t>(b) * N * cstride;
        for (int o = 0; o < N; ++o) {
          T* dst = gsb + o * cstride + t * HW;
          const T* c = cur.data() + o * HW;
          for (std::size_t p = 0; p < HW; ++p) dst[p] += c[p];
        }
      }
      const T* prev0 = h0.data() + static_cast<std::size_t>(b) * N * HW;
      if (gwhh) {
        for (int o = 0; o < N; ++o) {
          const T* c = cur.data() + o * HW;
          T* grow = gwhh->data() + static_cast<std::size_t>(o) * N;
          for (int i = 0; i < N; ++i) {
            const T* pv =
                (t == 0) ? prev0 + i * HW : hb + i * cstride + (t - 1) * HW;
            T acc = T(0);
            for (std::size_t p = 0; p < HW; ++p) acc += c[p] * pv[p];
            grow[i] += acc;
          }
        }
      }
      // carry = whh^T . cur
      std::fill(carry.begin(), carry.end(), T(0));
      for (int o = 0; o < N; ++o) {
        const T* c = cur.data() + o * HW;
        const T* wrow = whh.data() + static_cast<std::size_t>(o) * N;
        for (int i = 0; i < N; ++i) {
          const T wv = wrow[i];
          T* ca = carry.data() + i * HW;
          for (std::size_t p = 0; p < HW; ++p) ca[p] += wv * c[p];
        }
      }
    }
    if (gh0) {
      T* dst = gh0->data() + static_cast<std::size_t>(b) * N * HW;
      for (std::size_t p = 0; p < static_cast<std::size_t>(N) * HW; ++p)
        dst[p] += carry[p];
    }
  }
}

template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, T eps, T momentum, BnMode mode,
                       Tensor<T>& y, Tensor<T>* saved_mean,
                       Tensor<T>* saved_invstd) {
  const Shape5& xs = x.shape();
  const int C = xs.c;
  if (static_cast<int>(gamma.numel()) != C ||
      static_cast<int>(beta.numel()) != C)
    throw std::invalid_argument("batchnorm: gamma/beta length " +
                                std::to_string(gamma.numel()) +
                                " does not match channels of " + xs.str());
  ensure_shape(y, xs);
  const std::size_t THW = static_cast<std::size_t>(xs.t) * xs.h * xs.w;
  const std::size_t cnt = static_cast<std::size_t>(xs.b) * THW;

  for (int c = 0; c < C; ++c) {
    T mean, var;
    if (mode == BnMode::kTrain) {
      T sum = T(0);
      for (int b = 0; b < xs.b; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * C + c) * THW;
        for (std::size_t i = 0; i < THW; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(cnt);
      T sq = T(0);
      for (int b = 0; b < xs.b; ++b) {
        const T* p = x.data() + (static_cast<std::size_t>(b) * C + c) * THW;
        for (std::size_t i = 0; i < THW; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(cnt);  // population variance
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T invstd = T(1) / std::sqrt(var + eps);
    if (saved_mean) (*saved_mean)[c] = mean;
    if (saved_invstd) (*saved_invstd)[c] = invstd;
    const T a = gamma[c] * invstd;
    const T b0 = beta[c] - a * mean;
    for (int b = 0; b < xs.b; ++b) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * C + c) * THW;
      T* q = y.data() + (static_cast<std::size_t>(b) * C + c) * THW;
      for (std::size_t i = 0; i < THW; ++i) q[i] = a * p[i] + b0;
    }
  }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                        const Tensor<T>& saved_mean,
                        const Tensor<T>& saved_invstd, BnMode mode,
                        const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma,
                        Tensor<T>* gbeta) {
  const Shape5& xs = x.shape();
  const int C = xs.c;
  const std::size_t THW = static_cast<std::size_t>(xs.t) * xs.h * xs.w;
  const std::size_t cnt = static_cast<std::size_t>(xs.b) * THW;

  for (int c = 0; c < C; ++c) {
    const T mean = saved_mean[c];
    const T invstd = saved_invstd[c];
    T sum_gy = T(0), sum_gy_xhat = T(0);
    for (int b = 0; b < xs.b; ++b) {
      const T* px = x.data() + (static_cast<std::size_t>(b) * C + c) * THW;
      const T* pg = gy.data() + (static_cast<std::size_t>(b) * C + c) * THW;
      for (std::size_t i = 0; i < THW; ++i) {
        sum_gy += pg[i];
        sum_gy_xhat += pg[i] * (px[i] - mean) * invstd;
      }
    }
    if (gbeta) (*gbeta)[c] += sum_gy;
    if (ggamma) (*ggamma)[c] += sum_gy_xhat;
    if (gx) {
      const T a = gamma[c] * invstd;
      if (mode == BnMode::kTrain) {
        const T m_gy = sum_gy / static_cast<T>(cnt);
        const T m_gyx = sum_gy_xhat / static_cast<T>(cnt);
        for (int b = 0; b < xs.b; ++b) {
          const T* px = x.data() + (static_cast<std::size_t>(b) * C + c) * THW;
          const T* pg = gy.data() + (static_cast<std::size_t>(b) * C + c) * THW;
          T* pd = gx->data() + (static_cast<std::size_t>(b) * C + c) * THW;
          for (std::size_t i = 0; i < THW; ++i) {
            const T xhat = (px[i] - mean) * invstd;
            pd[i] += a * (pg[i] - m_gy - xhat * m_gyx);
          }
        }
      } else {
        for (int b = 0; b < xs.b; ++b) {
          const T* pg = gy.data() + (static_cast<std::size_t>(b) * C + c) * THW;
          T* pd = gx->data() + (static_cast<std::size_t>(b) * C + c) * THW;
          for (std::size_t i = 0; i < THW; ++i) pd[i] += a * pg[i];
        }
      }
    }
  }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  ensure_shape(y, x.shape());
  const T* p = x.data();
  T* q = y.data();
  for (std::size_t i = 0; i < x.numel(); ++i) q[i] = p[i] > T(0) ? p[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
  const T* p = x.data();
  const T* g = gy.data();
  T* d = gx.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (p[i] > T(0)) d[i] += g[i];
}

template <typename T>
void spatial_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y) {
  const Shape5& xs = x.shape();
  const Shape5 ys{xs.b, xs.c, xs.t, 1, 1};
  ensure_shape(y, ys);
  const std::size_t HW = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t planes = static_cast<std::size_t>(xs.b) * xs.c * xs.t;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* p = x.data() + pl * HW;
    T acc = T(0);
    for (std::size_t i = 0; i < HW; ++i) acc += p[i];
    y[pl] = acc / static_cast<T>(HW);
  }
}

template <typename T>
void spatial_avg_pool_backward(const Shape5& xshape, const Tensor<T>& gy,
                               Tensor<T>& gx) {
  const std::size_t HW = static_cast<std::size_t>(xshape.h) * xshape.w;
  const std::size_t planes =
      static_cast<std::size_t>(xshape.b) * xshape.c * xshape.t;
  const T inv = T(1) / static_cast<T>(HW);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T g = gy[pl] * inv;
    T* d = gx.data() + pl * HW;
    for (std::size_t i = 0; i < HW; ++i) d[i] += g;
  }
}

template <typename T>
void temporal_mean_forward(const Tensor<T>& x, Tensor<T>& y) {
  const Shape5& xs = x.shape();
  const Shape5 ys{xs.b, xs.c, 1, xs.h, xs.w};
  ensure_shape(y, ys);
  const std::size_t HW = static_cast<std::size_t>(xs.h) * xs.w;
  const T inv = T(1) / static_cast<T>(xs.t);
  for (int b = 0; b < xs.b; ++b)
    for (int c = 0; c < xs.c; ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * xs.c + c) *
                                  static_cast<std::size_t>(xs.t) * HW;
      T* q = y.data() + (static_cast<std::size_t>(b) * xs.c + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) q[i] = T(0);
      for (int t = 0; t < xs.t; ++t)
        for (std::size_t i = 0; i < HW; ++i) q[i] += p[t * HW + i];
      for (std::size_t i = 0; i < HW; ++i) q[i] *= inv;
    }
}

template <typename T>
void temporal_mean_backward(const Shape5& xshape, const Tensor<T>& gy,
                            Tensor<T>& gx) {
  const std::size_t HW = static_cast<std::size_t>(xshape.h) * xshape.w;
  const T inv = T(1) / static_cast<T>(xshape.t);
  for (int b = 0; b < xshape.b; ++b)
    for (int c = 0; c < xshape.c; ++c) {
      const T* g =
          gy.data() + (static_cast<std::size_t>(b) * xshape.c + c) * HW;
      T* d = gx.data() + (static_cast<std::size_t>(b) * xshape.c + c) *
                             static_cast<std::size_t>(xshape.t) * HW;
      for (int t = 0; t < xshape.t; ++t)
        for (std::size_t i = 0; i < HW; ++i) d[t * HW + i] += g[i] * inv;
    }
}

template <typename T>
void add_forward(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& y) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape " + a.shape().str() +
                                " does not match " + b.shape().str());
  ensure_shape(y, a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* q = y.data();
  for (std::size_t i = 0; i < a.numel(); ++i) q[i] = pa[i] + pb[i];
}

#define RCN_INSTANTIATE_KERNELS(T)                                            \
  template void conv3d_forward<T>(const Tensor<T>&, const Tensor<T>&,         \
                                  const ConvGeom&, Tensor<T>&);               \
  template void conv3d_backward<T>(const Tensor<T>&, const Tensor<T>&,        \
                                   const ConvGeom&, const Tensor<T>&,         \
                                   Tensor<T>*, Tensor<T>*);                   \
  template void rcu_scan_forward<T>(const Tensor<T>&, const Tensor<T>&,       \
                                    const Tensor<T>&, Tensor<T>&);            \
  template void rcu_scan_backward<T>(const Tensor<T>&, const Tensor<T>&,      \
                                     const Tensor<T>&, const Tensor<T>&,      \
                                     Tensor<T>*, Tensor<T>*, Tensor<T>*);     \
  template void batchnorm_forward<T>(const Tensor<T>&, const Tensor<T>&,      \
                                     const Tensor<T>&, Tensor<T>&,            \
                                     Tensor<T>&, T, T, BnMode, Tensor<T>&,    \
                                     Tensor<T>*, Tensor<T>*);                 \
  template void batchnorm_backward<T>(const Tensor<T>&, const Tensor<T>&,     \
                                      const Tensor<T>&, const Tensor<T>&,     \
                                      BnMode, const Tensor<T>&, Tensor<T>*,   \
                                      Tensor<T>*, Tensor<T>*);                \
  template void relu_forward<T>(const Tensor<T>&, Tensor<T>&);                \
  template void relu_backward<T>(const Tensor<T>&, const Tensor<T>&,          \
                                 Tensor<T>&);                                 \
  template void spatial_avg_pool_forward<T>(const Tensor<T>&, Tensor<T>&);    \
  template void spatial_avg_pool_backward<T>(const Shape5&, const Tensor<T>&, \
                                             Tensor<T>&);                     \
  template void temporal_mean_forward<T>(const Tensor<T>&, Tensor<T>&);       \
  template void temporal_mean_backward<T>(const Shape5&, const Tensor<T>&,    \
                                          Tensor<T>&);                        \
  template void add_forward<T>(const Tensor<T>&, const Tensor<T>&,            \
                               Tensor<T>&);

RCN_INSTANTIATE_KERNELS(float)
RCN_INSTANTIATE_KERNELS(double)

}  // namespace rcn
