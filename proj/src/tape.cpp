#include "rcn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace rcn {

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad,
                  std::function<void()> bw) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor<T>(n.value.shape());
    n.grad_alloc = true;
  }
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.grad_alloc)
    throw std::logic_error("grad requested for a node backward never reached");
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (backward_done_)
    throw std::logic_error("backward already ran on this tape");
  if (nodes_[loss.id].value.numel() != 1)
    throw std::invalid_argument(
        "backward: loss must be scalar, got shape " +
        nodes_[loss.id].value.shape().str());
  backward_done_ = true;
  grad_buf(loss.id)[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad_alloc && n.backward) n.backward();
  }
}

template <typename T>
Var Tape<T>::conv3d(Var x, Var w, const ConvGeom& g) {
  check_conv_shapes(value(x).shape(), value(w).shape(), g);
  Tensor<T> y;
  conv3d_forward(value(x), value(w), g, y);
  const bool req = needs(x) || needs(w);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, x, w, g, out]() {
      conv3d_backward(value(x), value(w), g, nodes_[out.id].grad,
                      needs(x) ? &grad_buf(x.id) : nullptr,
                      needs(w) ? &grad_buf(w.id) : nullptr);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::conv_spatial2d(Var x, Var w, int stride_s, int pad_s) {
  const Shape5& ws = value(w).shape();
  if (ws.t != 1)
    throw std::invalid_argument("conv_spatial2d: kernel " + ws.str() +
                                " must have temporal extent 1");
  if (ws.h != ws.w || ws.h % 2 == 0)
    throw std::invalid_argument("conv_spatial2d: kernel " + ws.str() +
                                " must be square with odd extent");
  return conv3d(x, w, ConvGeom{1, ws.h, ws.w, 1, stride_s, 0, pad_s});
}

template <typename T>
Var Tape<T>::conv_pointwise(Var x, Var w) {
  const Shape5& ws = value(w).shape();
  if (ws.t != 1 || ws.h != 1 || ws.w != 1)
    throw std::invalid_argument("conv_pointwise: kernel " + ws.str() +
                                " must be (Cout,Cin,1,1,1)");
  return conv3d(x, w, ConvGeom{});
}

template <typename T>
Var Tape<T>::conv_temporal1d(Var x, Var w, int stride_t, int pad_t) {
  const Shape5& ws = value(w).shape();
  if (ws.h != 1 || ws.w != 1)
    throw std::invalid_argument("conv_temporal1d: kernel " + ws.str() +
                                " must be (Cout,Cin,n,1,1)");
  return conv3d(x, w, ConvGeom{ws.t, 1, 1, stride_t, 1, pad_t, 0});
}

template <typename T>
Var Tape<T>::rcu_scan(Var s, Var whh, Var h0) {
  Tensor<T> h;
  rcu_scan_forward(value(s), value(whh), value(h0), h);
  const bool req = needs(s) || needs(whh) || needs(h0);
  Var out = push(std::move(h), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, s, whh, h0, out]() {
      rcu_scan_backward(nodes_[out.id].value, value(whh), value(h0),
                        nodes_[out.id].grad,
                        needs(s) ? &grad_buf(s.id) : nullptr,
                        needs(whh) ? &grad_buf(whh.id) : nullptr,
                        needs(h0) ? &grad_buf(h0.id) : nullptr);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::batchnorm(Var x, Var gamma, Var beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, T eps, T momentum, BnMode mode) {
  const int C = value(x).shape().c;
  Tensor<T> y;
  auto saved_mean = std::make_shared<Tensor<T>>(Shape5{1, C, 1, 1, 1});
  auto saved_invstd = std::make_shared<Tensor<T>>(Shape5{1, C, 1, 1, 1});
  batchnorm_forward(value(x), value(gamma), value(beta), running_mean,
                    running_var, eps, momentum, mode, y, saved_mean.get(),
                    saved_invstd.get());
  const bool req = needs(x) || needs(gamma) || needs(beta);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, x, gamma, beta, mode, saved_mean,
                               saved_invstd, out]() {
      batchnorm_backward(value(x), value(gamma), *saved_mean, *saved_invstd,
                         mode, nodes_[out.id].grad,
                         needs(x) ? &grad_buf(x.id) : nullptr,
                         needs(gamma) ? &grad_buf(gamma.id) : nullptr,
                         needs(beta) ? &grad_buf(beta.id) : nullptr);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Tensor<T> y;
  relu_forward(value(x), y);
  const bool req = needs(x);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, x, out]() {
      relu_backward(value(x), nodes_[out.id].grad, grad_buf(x.id));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  Tensor<T> y;
  add_forward(value(a), value(b), y);
  const bool req = needs(a) || needs(b);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, a, b, out]() {
      const Tensor<T>& g = nodes_[out.id].grad;
      if (needs(a)) {
        Tensor<T>& ga = grad_buf(a.id);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (needs(b)) {
        Tensor<T>& gb = grad_buf(b.id);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::scale(Var x, T c) {
  Tensor<T> y(value(x).shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = c * value(x)[i];
  const bool req = needs(x);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, x, c, out]() {
      const Tensor<T>& g = nodes_[out.id].grad;
      Tensor<T>& gx = grad_buf(x.id);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += c * g[i];
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::spatial_avg_pool(Var x) {
  Tensor<T> y;
  spatial_avg_pool_forward(value(x), y);
  const bool req = needs(x);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    const Shape5 xs = value(x).shape();
    nodes_[out.id].backward = [this, x, xs, out]() {
      spatial_avg_pool_backward(xs, nodes_[out.id].grad, grad_buf(x.id));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::temporal_mean(Var x) {
  Tensor<T> y;
  temporal_mean_forward(value(x), y);
  const bool req = needs(x);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    const Shape5 xs = value(x).shape();
    nodes_[out.id].backward = [this, x, xs, out]() {
      temporal_mean_backward(xs, nodes_[out.id].grad, grad_buf(x.id));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::sum_all(Var x) {
  Tensor<T> y(Shape5{});
  T acc = T(0);
  for (std::size_t i = 0; i < value(x).numel(); ++i) acc += value(x)[i];
  y[0] = acc;
  const bool req = needs(x);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, x, out]() {
      const T g = nodes_[out.id].grad[0];
      Tensor<T>& gx = grad_buf(x.id);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::cross_entropy(Var scores, const std::vector<int>& labels) {
  const Shape5& s = value(scores).shape();
  if (s.t != 1 || s.h != 1 || s.w != 1)
    throw std::invalid_argument("cross_entropy: scores must be (B,C,1,1,1), got " +
                                s.str());
  if (static_cast<int>(labels.size()) != s.b)
    throw std::invalid_argument("cross_entropy: " +
                                std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(s.b));
  for (int l : labels)
    if (l < 0 || l >= s.c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                  " out of range [0," + std::to_string(s.c) +
                                  ")");
  const Tensor<T>& z = value(scores);
  // softmax probabilities, saved for the backward pass
  auto probs = std::make_shared<Tensor<T>>(z.shape());
  T loss = T(0);
  for (int b = 0; b < s.b; ++b) {
    const T* row = z.data() + static_cast<std::size_t>(b) * s.c;
    T mx = row[0];
    for (int c = 1; c < s.c; ++c) mx = std::max(mx, row[c]);
    T denom = T(0);
    for (int c = 0; c < s.c; ++c) denom += std::exp(row[c] - mx);
    const T log_denom = std::log(denom);
    for (int c = 0; c < s.c; ++c)
      (*probs)[static_cast<std::size_t>(b) * s.c + c] =
          std::exp(row[c] - mx) / denom;
    loss += log_denom - (row[labels[b]] - mx);
  }
  loss /= static_cast<T>(s.b);
  Tensor<T> y(Shape5{});
  y[0] = loss;
  const bool req = needs(scores);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    nodes_[out.id].backward = [this, scores, labels, probs, s, out]() {
      const T g = nodes_[out.id].grad[0] / static_cast<T>(s.b);
      Tensor<T>& gs = grad_buf(scores.id);
      for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
          const std::size_t i = static_cast<std::size_t>(b) * s.c + c;
          gs[i] += g * ((*probs)[i] - (labels[b] == c ? T(1) : T(0)));
        }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::bce_multilabel(Var logits, const Tensor<T>& mask) {
  if (value(logits).shape() != mask.shape())
    throw std::invalid_argument("bce: logits " + value(logits).shape().str() +
                                " vs mask " + mask.shape().str());
  const Tensor<T>& z = value(logits);
  const std::size_t n = z.numel();
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    // softplus(z) - z*y, computed stably
    const T zi = z[i];
    loss += std::max(zi, T(0)) + std::log1p(std::exp(-std::abs(zi))) -
            zi * mask[i];
  }
  loss /= static_cast<T>(n);
  Tensor<T> y(Shape5{});
  y[0] = loss;
  const bool req = needs(logits);
  Var out = push(std::move(y), req, nullptr);
  if (req) {
    auto m = std::make_shared<Tensor<T>>(mask);
    nodes_[out.id].backward = [this, logits, m, n, out]() {
      const T g = nodes_[out.id].grad[0] / static_cast<T>(n);
      const Tensor<T>& z = value(logits);
      Tensor<T>& gz = grad_buf(logits.id);
      for (std::size_t i = 0; i < n; ++i) {
        const T sig = T(1) / (T(1) + std::exp(-z[i]));
        gz[i] += g * (sig - (*m)[i]);
      }
    };
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace rcn
