#pragma once

#include <functional>
#include <vector>

#include "rcn/kernels.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

// Handle to a node on a tape. Plain index; the owning tape is always passed
// alongside.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append nodes in execution order, which is a
// topological order by construction, so backward() is a single reverse
// sweep. One backward pass per tape.
template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value, bool requires_grad);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  Tensor<T>& value(Var v) { return nodes_[v.id].value; }
  const Tensor<T>& grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once. loss must be scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // --- differentiable operations ---------------------------------------

  Var conv3d(Var x, Var w, const ConvGeom& g);
  // (1, d, d) kernel applied frame by frame; d odd.
  Var conv_spatial2d(Var x, Var w, int stride_s, int pad_s);
  // (1, 1, 1) kernel: channel mixing at every site.
  Var conv_pointwise(Var x, Var w);
  // (n, 1, 1) kernel along time.
  Var conv_temporal1d(Var x, Var w, int stride_t, int pad_t);
  // h[t] = whh . h[t-1] + s[t]; h0 is the caller-supplied initial state.
  Var rcu_scan(Var s, Var whh, Var h0);
  Var batchnorm(Var x, Var gamma, Var beta, Tensor<T>& running_mean,
                Tensor<T>& running_var, T eps, T momentum, BnMode mode);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var scale(Var x, T c);
  Var spatial_avg_pool(Var x);
  Var temporal_mean(Var x);
  Var sum_all(Var x);
  // Mean over the batch of -log softmax at the true class. Scores (B,C,1,1,1).
  Var cross_entropy(Var scores, const std::vector<int>& labels);
  // Mean elementwise binary cross-entropy on sigmoid(logits) vs a 0/1 mask.
  Var bce_multilabel(Var logits, const Tensor<T>& mask);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void()> backward;
  };

  Var push(Tensor<T> value, bool requires_grad, std::function<void()> bw);
  Tensor<T>& grad_buf(int id);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace rcn
