#pragma once

#include <string>
#include <vector>

#include "rcn/arch.hpp"
#include "rcn/dataset.hpp"

namespace rcn {

struct TrainConfig {
  double lr0 = 0.01;
  std::vector<long> lr_drop_steps;  // ascending iteration indices
  double drop_factor = 10.0;
  int batch = 8;
  long max_iters = 1000;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;

  // clip geometry fed to the network (sources are cropped/jittered to this)
  int clip_t = 8, crop_h = 32, crop_w = 32;

  long eval_interval = 100;
  double stop_at_acc = -1.0;  // stop once val accuracy reaches this, if >= 0
  bool freeze_bn = false;     // eval-mode BN during training (fine-tuning)
  bool freeze_hidden = false; // do not update hidden kernels (ablations)
};

double learning_rate(const TrainConfig& cfg, long iter);

// Momentum buffers aligned with the learnable parameters of a model.
template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

template <typename T>
SgdState<T> make_sgd_state(Model<T>& m);

// v = momentum * v + grad + weight_decay * theta;  theta -= lr * v.
// grads must be aligned with the learnable parameters in params() order.
template <typename T>
void sgd_step(Model<T>& m, const std::vector<Tensor<T>>& grads,
              SgdState<T>& state, const TrainConfig& cfg, long iter);

struct MetricRow {
  long iter = 0;
  double lr = 0;
  double loss = 0;
  double acc = -1;  // < 0: no evaluation at this iteration
};

void save_metrics_csv(const std::vector<MetricRow>& log,
                      const std::string& path);

template <typename T>
struct TrainResult {
  std::vector<MetricRow> log;
  long iters_run = 0;
  double final_acc = 0;
  // first logged iteration whose accuracy reached `acc`, or -1
  long first_iter_at(double acc) const;
};

// Video-level accuracy: argmax of the temporal-mean score vs label, clips
// center-cropped to the configured geometry, eval-mode BN.
template <typename T>
double evaluate_accuracy(Model<T>& m, const Dataset<T>& ds,
                         const TrainConfig& cfg);

// augment -> forward -> loss -> backward -> sgd_step, with CSV-able metric
// rows. Aborts with diagnostics if the loss turns NaN.
template <typename T>
TrainResult<T> train_loop(Model<T>& m, const Dataset<T>& train,
                          const Dataset<T>& val, const TrainConfig& cfg);

// One training step on an explicit batch; returns the loss. Exposed for
// tests that drive the loop manually.
template <typename T>
double train_step(Model<T>& m, const Tensor<T>& batch,
                  const std::vector<int>& labels, const Tensor<T>* dense_mask,
                  SgdState<T>& state, const TrainConfig& cfg, long iter);

// Scores for an arbitrary-length video under the ten-regularly-sampled-clips
// protocol: clip scores averaged into one video score vector.
template <typename T>
std::vector<T> ten_clip_video_scores(Model<T>& m, const Tensor<T>& video,
                                     int clip_t, int n_clips = 10);

}  // namespace rcn
