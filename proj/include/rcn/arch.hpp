#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rcn/layers.hpp"

namespace rcn {

// Declarative network description. The backbone fixes per-stage widths and
// block counts; the variant picks the spatiotemporal unit realizing each
// conv. `dense_time` removes the temporal strides of the i3d / 2plus1d
// variants (the dense-prediction configuration); rcn never strides time.
struct ArchSpec {
  std::string backbone = "tiny";  // tiny | resnet18 | resnet34 | resnet50
  Variant variant = Variant::kRcn;
  int num_classes = 4;
  int in_channels = 3;
  bool dense_time = false;

  bool operator==(const ArchSpec& o) const {
    return backbone == o.backbone && variant == o.variant &&
           num_classes == o.num_classes && in_channels == o.in_channels &&
           dense_time == o.dense_time;
  }
};

// Static per-layer description used by build_model and by the analysis
// walkers (shape tracing, parameter/MAC accounting).
struct StagePlan {
  std::string name;  // res2, res3, ...
  int width = 0;     // kernel count (mid width for bottlenecks)
  int blocks = 0;
  int stride_s = 1;
  int stride_t = 1;  // ignored for rcn
};

struct ArchPlan {
  int conv1_width = 64;
  int conv1_d = 7, conv1_n = 3;
  int conv1_stride_s = 2, conv1_stride_t = 1;
  bool bottleneck = false;
  int expansion = 1;  // out = width * expansion
  std::vector<StagePlan> stages;
};

ArchPlan arch_plan(const ArchSpec& spec);

template <typename T>
struct Model {
  ArchSpec spec;
  Unit<T> conv1;
  BatchNorm<T> bn1;
  std::vector<std::vector<Block<T>>> stages;
  Tensor<T> classifier;  // (C, Cfeat, 1, 1, 1) conv, applied per frame

  Variant variant() const { return spec.variant; }
  // Named handles over every parameter tensor, in traversal order.
  std::vector<ParamRef<T>> params();
};

template <typename T>
Model<T> build_model(const ArchSpec& spec);

// Per-frame class scores of one video plus their temporal mean.
template <typename T>
struct ScoreSequence {
  int frames = 0;
  int classes = 0;
  std::vector<T> per_frame;  // frames x classes, row-major
  std::vector<T> video;      // classes

  T at(int t, int c) const { return per_frame[static_cast<std::size_t>(t) * classes + c]; }
};

// argmax of the temporal mean over rows [0, upto) (upto<=0 means all rows).
template <typename T>
int classify_prefix(const ScoreSequence<T>& s, int upto = 0);

struct ForwardTrace {
  std::vector<std::pair<std::string, Shape5>> stages;
};

// Clip-mode inference. Returns one ScoreSequence per batch element. For rcn
// the sequence has one row per input frame; for i3d / 2plus1d it has the
// collapsed temporal extent.
template <typename T>
std::vector<ScoreSequence<T>> forward_clip(Model<T>& m, const Tensor<T>& clip,
                                           BnMode mode,
                                           ForwardTrace* trace = nullptr);

// Raw classifier map (B, C, T', 1, 1); the piece forward_clip wraps.
template <typename T>
Tensor<T> forward_scores(Model<T>& m, const Tensor<T>& clip, BnMode mode,
                         ForwardTrace* trace = nullptr);

// Hidden states of every RCU plus the running video-score accumulator.
template <typename T>
struct StreamState {
  std::vector<Tensor<T>> hidden;  // traversal order
  std::vector<T> score_sum;       // batch x classes
  long frames_seen = 0;
  int batch = 0;
};

template <typename T>
StreamState<T> init_stream_state(const Model<T>& m, int batch, int height,
                                 int width);

// Consumes exactly one frame (B, C, 1, H, W), updates every hidden state and
// the accumulated video score, and returns the frame's class scores
// (B, C, 1, 1, 1). Only the rcn variant streams; BN runs in eval mode.
template <typename T>
Tensor<T> stream_step(Model<T>& m, StreamState<T>& s, const Tensor<T>& frame);

// Mean accumulated video score so far (batch x classes).
template <typename T>
std::vector<T> stream_video_scores(const StreamState<T>& s);

// Whole-video evaluation: rcn streams frame by frame through one unrolled
// pass; the anti-causal variants run the convolutional classifier over the
// full video and average. Eval-mode BN.
template <typename T>
std::vector<ScoreSequence<T>> unroll_eval(Model<T>& m, const Tensor<T>& video);

// ---- tape (training) forward -----------------------------------------

// Maps parameter tensors to tape leaves; one binding per forward pass.
template <typename T>
class TapeBinding {
 public:
  explicit TapeBinding(Tape<T>& tape) : tape_(&tape) {}
  Var bind(Tensor<T>& t);
  Var lookup(const Tensor<T>& t) const;
  bool has(const Tensor<T>& t) const;

 private:
  Tape<T>* tape_;
  std::unordered_map<const Tensor<T>*, Var> index_;
};

// Differentiable forward through the whole network; returns the classifier
// map (B, C, T', 1, 1). BN running stats update in place when mode==kTrain.
template <typename T>
Var model_forward_tape(Tape<T>& tape, TapeBinding<T>& bind, Model<T>& m,
                       Var clip, BnMode mode);

// Analytic shape walk (no arithmetic); used for Table-style reports.
std::vector<std::pair<std::string, Shape5>> trace_shapes(const ArchSpec& spec,
                                                         const Shape5& input);

}  // namespace rcn
