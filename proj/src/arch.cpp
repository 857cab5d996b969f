#include "rcn/arch.hpp"

#include <algorithm>
#include <stdexcept>

namespace rcn {

ArchPlan arch_plan(const ArchSpec& spec) {
  ArchPlan p;
  const bool dense = spec.dense_time || spec.variant == Variant::kRcn;
  auto st = [&](int s) { return dense ? 1 : s; };
  if (spec.backbone == "tiny") {
    p.conv1_width = 8;
    p.stages = {{"res2", 8, 1, 1, 1}, {"res3", 16, 1, 2, st(2)}};
  } else if (spec.backbone == "resnet18" || spec.backbone == "resnet34") {
    const bool r34 = spec.backbone == "resnet34";
    p.conv1_width = 64;
    p.stages = {{"res2", 64, r34 ? 3 : 2, 1, 1},
                {"res3", 128, r34 ? 4 : 2, 2, st(2)},
                {"res4", 256, r34 ? 6 : 2, 2, st(2)},
                {"res5", 512, r34 ? 3 : 2, 2, st(2)}};
  } else if (spec.backbone == "resnet50") {
    p.conv1_width = 64;
    p.bottleneck = true;
    p.expansion = 4;
    p.stages = {{"res2", 64, 3, 1, 1},
                {"res3", 128, 4, 2, st(2)},
                {"res4", 256, 6, 2, st(2)},
                {"res5", 512, 3, 2, st(2)}};
  } else {
    throw std::invalid_argument("unsupported backbone '" + spec.backbone +
                                "'");
  }
  return p;
}

template <typename T>
Model<T> build_model(const ArchSpec& spec) {
  if (spec.num_classes < 2)
    throw std::invalid_argument("num_classes must be >= 2");
  const ArchPlan plan = arch_plan(spec);
  Model<T> m;
  m.spec = spec;
  m.conv1 = make_unit<T>(spec.variant, spec.in_channels, plan.conv1_width,
                         plan.conv1_n, plan.conv1_d, plan.conv1_stride_t,
                         plan.conv1_stride_s);
  m.bn1 = BatchNorm<T>(plan.conv1_width);
  int cin = plan.conv1_width;
  for (const StagePlan& sp : plan.stages) {
    std::vector<Block<T>> blocks;
    for (int i = 0; i < sp.blocks; ++i) {
      const int st = i == 0 ? sp.stride_t : 1;
      const int ss = i == 0 ? sp.stride_s : 1;
      const int cout = sp.width * plan.expansion;
      if (plan.bottleneck)
        blocks.push_back(
            make_bottleneck_block<T>(spec.variant, cin, sp.width, cout, 3, 3,
                                     st, ss));
      else
        blocks.push_back(
            make_basic_block<T>(spec.variant, cin, cout, 3, 3, st, ss));
      cin = cout;
    }
    m.stages.push_back(std::move(blocks));
  }
  m.classifier = Tensor<T>(Shape5{spec.num_classes, cin, 1, 1, 1});
  return m;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
  std::vector<ParamRef<T>> out;
  unit_params(conv1, "conv1", out);
  out.push_back({"bn1.gamma", &bn1.gamma, ParamKind::kBnGamma});
  out.push_back({"bn1.beta", &bn1.beta, ParamKind::kBnBeta});
  out.push_back({"bn1.running_mean", &bn1.running_mean,
                 ParamKind::kBnRunningMean});
  out.push_back({"bn1.running_var", &bn1.running_var,
                 ParamKind::kBnRunningVar});
  const ArchPlan plan = arch_plan(spec);
  for (std::size_t s = 0; s < stages.size(); ++s)
    for (std::size_t b = 0; b < stages[s].size(); ++b)
      block_params(stages[s][b],
                   plan.stages[s].name + "." + std::to_string(b), out);
  out.push_back({"classifier.w", &classifier, ParamKind::kConvKernel});
  return out;
}

namespace {

template <typename T>
Tensor<T> bn_fwd(BatchNorm<T>& bn, const Tensor<T>& x, BnMode mode) {
  Tensor<T> y;
  batchnorm_forward<T>(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var,
                    bn.eps, bn.momentum, mode, y, nullptr, nullptr);
  return y;
}

}  // namespace

template <typename T>
Tensor<T> forward_scores(Model<T>& m, const Tensor<T>& clip, BnMode mode,
                         ForwardTrace* trace) {
  if (clip.shape().c != m.spec.in_channels)
    throw std::invalid_argument(
        "forward_clip: clip " + clip.shape().str() + " must have " +
        std::to_string(m.spec.in_channels) + " channels");
  Tensor<T> x = unit_forward(m.conv1, clip, mode);
  x = bn_fwd(m.bn1, x, mode);
  Tensor<T> a;
  relu_forward(x, a);
  x = std::move(a);
  if (trace) trace->stages.emplace_back("conv1", x.shape());
  const ArchPlan plan = arch_plan(m.spec);
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (auto& blk : m.stages[s]) x = block_forward(blk, x, mode);
    if (trace) trace->stages.emplace_back(plan.stages[s].name, x.shape());
  }
  Tensor<T> pooled;
  spatial_avg_pool_forward(x, pooled);
  if (trace) trace->stages.emplace_back("pool", pooled.shape());
  Tensor<T> scores;
  conv3d_forward(pooled, m.classifier, ConvGeom{}, scores);
  if (trace) trace->stages.emplace_back("convC", scores.shape());
  return scores;
}

template <typename T>
std::vector<ScoreSequence<T>> forward_clip(Model<T>& m, const Tensor<T>& clip,
                                           BnMode mode, ForwardTrace* trace) {
  Tensor<T> scores = forward_scores(m, clip, mode, trace);
  const Shape5& ss = scores.shape();
  std::vector<ScoreSequence<T>> out(ss.b);
  for (int b = 0; b < ss.b; ++b) {
    ScoreSequence<T>& sq = out[b];
    sq.frames = ss.t;
    sq.classes = ss.c;
    sq.per_frame.resize(static_cast<std::size_t>(ss.t) * ss.c);
    sq.video.assign(ss.c, T(0));
    for (int t = 0; t < ss.t; ++t)
      for (int c = 0; c < ss.c; ++c) {
        const T v = scores.at(b, c, t, 0, 0);
        sq.per_frame[static_cast<std::size_t>(t) * ss.c + c] = v;
        sq.video[c] += v;
      }
    for (int c = 0; c < ss.c; ++c) sq.video[c] /= static_cast<T>(ss.t);
  }
  return out;
}

template <typename T>
int classify_prefix(const ScoreSequence<T>& s, int upto) {
  const int rows = (upto <= 0 || upto > s.frames) ? s.frames : upto;
  std::vector<T> acc(s.classes, T(0));
  for (int t = 0; t < rows; ++t)
    for (int c = 0; c < s.classes; ++c) acc[c] += s.at(t, c);
  int best = 0;
  for (int c = 1; c < s.classes; ++c)
    if (acc[c] > acc[best]) best = c;
  return best;
}

// ---- streaming ---------------------------------------------------------

namespace {

// Walks the model layer by layer for one frame, reading and writing the
// hidden bank in traversal order. Shared by state construction (frame empty,
// shapes only) and the actual step.
template <typename T>
struct StreamWalk {
  Model<T>& m;
  std::vector<Tensor<T>>* bank;
  std::size_t next = 0;

  Tensor<T> unit_step(Unit<T>& u, const Tensor<T>& x) {
    auto& rcu = std::get<RcuParams<T>>(u);  // rcn-only streaming
    Tensor<T>& h = (*bank)[next++];
    Tensor<T> out = rcu_step(x, h, rcu);
    h = out;
    return out;
  }

  Tensor<T> block_step(Block<T>& blk, const Tensor<T>& x) {
    if (auto* b = std::get_if<BasicBlock<T>>(&blk)) {
      Tensor<T> y = unit_step(b->conv_a, x);
      y = bn_fwd(b->bn_a, y, BnMode::kEval);
      Tensor<T> a;
      relu_forward(y, a);
      y = unit_step(b->conv_b, a);
      y = bn_fwd(b->bn_b, y, BnMode::kEval);
      Tensor<T> skip = x;
      if (b->proj_w) {
        Tensor<T> pj;
        conv3d_forward(x, *b->proj_w,
                       ConvGeom{1, 1, 1, b->proj_stride_t, b->proj_stride_s, 0,
                                0},
                       pj);
        skip = bn_fwd(*b->proj_bn, pj, BnMode::kEval);
      }
      Tensor<T> sum;
      add_forward(y, skip, sum);
      Tensor<T> out;
      relu_forward(sum, out);
      return out;
    }
    auto& b = std::get<BottleneckBlock<T>>(blk);
    Tensor<T> y;
    conv3d_forward(x, b.w_reduce, ConvGeom{}, y);
    y = bn_fwd(b.bn_reduce, y, BnMode::kEval);
    Tensor<T> a;
    relu_forward(y, a);
    y = unit_step(b.conv_mid, a);
    y = bn_fwd(b.bn_mid, y, BnMode::kEval);
    relu_forward(y, a);
    conv3d_forward(a, b.w_expand, ConvGeom{}, y);
    y = bn_fwd(b.bn_expand, y, BnMode::kEval);
    Tensor<T> skip = x;
    if (b.proj_w) {
      Tensor<T> pj;
      conv3d_forward(x, *b.proj_w,
                     ConvGeom{1, 1, 1, b.proj_stride_t, b.proj_stride_s, 0, 0},
                     pj);
      skip = bn_fwd(*b.proj_bn, pj, BnMode::kEval);
    }
    Tensor<T> sum;
    add_forward(y, skip, sum);
    Tensor<T> out;
    relu_forward(sum, out);
    return out;
  }

  Tensor<T> run(const Tensor<T>& frame) {
    Tensor<T> x = unit_step(m.conv1, frame);
    x = bn_fwd(m.bn1, x, BnMode::kEval);
    Tensor<T> a;
    relu_forward(x, a);
    x = std::move(a);
    for (auto& stage : m.stages)
      for (auto& blk : stage) x = block_step(blk, x);
    Tensor<T> pooled;
    spatial_avg_pool_forward(x, pooled);
    Tensor<T> scores;
    conv3d_forward(pooled, m.classifier, ConvGeom{}, scores);
    return scores;
  }
};

// Collects zero hidden states by walking shapes, mirroring StreamWalk.
template <typename T>
struct HiddenPlanWalk {
  std::vector<Tensor<T>>* bank;

  Shape5 unit_step(const Unit<T>& u, const Shape5& in) {
    const auto& rcu = std::get<RcuParams<T>>(u);
    Shape5 out = unit_out_shape(u, in);
    bank->push_back(zero_hidden(rcu, in));
    return out;
  }

  Shape5 block_step(const Block<T>& blk, const Shape5& in) {
    if (const auto* b = std::get_if<BasicBlock<T>>(&blk)) {
      Shape5 s = unit_step(b->conv_a, in);
      return unit_step(b->conv_b, s);
    }
    const auto& b = std::get<BottleneckBlock<T>>(blk);
    Shape5 s = in;
    s.c = b.w_reduce.shape().b;
    s = unit_step(b.conv_mid, s);
    s.c = b.w_expand.shape().b;
    return s;
  }
};

}  // namespace

template <typename T>
StreamState<T> init_stream_state(const Model<T>& m, int batch, int height,
                                 int width) {
  if (m.spec.variant != Variant::kRcn)
    throw std::invalid_argument(
        "streaming is defined only for the rcn variant; " +
        std::string(variant_name(m.spec.variant)) +
        " strides time and must run in clip mode");
  StreamState<T> st;
  st.batch = batch;
  st.score_sum.assign(static_cast<std::size_t>(batch) * m.spec.num_classes,
                      T(0));
  HiddenPlanWalk<T> walk{&st.hidden};
  Shape5 x{batch, m.spec.in_channels, 1, height, width};
  x = walk.unit_step(m.conv1, x);
  for (const auto& stage : m.stages)
    for (const auto& blk : stage) x = walk.block_step(blk, x);
  return st;
}

template <typename T>
Tensor<T> stream_step(Model<T>& m, StreamState<T>& s, const Tensor<T>& frame) {
  if (m.spec.variant != Variant::kRcn)
    throw std::invalid_argument(
        "stream_step rejected: variant " +
        std::string(variant_name(m.spec.variant)) +
        " is anti-causal / time-strided; streaming is undefined for it");
  if (frame.shape().t != 1)
    throw std::invalid_argument("stream_step: expected one frame, got " +
                                frame.shape().str());
  if (frame.shape().b != s.batch)
    throw std::invalid_argument("stream_step: frame batch " +
                                frame.shape().str() +
                                " does not match stream state batch " +
                                std::to_string(s.batch));
  StreamWalk<T> walk{m, &s.hidden};
  Tensor<T> scores = walk.run(frame);
  for (int b = 0; b < s.batch; ++b)
    for (int c = 0; c < m.spec.num_classes; ++c)
      s.score_sum[static_cast<std::size_t>(b) * m.spec.num_classes + c] +=
          scores.at(b, c, 0, 0, 0);
  s.frames_seen += 1;
  return scores;
}

template <typename T>
std::vector<T> stream_video_scores(const StreamState<T>& s) {
  std::vector<T> out = s.score_sum;
  if (s.frames_seen > 0)
    for (T& v : out) v /= static_cast<T>(s.frames_seen);
  return out;
}

template <typename T>
std::vector<ScoreSequence<T>> unroll_eval(Model<T>& m, const Tensor<T>& video) {
  const Shape5& vs = video.shape();
  if (m.spec.variant != Variant::kRcn)
    return forward_clip(m, video, BnMode::kEval);

  StreamState<T> st = init_stream_state(m, vs.b, vs.h, vs.w);
  std::vector<ScoreSequence<T>> out(vs.b);
  for (int b = 0; b < vs.b; ++b) {
    out[b].frames = vs.t;
    out[b].classes = m.spec.num_classes;
    out[b].per_frame.resize(static_cast<std::size_t>(vs.t) *
                            m.spec.num_classes);
    out[b].video.assign(m.spec.num_classes, T(0));
  }
  Tensor<T> frame(Shape5{vs.b, vs.c, 1, vs.h, vs.w});
  for (int t = 0; t < vs.t; ++t) {
    for (int b = 0; b < vs.b; ++b)
      for (int c = 0; c < vs.c; ++c)
        for (int h = 0; h < vs.h; ++h)
          for (int w = 0; w < vs.w; ++w)
            frame.at(b, c, 0, h, w) = video.at(b, c, t, h, w);
    Tensor<T> scores = stream_step(m, st, frame);
    for (int b = 0; b < vs.b; ++b)
      for (int c = 0; c < m.spec.num_classes; ++c)
        out[b].per_frame[static_cast<std::size_t>(t) * m.spec.num_classes +
                         c] = scores.at(b, c, 0, 0, 0);
  }
  for (int b = 0; b < vs.b; ++b) {
    std::vector<T> vid = stream_video_scores(st);
    for (int c = 0; c < m.spec.num_classes; ++c)
      out[b].video[c] =
          vid[static_cast<std::size_t>(b) * m.spec.num_classes + c];
  }
  return out;
}

// ---- tape forward ------------------------------------------------------

template <typename T>
Var TapeBinding<T>::bind(Tensor<T>& t) {
  auto it = index_.find(&t);
  if (it != index_.end()) return it->second;
  Var v = tape_->leaf(t, true);
  index_.emplace(&t, v);
  return v;
}

template <typename T>
Var TapeBinding<T>::lookup(const Tensor<T>& t) const {
  auto it = index_.find(&t);
  if (it == index_.end())
    throw std::logic_error("parameter was never bound to the tape");
  return it->second;
}

template <typename T>
bool TapeBinding<T>::has(const Tensor<T>& t) const {
  return index_.count(&t) != 0;
}

namespace {

template <typename T>
Var bn_tape(Tape<T>& tape, TapeBinding<T>& bind, BatchNorm<T>& bn, Var x,
            BnMode mode) {
  return tape.batchnorm(x, bind.bind(bn.gamma), bind.bind(bn.beta),
                        bn.running_mean, bn.running_var, bn.eps, bn.momentum,
                        mode);
}

template <typename T>
Var unit_tape(Tape<T>& tape, TapeBinding<T>& bind, Unit<T>& u, Var x,
              BnMode mode) {
  if (auto* r = std::get_if<RcuParams<T>>(&u)) {
    Tensor<T> h0 = zero_hidden(*r, tape.value(x).shape());
    Var h0v = tape.leaf(std::move(h0), false);
    return rcu_forward(tape, x, bind.bind(r->w_xh), bind.bind(r->w_hh), h0v,
                       r->stride_s, r->pad_s);
  }
  if (auto* c = std::get_if<TemporalConv3dParams<T>>(&u))
    return tape.conv3d(x, bind.bind(c->w), c->geom());
  auto& f = std::get<FactorizedConvParams<T>>(u);
  Var mid = tape.conv_spatial2d(x, bind.bind(f.w_spatial), f.stride_s,
                                f.pad_s);
  mid = bn_tape(tape, bind, f.bn_mid, mid, mode);
  mid = tape.relu(mid);
  return tape.conv_temporal1d(mid, bind.bind(f.w_temporal), f.stride_t,
                              f.pad_t);
}

template <typename T>
Var block_tape(Tape<T>& tape, TapeBinding<T>& bind, Block<T>& blk, Var x,
               BnMode mode) {
  auto skip = [&](auto& b) {
    if (!b.proj_w) return x;
    Var pj = tape.conv3d(x, bind.bind(*b.proj_w),
                         ConvGeom{1, 1, 1, b.proj_stride_t, b.proj_stride_s, 0,
                                  0});
    return bn_tape(tape, bind, *b.proj_bn, pj, mode);
  };
  if (auto* b = std::get_if<BasicBlock<T>>(&blk)) {
    Var y = unit_tape(tape, bind, b->conv_a, x, mode);
    y = bn_tape(tape, bind, b->bn_a, y, mode);
    y = tape.relu(y);
    y = unit_tape(tape, bind, b->conv_b, y, mode);
    y = bn_tape(tape, bind, b->bn_b, y, mode);
    return tape.relu(tape.add(y, skip(*b)));
  }
  auto& b = std::get<BottleneckBlock<T>>(blk);
  Var y = tape.conv_pointwise(x, bind.bind(b.w_reduce));
  y = bn_tape(tape, bind, b.bn_reduce, y, mode);
  y = tape.relu(y);
  y = unit_tape(tape, bind, b.conv_mid, y, mode);
  y = bn_tape(tape, bind, b.bn_mid, y, mode);
  y = tape.relu(y);
  y = tape.conv_pointwise(y, bind.bind(b.w_expand));
  y = bn_tape(tape, bind, b.bn_expand, y, mode);
  return tape.relu(tape.add(y, skip(b)));
}

}  // namespace

template <typename T>
Var model_forward_tape(Tape<T>& tape, TapeBinding<T>& bind, Model<T>& m,
                       Var clip, BnMode mode) {
  Var x = unit_tape(tape, bind, m.conv1, clip, mode);
  x = bn_tape(tape, bind, m.bn1, x, mode);
  x = tape.relu(x);
  for (auto& stage : m.stages)
    for (auto& blk : stage) x = block_tape(tape, bind, blk, x, mode);
  x = tape.spatial_avg_pool(x);
  return tape.conv_pointwise(x, bind.bind(m.classifier));
}

std::vector<std::pair<std::string, Shape5>> trace_shapes(const ArchSpec& spec,
                                                         const Shape5& input) {
  const ArchPlan plan = arch_plan(spec);
  std::vector<std::pair<std::string, Shape5>> out;
  // conv1 geometry is variant-independent in its output shape
  Shape5 x = conv_out_shape(
      input, plan.conv1_width,
      ConvGeom{plan.conv1_n, plan.conv1_d, plan.conv1_d,
               spec.variant == Variant::kRcn ? 1 : plan.conv1_stride_t,
               plan.conv1_stride_s, plan.conv1_n / 2, plan.conv1_d / 2});
  out.emplace_back("conv1", x);
  for (const StagePlan& sp : plan.stages) {
    const int cout = sp.width * plan.expansion;
    const int st = spec.variant == Variant::kRcn ? 1 : sp.stride_t;
    x = Shape5{x.b, cout, conv_out_extent(x.t, 3, st, 1),
               conv_out_extent(x.h, 3, sp.stride_s, 1),
               conv_out_extent(x.w, 3, sp.stride_s, 1)};
    out.emplace_back(sp.name, x);
  }
  out.emplace_back("pool", Shape5{x.b, x.c, x.t, 1, 1});
  out.emplace_back("convC", Shape5{x.b, spec.num_classes, x.t, 1, 1});
  out.emplace_back("mean", Shape5{x.b, spec.num_classes, 1, 1, 1});
  return out;
}

#define RCN_INSTANTIATE_ARCH(T)                                               \
  template struct Model<T>;                                                   \
  template Model<T> build_model<T>(const ArchSpec&);                          \
  template std::vector<ScoreSequence<T>> forward_clip<T>(                     \
      Model<T>&, const Tensor<T>&, BnMode, ForwardTrace*);                    \
  template Tensor<T> forward_scores<T>(Model<T>&, const Tensor<T>&, BnMode,   \
                                       ForwardTrace*);                        \
  template int classify_prefix<T>(const ScoreSequence<T>&, int);              \
  template StreamState<T> init_stream_state<T>(const Model<T>&, int, int,     \
                                               int);                          \
  template Tensor<T> stream_step<T>(Model<T>&, StreamState<T>&,               \
                                    const Tensor<T>&);                        \
  template std::vector<T> stream_video_scores<T>(const StreamState<T>&);      \
  template std::vector<ScoreSequence<T>> unroll_eval<T>(Model<T>&,            \
                                                        const Tensor<T>&);    \
  template class TapeBinding<T>;                                              \
  template Var model_forward_tape<T>(Tape<T>&, TapeBinding<T>&, Model<T>&,    \
                                     Var, BnMode);

RCN_INSTANTIATE_ARCH(float)
RCN_INSTANTIATE_ARCH(double)

}  // namespace rcn
