#include "rcn/train.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace rcn {

double learning_rate(const TrainConfig& cfg, long iter) {
  double lr = cfg.lr0;
  for (long drop : cfg.lr_drop_steps)
    if (iter >= drop) lr /= cfg.drop_factor;
  return lr;
}

namespace {

bool learnable(ParamKind k) {
  return k == ParamKind::kConvKernel || k == ParamKind::kHiddenKernel ||
         k == ParamKind::kBnGamma || k == ParamKind::kBnBeta;
}

}  // namespace

template <typename T>
SgdState<T> make_sgd_state(Model<T>& m) {
  SgdState<T> st;
  for (ParamRef<T>& p : m.params())
    if (learnable(p.kind)) st.velocity.emplace_back(p.tensor->shape());
  return st;
}

template <typename T>
void sgd_step(Model<T>& m, const std::vector<Tensor<T>>& grads,
              SgdState<T>& state, const TrainConfig& cfg, long iter) {
  const T lr = static_cast<T>(learning_rate(cfg, iter));
  const T mu = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  std::size_t k = 0;
  for (ParamRef<T>& p : m.params()) {
    if (!learnable(p.kind)) continue;
    if (k >= grads.size())
      throw std::invalid_argument("sgd_step: gradient list shorter than "
                                  "parameter list");
    Tensor<T>& theta = *p.tensor;
    const Tensor<T>& g = grads[k];
    Tensor<T>& v = state.velocity[k];
    if (g.shape() != theta.shape())
      throw std::invalid_argument("sgd_step: gradient shape " +
                                  g.shape().str() + " for parameter " +
                                  p.name + " " + theta.shape().str());
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
      theta[i] -= lr * v[i];
    }
    ++k;
  }
  if (k != grads.size())
    throw std::invalid_argument("sgd_step: gradient list longer than "
                                "parameter list");
}

void save_metrics_csv(const std::vector<MetricRow>& log,
                      const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "iter,lr,loss,acc\n";
  for (const MetricRow& r : log) {
    os << r.iter << "," << r.lr << "," << r.loss << ",";
    if (r.acc >= 0) os << r.acc;
    os << "\n";
  }
}

template <typename T>
long TrainResult<T>::first_iter_at(double acc) const {
  for (const MetricRow& r : log)
    if (r.acc >= acc) return r.iter;
  return -1;
}

template <typename T>
double evaluate_accuracy(Model<T>& m, const Dataset<T>& ds,
                         const TrainConfig& cfg) {
  if (ds.clips.empty()) return 0.0;
  int correct = 0;
  for (const SyntheticClip<T>& clip : ds.clips) {
    SyntheticClip<T> c = center_crop(clip, ds.task, cfg.clip_t, cfg.crop_h,
                                     cfg.crop_w);
    auto seqs = forward_clip(m, c.frames, BnMode::kEval);
    if (classify_prefix(seqs[0]) == c.label) ++correct;
  }
  return static_cast<double>(correct) / ds.clips.size();
}

template <typename T>
double train_step(Model<T>& m, const Tensor<T>& batch,
                  const std::vector<int>& labels, const Tensor<T>* dense_mask,
                  SgdState<T>& state, const TrainConfig& cfg, long iter) {
  Tape<T> tape;
  TapeBinding<T> bind(tape);
  Var x = tape.leaf(batch, false);
  const BnMode mode = cfg.freeze_bn ? BnMode::kEval : BnMode::kTrain;
  Var scores = model_forward_tape(tape, bind, m, x, mode);
  Var loss;
  if (dense_mask) {
    loss = tape.bce_multilabel(scores, *dense_mask);
  } else {
    Var video = tape.temporal_mean(scores);
    loss = tape.cross_entropy(video, labels);
  }
  const double loss_v = static_cast<double>(tape.value(loss)[0]);
  if (!std::isfinite(loss_v))
    throw std::runtime_error("training aborted: loss is not finite at iter " +
                             std::to_string(iter));
  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  for (ParamRef<T>& p : m.params()) {
    if (!learnable(p.kind)) continue;
    Tensor<T> g = tape.grad(bind.lookup(*p.tensor));
    if (cfg.freeze_hidden && p.kind == ParamKind::kHiddenKernel) g.fill(T(0));
    grads.push_back(std::move(g));
  }
  sgd_step(m, grads, state, cfg, iter);
  return loss_v;
}

template <typename T>
TrainResult<T> train_loop(Model<T>& m, const Dataset<T>& train,
                          const Dataset<T>& val, const TrainConfig& cfg) {
  if (train.clips.empty())
    throw std::invalid_argument("train_loop: empty training set");
  TrainResult<T> res;
  if (cfg.max_iters <= 0) return res;

  SgdState<T> state = make_sgd_state(m);
  Rng sampler(cfg.seed);
  const Shape5& src = train.clips[0].frames.shape();
  Tensor<T> batch(Shape5{cfg.batch, src.c, cfg.clip_t, cfg.crop_h,
                         cfg.crop_w});
  std::vector<int> labels(cfg.batch);
  const bool dense = train.task == Task::kDense;
  Tensor<T> mask;

  for (long iter = 0; iter < cfg.max_iters; ++iter) {
    if (dense)
      mask = Tensor<T>(Shape5{cfg.batch, train.num_classes, cfg.clip_t, 1, 1});
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = sampler.uniform_int(train.clips.size());
      const std::uint64_t aug_seed = sampler.next_u64();
      SyntheticClip<T> c = augment(train.clips[idx], train.task, cfg.clip_t,
                                   cfg.crop_h, cfg.crop_w, aug_seed);
      labels[b] = c.label;
      const std::size_t n = c.frames.numel();
      T* dst = batch.data() + static_cast<std::size_t>(b) * n;
      for (std::size_t i = 0; i < n; ++i) dst[i] = c.frames[i];
      if (dense)
        for (int t = 0; t < cfg.clip_t; ++t)
          for (int cl = 0; cl < train.num_classes; ++cl)
            mask.at(b, cl, t, 0, 0) =
                static_cast<T>(c.mask[static_cast<std::size_t>(t) *
                                          train.num_classes +
                                      cl]);
    }
    const double loss = train_step(m, batch, labels, dense ? &mask : nullptr,
                                   state, cfg, iter);
    MetricRow row;
    row.iter = iter;
    row.lr = learning_rate(cfg, iter);
    row.loss = loss;
    const bool eval_now = !val.clips.empty() &&
                          ((iter + 1) % cfg.eval_interval == 0 ||
                           iter + 1 == cfg.max_iters);
    if (eval_now && !dense) {
      row.acc = evaluate_accuracy(m, val, cfg);
      res.final_acc = row.acc;
    }
    res.log.push_back(row);
    res.iters_run = iter + 1;
    if (row.acc >= 0 && cfg.stop_at_acc >= 0 && row.acc >= cfg.stop_at_acc)
      break;
  }
  return res;
}

template <typename T>
std::vector<T> ten_clip_video_scores(Model<T>& m, const Tensor<T>& video,
                                     int clip_t, int n_clips) {
  const Shape5& vs = video.shape();
  if (vs.t < clip_t)
    throw std::invalid_argument("video shorter than clip length");
  std::vector<T> acc(static_cast<std::size_t>(vs.b) * m.spec.num_classes,
                     T(0));
  for (int k = 0; k < n_clips; ++k) {
    const int last = vs.t - clip_t;
    const int start =
        n_clips == 1 ? 0 : static_cast<int>((static_cast<long>(k) * last) /
                                            (n_clips - 1));
    Tensor<T> clip(Shape5{vs.b, vs.c, clip_t, vs.h, vs.w});
    for (int b = 0; b < vs.b; ++b)
      for (int c = 0; c < vs.c; ++c)
        for (int t = 0; t < clip_t; ++t)
          for (int h = 0; h < vs.h; ++h)
            for (int w = 0; w < vs.w; ++w)
              clip.at(b, c, t, h, w) = video.at(b, c, start + t, h, w);
    auto seqs = forward_clip(m, clip, BnMode::kEval);
    for (int b = 0; b < vs.b; ++b)
      for (int c = 0; c < m.spec.num_classes; ++c)
        acc[static_cast<std::size_t>(b) * m.spec.num_classes + c] +=
            seqs[b].video[c];
  }
  for (T& v : acc) v /= static_cast<T>(n_clips);
  return acc;
}

#define RCN_INSTANTIATE_TRAIN(T)                                              \
  template struct SgdState<T>;                                                \
  template struct TrainResult<T>;                                             \
  template SgdState<T> make_sgd_state<T>(Model<T>&);                          \
  template void sgd_step<T>(Model<T>&, const std::vector<Tensor<T>>&,         \
                            SgdState<T>&, const TrainConfig&, long);          \
  template double evaluate_accuracy<T>(Model<T>&, const Dataset<T>&,          \
                                       const TrainConfig&);                   \
  template double train_step<T>(Model<T>&, const Tensor<T>&,                  \
                                const std::vector<int>&, const Tensor<T>*,    \
                                SgdState<T>&, const TrainConfig&, long);      \
  template TrainResult<T> train_loop<T>(Model<T>&, const Dataset<T>&,         \
                                        const Dataset<T>&,                    \
                                        const TrainConfig&);                  \
  template std::vector<T> ten_clip_video_scores<T>(Model<T>&,                 \
                                                   const Tensor<T>&, int,     \
                                                   int);

RCN_INSTANTIATE_TRAIN(float)
RCN_INSTANTIATE_TRAIN(double)

}  // namespace rcn
