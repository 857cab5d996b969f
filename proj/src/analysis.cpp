#include "rcn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace rcn {

namespace {

long long numelll(const Shape5& s) {
  return static_cast<long long>(s.numel());
}

// Positions of a conv output for one clip (batch b counted in).
long long positions(const Shape5& out) {
  return 1LL * out.b * out.t * out.h * out.w;
}

template <typename T>
struct CostWalk {
  std::vector<CostRow>* rows;

  void conv(const std::string& name, const Tensor<T>& w, const Shape5& out) {
    const Shape5& ks = w.shape();
    // positions * Cout * Cin * kernel taps
    const long long macs =
        positions(out) * 1LL * ks.b * ks.c * ks.t * ks.h * ks.w;
    rows->push_back({name, numelll(ks), macs});
  }

  void bn(const std::string& name, int channels) {
    rows->push_back({name, 2LL * channels, 0});
  }

  Shape5 unit(const std::string& name, const Unit<T>& u, const Shape5& in) {
    if (const auto* r = std::get_if<RcuParams<T>>(&u)) {
      Shape5 out = unit_out_shape(u, in);
      conv(name + ".w_xh", r->w_xh, out);
      conv(name + ".w_hh", r->w_hh, out);
      return out;
    }
    if (const auto* c = std::get_if<TemporalConv3dParams<T>>(&u)) {
      Shape5 out = unit_out_shape(u, in);
      conv(name + ".w", c->w, out);
      return out;
    }
    const auto& f = std::get<FactorizedConvParams<T>>(u);
    const Shape5& ks = f.w_spatial.shape();
    Shape5 mid = conv_out_shape(
        in, ks.b, ConvGeom{1, ks.h, ks.w, 1, f.stride_s, 0, f.pad_s});
    conv(name + ".w_spatial", f.w_spatial, mid);
    bn(name + ".bn_mid", f.middle_planes());
    Shape5 out = conv_out_shape(mid, f.out_channels(),
                                ConvGeom{f.w_temporal.shape().t, 1, 1,
                                         f.stride_t, 1, f.pad_t, 0});
    conv(name + ".w_temporal", f.w_temporal, out);
    return out;
  }

  Shape5 block(const std::string& name, const Block<T>& blk, const Shape5& in) {
    if (const auto* b = std::get_if<BasicBlock<T>>(&blk)) {
      Shape5 s = unit(name + ".conv_a", b->conv_a, in);
      bn(name + ".bn_a", s.c);
      s = unit(name + ".conv_b", b->conv_b, s);
      bn(name + ".bn_b", s.c);
      if (b->proj_w) {
        conv(name + ".proj.w", *b->proj_w, s);
        bn(name + ".proj.bn", s.c);
      }
      return s;
    }
    const auto& b = std::get<BottleneckBlock<T>>(blk);
    Shape5 s = in;
    s.c = b.w_reduce.shape().b;
    conv(name + ".reduce.w", b.w_reduce, s);
    bn(name + ".reduce.bn", s.c);
    s = unit(name + ".mid", b.conv_mid, s);
    bn(name + ".mid_bn", s.c);
    Shape5 out = s;
    out.c = b.w_expand.shape().b;
    conv(name + ".expand.w", b.w_expand, out);
    bn(name + ".expand.bn", out.c);
    if (b.proj_w) {
      conv(name + ".proj.w", *b.proj_w, out);
      bn(name + ".proj.bn", out.c);
    }
    return out;
  }
};

}  // namespace

template <typename T>
CostReport cost_report(Model<T>& m, const Shape5& input) {
  CostReport r;
  r.backbone = m.spec.backbone;
  r.variant = m.spec.variant;
  r.input = input;
  CostWalk<T> walk{&r.rows};
  Shape5 x = walk.unit("conv1", m.conv1, input);
  walk.bn("bn1", x.c);
  const ArchPlan plan = arch_plan(m.spec);
  for (std::size_t s = 0; s < m.stages.size(); ++s)
    for (std::size_t b = 0; b < m.stages[s].size(); ++b)
      x = walk.block(plan.stages[s].name + "." + std::to_string(b),
                     m.stages[s][b], x);
  Shape5 pooled{x.b, x.c, x.t, 1, 1};
  Shape5 scores{x.b, m.spec.num_classes, x.t, 1, 1};
  walk.conv("classifier.w", m.classifier, scores);
  (void)pooled;
  for (const CostRow& row : r.rows) {
    r.total_params += row.params;
    r.total_macs += row.macs;
  }
  return r;
}

template <typename T>
long long count_params(Model<T>& m) {
  Shape5 probe{1, m.spec.in_channels, 4, 16, 16};
  return cost_report(m, probe).total_params;
}

template <typename T>
long long count_macs(Model<T>& m, const Shape5& input) {
  return cost_report(m, input).total_macs;
}

void cost_report_csv(const CostReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "'");
  os << "# backbone=" << r.backbone << " variant=" << variant_name(r.variant)
     << " input=" << r.input.str() << "\n";
  os << "layer,params,macs\n";
  for (const CostRow& row : r.rows)
    os << row.name << "," << row.params << "," << row.macs << "\n";
  os << "total," << r.total_params << "," << r.total_macs << "\n";
}

FrameInterval temporal_receptive_field(const ArchSpec& spec,
                                       const std::string& layer, long t) {
  const ArchPlan plan = arch_plan(spec);
  // temporal geometry of every unit up to and including `layer`
  struct TGeom {
    int k, s, p;
    bool recurrent;
  };
  std::vector<TGeom> geoms;
  auto push_unit = [&](int stride_t) {
    if (spec.variant == Variant::kRcn)
      geoms.push_back({1, 1, 0, true});
    else
      geoms.push_back({3, stride_t, 1, false});  // n = 3 throughout
  };
  bool found = false;
  const int conv1_st = spec.variant == Variant::kRcn || spec.dense_time
                           ? 1
                           : plan.conv1_stride_t;
  push_unit(conv1_st);
  if (layer == "conv1") found = true;
  if (!found) {
    for (const StagePlan& sp : plan.stages) {
      for (int b = 0; b < sp.blocks; ++b) {
        const int st = b == 0 ? sp.stride_t : 1;
        const int units = plan.bottleneck ? 1 : 2;
        for (int u = 0; u < units; ++u) push_unit(u == 0 ? st : 1);
      }
      if (layer == sp.name) {
        found = true;
        break;
      }
    }
  }
  if (!found && (layer == "pool" || layer == "convC"))
    found = true;  // no further temporal reach
  if (!found)
    throw std::invalid_argument("unknown layer '" + layer + "'");

  long lo = t - 1, hi = t - 1;  // 0-based interval at the queried output
  for (auto it = geoms.rbegin(); it != geoms.rend(); ++it) {
    lo = lo * it->s - it->p;
    hi = hi * it->s - it->p + (it->k - 1);
    if (it->recurrent) lo = 0;  // hidden state reaches back to the start
  }
  return FrameInterval{lo + 1, hi + 1};  // 1-based
}

template <typename T>
HiddenStatsReport whh_statistics(Model<T>& m) {
  HiddenStatsReport rep;
  for (ParamRef<T>& p : m.params()) {
    if (p.kind != ParamKind::kHiddenKernel) continue;
    const Tensor<T>& w = *p.tensor;
    const int n = w.shape().b;
    HiddenStatsRow row;
    row.name = p.name;
    row.n = n;
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(w[i]);
    auto mean_std = [](const std::vector<double>& v, double& mean,
                       double& stdv) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
      double sq = 0;
      for (double x : v) sq += (x - mean) * (x - mean);
      stdv = std::sqrt(sq / v.size());
    };
    mean_std(a, row.mean_all, row.std_all);
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = a[static_cast<std::size_t>(i) * n + i];
    mean_std(diag, row.mean_diag, row.std_diag);
    EigResult eig = eigenvalues(a, n);
    row.eig_converged = eig.converged;
    std::vector<double> mags(eig.values.size());
    for (std::size_t i = 0; i < mags.size(); ++i)
      mags[i] = std::abs(eig.values[i]);
    mean_std(mags, row.mean_eig, row.std_eig);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void hidden_stats_csv(const HiddenStatsReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "'");
  os << "layer,n,mean_all,std_all,mean_diag,std_diag,mean_eig,std_eig,"
        "eig_converged\n";
  for (const HiddenStatsRow& row : r.rows)
    os << row.name << "," << row.n << "," << row.mean_all << "," << row.std_all
       << "," << row.mean_diag << "," << row.std_diag << "," << row.mean_eig
       << "," << row.std_eig << "," << (row.eig_converged ? 1 : 0) << "\n";
}

template <typename T>
std::vector<std::pair<double, double>> early_prediction_curve(
    Model<T>& m, const std::vector<LabeledVideo<T>>& videos,
    const std::vector<double>& fractions) {
  std::vector<std::pair<double, double>> curve;
  std::vector<ScoreSequence<T>> seqs;
  std::vector<int> labels;
  for (const LabeledVideo<T>& v : videos) {
    auto out = unroll_eval(m, v.frames);
    seqs.push_back(std::move(out[0]));
    labels.push_back(v.label);
  }
  for (double f : fractions) {
    int correct = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const int rows = std::max<int>(
          1, static_cast<int>(std::ceil(f * seqs[i].frames)));
      if (classify_prefix(seqs[i], rows) == labels[i]) ++correct;
    }
    curve.emplace_back(f, seqs.empty() ? 0.0
                                       : static_cast<double>(correct) /
                                             seqs.size());
  }
  return curve;
}

template <typename T>
std::vector<double> segment_relative_accuracy(
    Model<T>& m, const std::vector<LabeledVideo<T>>& videos, int n_segments,
    SegmentMode mode) {
  if (n_segments < 1) throw std::invalid_argument("need n_segments >= 1");
  std::vector<int> correct(n_segments, 0);
  for (const LabeledVideo<T>& v : videos) {
    const int t_total = v.frames.shape().t;
    if (t_total < n_segments)
      throw std::invalid_argument("video shorter than segment count");
    ScoreSequence<T> seq;
    if (mode == SegmentMode::kUnrolled) seq = std::move(unroll_eval(m, v.frames)[0]);
    for (int s = 0; s < n_segments; ++s) {
      const int lo = static_cast<int>(static_cast<long>(s) * t_total /
                                      n_segments);
      const int hi = static_cast<int>(static_cast<long>(s + 1) * t_total /
                                      n_segments);
      std::vector<T> acc(m.spec.num_classes, T(0));
      if (mode == SegmentMode::kUnrolled) {
        for (int t = lo; t < hi; ++t)
          for (int c = 0; c < seq.classes; ++c) acc[c] += seq.at(t, c);
      } else {
        const Shape5& vs = v.frames.shape();
        Tensor<T> clip(Shape5{1, vs.c, hi - lo, vs.h, vs.w});
        for (int c = 0; c < vs.c; ++c)
          for (int t = lo; t < hi; ++t)
            for (int y = 0; y < vs.h; ++y)
              for (int x = 0; x < vs.w; ++x)
                clip.at(0, c, t - lo, y, x) = v.frames.at(0, c, t, y, x);
        auto out = forward_clip(m, clip, BnMode::kEval);
        for (int c = 0; c < out[0].classes; ++c)
          acc[c] = out[0].video[c];
      }
      int best = 0;
      for (int c = 1; c < m.spec.num_classes; ++c)
        if (acc[c] > acc[best]) best = c;
      if (best == v.label) ++correct[s];
    }
  }
  std::vector<double> deltas(n_segments, 0.0);
  if (videos.empty()) return deltas;
  const double base = static_cast<double>(correct[0]) / videos.size();
  for (int s = 0; s < n_segments; ++s)
    deltas[s] = static_cast<double>(correct[s]) / videos.size() - base;
  return deltas;
}

void curve_csv(const std::vector<std::pair<double, double>>& curve,
               const std::string& x_name, const std::string& y_name,
               const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "'");
  os << x_name << "," << y_name << "\n";
  for (const auto& [x, y] : curve) os << x << "," << y << "\n";
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& positives) {
  if (scores.size() != positives.size())
    throw std::invalid_argument("average_precision: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  long pos_total = 0;
  for (std::uint8_t p : positives) pos_total += p ? 1 : 0;
  if (pos_total == 0) return 0.0;
  double ap = 0.0;
  long seen_pos = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(pos_total);
}

template <typename T>
double frame_map(const std::vector<ScoreSequence<T>>& scores,
                 const std::vector<std::vector<std::uint8_t>>& masks,
                 int stride_k) {
  if (scores.size() != masks.size())
    throw std::invalid_argument("frame_map: scores/masks count mismatch");
  if (stride_k < 1) throw std::invalid_argument("frame_map: stride must be >= 1");
  if (scores.empty()) return 0.0;
  const int classes = scores[0].classes;
  double sum_ap = 0.0;
  int classes_present = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (std::size_t v = 0; v < scores.size(); ++v) {
      const ScoreSequence<T>& seq = scores[v];
      if (static_cast<int>(masks[v].size()) != seq.frames * classes)
        throw std::invalid_argument("frame_map: mask length mismatch");
      for (int t = 0; t < seq.frames; t += stride_k) {
        s.push_back(static_cast<double>(seq.at(t, c)));
        y.push_back(masks[v][static_cast<std::size_t>(t) * classes + c]);
      }
    }
    long pos = 0;
    for (std::uint8_t p : y) pos += p ? 1 : 0;
    if (pos == 0) continue;
    sum_ap += average_precision(s, y);
    ++classes_present;
  }
  return classes_present == 0 ? 0.0 : sum_ap / classes_present;
}

#define RCN_INSTANTIATE_ANALYSIS(T)                                           \
  template CostReport cost_report<T>(Model<T>&, const Shape5&);               \
  template long long count_params<T>(Model<T>&);                              \
  template long long count_macs<T>(Model<T>&, const Shape5&);                 \
  template HiddenStatsReport whh_statistics<T>(Model<T>&);                    \
  template struct LabeledVideo<T>;                                            \
  template std::vector<std::pair<double, double>> early_prediction_curve<T>(  \
      Model<T>&, const std::vector<LabeledVideo<T>>&,                         \
      const std::vector<double>&);                                            \
  template std::vector<double> segment_relative_accuracy<T>(                  \
      Model<T>&, const std::vector<LabeledVideo<T>>&, int, SegmentMode);      \
  template double frame_map<T>(const std::vector<ScoreSequence<T>>&,          \
                               const std::vector<std::vector<std::uint8_t>>&, \
                               int);

RCN_INSTANTIATE_ANALYSIS(float)
RCN_INSTANTIATE_ANALYSIS(double)

}  // namespace rcn
