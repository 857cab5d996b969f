#pragma once

#include <string>
#include <vector>

#include "rcn/arch.hpp"
#include "rcn/dataset.hpp"
#include "rcn/eig.hpp"

namespace rcn {

// MAC convention: one MAC per multiply-accumulate inside a convolution
// (spatial, temporal, pointwise, hidden and classifier kernels); BN, ReLU
// and pooling are excluded. Reported for a full clip of the stated input
// size; divide by T for the per-frame figure.
struct CostRow {
  std::string name;
  long long params = 0;
  long long macs = 0;
};

struct CostReport {
  std::string backbone;
  Variant variant = Variant::kRcn;
  Shape5 input;
  std::vector<CostRow> rows;
  long long total_params = 0;
  long long total_macs = 0;
};

template <typename T>
CostReport cost_report(Model<T>& m, const Shape5& input);

template <typename T>
long long count_params(Model<T>& m);

template <typename T>
long long count_macs(Model<T>& m, const Shape5& input);

void cost_report_csv(const CostReport& r, const std::string& path);

// Closed-form input-frame window feeding output frame t (1-based) of the
// named stage ("conv1", "res2", ..., "convC"). For rcn the window is always
// [1, t]; for the temporal-conv variants it is the composed kernel window,
// not clamped to the sequence bounds (interior-frame form).
struct FrameInterval {
  long lo = 0, hi = 0;
};
FrameInterval temporal_receptive_field(const ArchSpec& spec,
                                       const std::string& layer, long t);

struct HiddenStatsRow {
  std::string name;
  int n = 0;  // kernel count
  double mean_all = 0, std_all = 0;
  double mean_diag = 0, std_diag = 0;
  double mean_eig = 0, std_eig = 0;  // magnitudes of eigenvalues
  bool eig_converged = true;
};

struct HiddenStatsReport {
  std::vector<HiddenStatsRow> rows;
};

template <typename T>
HiddenStatsReport whh_statistics(Model<T>& m);

void hidden_stats_csv(const HiddenStatsReport& r, const std::string& path);

// Early action prediction: classify each video from the mean of its
// per-frame scores over frames 1..ceil(f*T), for each observed fraction f.
template <typename T>
struct LabeledVideo {
  Tensor<T> frames;  // (1, C, T, H, W)
  int label = 0;
};

template <typename T>
std::vector<std::pair<double, double>> early_prediction_curve(
    Model<T>& m, const std::vector<LabeledVideo<T>>& videos,
    const std::vector<double>& fractions);

enum class SegmentMode { kSliding, kUnrolled };

// Splits each video into n regularly sampled segments, classifies every
// segment from that segment's mean scores, and reports each segment's
// accuracy minus the first segment's. kUnrolled carries hidden state across
// the whole video; kSliding evaluates each segment as an isolated clip.
template <typename T>
std::vector<double> segment_relative_accuracy(
    Model<T>& m, const std::vector<LabeledVideo<T>>& videos,
    int n_segments = 10, SegmentMode mode = SegmentMode::kUnrolled);

void curve_csv(const std::vector<std::pair<double, double>>& curve,
               const std::string& x_name, const std::string& y_name,
               const std::string& path);

// Frame-wise mean average precision over every k-th frame. scores and masks
// are per-video [T x C] rows; classes with no positive sampled frame are
// skipped.
template <typename T>
double frame_map(const std::vector<ScoreSequence<T>>& scores,
                 const std::vector<std::vector<std::uint8_t>>& masks,
                 int stride_k);

// Average precision of one ranked list (higher score first; stable ties).
double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& positives);

}  // namespace rcn
