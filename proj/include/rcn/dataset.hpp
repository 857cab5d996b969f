#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcn/rng.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

enum class Task : std::uint8_t { kDirection = 0, kOrder = 1, kDense = 2 };

const char* task_name(Task t);
Task task_from_name(const std::string& s);

// One synthetic clip. Recognition tasks use `label`; the dense task also
// fills `mask` with one 0/1 entry per (frame, class).
template <typename T>
struct SyntheticClip {
  Tensor<T> frames;  // (1, C, T, H, W)
  int label = 0;
  std::vector<std::uint8_t> mask;  // T * num_classes, dense task only
};

template <typename T>
struct Dataset {
  Task task = Task::kDirection;
  int num_classes = 0;
  std::uint64_t seed = 0;
  std::vector<SyntheticClip<T>> clips;
};

// Synthetic motion data that requires temporal reasoning:
//  - direction: a bright blob drifts over a toroidal field in one of four
//    directions (left/right/up/down). Start positions are uniform, so each
//    individual frame has the same distribution for every class.
//  - order: two distinct patterns (disc, ring) shown one after the other;
//    the class is which came first. Two classes.
//  - dense: per-frame multi-label masks marking which of the two motion
//    events (moving disc, moving ring) is active at each frame.
template <typename T>
Dataset<T> gen_motion_dataset(int num_clips, int t, int h, int w, Task task,
                              std::uint64_t seed);

// Static single-frame quadrant task (blob position). The toy image problem
// used to train synthetic 2D donor checkpoints.
template <typename T>
Dataset<T> gen_static_quadrant_dataset(int num_clips, int h, int w,
                                       std::uint64_t seed);

// Direction classes; horizontal flip swaps left and right.
constexpr int kDirLeft = 0, kDirRight = 1, kDirUp = 2, kDirDown = 3;

// Spatial crop + optional horizontal flip + temporal start offset.
struct AugmentDecision {
  int off_h = 0, off_w = 0;
  int off_t = 0;
  bool flip = false;
};

AugmentDecision draw_augment(Rng& rng, const Shape5& src, int out_t, int out_h,
                             int out_w, bool allow_flip);

// Applies a decision; flip remaps direction-sensitive labels when
// task == kDirection. Throws if the source is smaller than the target.
template <typename T>
SyntheticClip<T> apply_augment(const SyntheticClip<T>& clip, Task task,
                               const AugmentDecision& d, int out_t, int out_h,
                               int out_w);

// Seeded convenience wrapper: random crop, 50% flip, temporal jitter.
template <typename T>
SyntheticClip<T> augment(const SyntheticClip<T>& clip, Task task, int out_t,
                         int out_h, int out_w, std::uint64_t seed);

// Center crop, no flip, no jitter (evaluation).
template <typename T>
SyntheticClip<T> center_crop(const SyntheticClip<T>& clip, Task task,
                             int out_t, int out_h, int out_w);

// Binary dataset container (one file per split).
template <typename T>
void save_dataset(const Dataset<T>& ds, const std::string& path);
template <typename T>
Dataset<T> load_dataset(const std::string& path);

}  // namespace rcn
