#include "rcn/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "rcn/binio.hpp"

namespace rcn {

const char* task_name(Task t) {
  switch (t) {
    case Task::kDirection: return "direction";
    case Task::kOrder: return "order";
    case Task::kDense: return "dense";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  if (s == "direction") return Task::kDirection;
  if (s == "order") return Task::kOrder;
  if (s == "dense") return Task::kDense;
  throw std::invalid_argument("unknown task '" + s + "'");
}

namespace {

// Toroidal distance so a blob wraps instead of deforming at the border;
// that keeps every frame's marginal distribution identical across classes.
inline double torus_d(double a, double b, int extent) {
  double d = std::abs(a - b);
  return std::min(d, extent - d);
}

template <typename T>
void render_disc(Tensor<T>& frames, int t, double cy, double cx,
                 double sigma) {
  const Shape5& s = frames.shape();
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const double dy = torus_d(y, cy, s.h);
      const double dx = torus_d(x, cx, s.w);
      const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      if (v < 1e-4) continue;
      for (int c = 0; c < s.c; ++c)
        frames.at(0, c, t, y, x) += static_cast<T>(v);
    }
}

// Ring pattern, distinguishable from the disc at any position.
template <typename T>
void render_ring(Tensor<T>& frames, int t, double cy, double cx, double radius,
                 double sigma) {
  const Shape5& s = frames.shape();
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const double dy = torus_d(y, cy, s.h);
      const double dx = torus_d(x, cx, s.w);
      const double r = std::sqrt(dy * dy + dx * dx);
      const double v =
          std::exp(-(r - radius) * (r - radius) / (2.0 * sigma * sigma));
      if (v < 1e-4) continue;
      for (int c = 0; c < s.c; ++c)
        frames.at(0, c, t, y, x) += static_cast<T>(v);
    }
}

template <typename T>
void add_noise(Tensor<T>& frames, Rng& rng, double amp) {
  for (std::size_t i = 0; i < frames.numel(); ++i)
    frames[i] += static_cast<T>(amp * rng.normal());
}

constexpr int kChannels = 3;
constexpr double kBlobSigma = 2.0;
constexpr double kRingRadius = 4.5;
constexpr double kRingSigma = 1.0;
constexpr double kSpeed = 2.0;
constexpr double kNoise = 0.02;

void direction_velocity(int label, double& vy, double& vx) {
  switch (label) {
    case kDirLeft: vy = 0; vx = -kSpeed; break;
    case kDirRight: vy = 0; vx = kSpeed; break;
    case kDirUp: vy = -kSpeed; vx = 0; break;
    case kDirDown: vy = kSpeed; vx = 0; break;
    default: throw std::logic_error("bad direction label");
  }
}

}  // namespace

template <typename T>
Dataset<T> gen_motion_dataset(int num_clips, int t, int h, int w, Task task,
                              std::uint64_t seed) {
  if (t < 4)
    throw std::invalid_argument("gen_motion_dataset: need T >= 4, got " +
                                std::to_string(t));
  Dataset<T> ds;
  ds.task = task;
  ds.seed = seed;
  ds.num_classes = task == Task::kDirection ? 4 : 2;
  Rng rng(seed);
  for (int n = 0; n < num_clips; ++n) {
    SyntheticClip<T> clip;
    clip.frames = Tensor<T>(Shape5{1, kChannels, t, h, w});
    switch (task) {
      case Task::kDirection: {
        clip.label = static_cast<int>(rng.uniform_int(4));
        double vy, vx;
        direction_velocity(clip.label, vy, vx);
        double cy = rng.uniform() * h;
        double cx = rng.uniform() * w;
        for (int f = 0; f < t; ++f) {
          render_disc(clip.frames, f, cy, cx, kBlobSigma);
          cy = std::fmod(cy + vy + h, h);
          cx = std::fmod(cx + vx + w, w);
        }
        break;
      }
      case Task::kOrder: {
        clip.label = static_cast<int>(rng.uniform_int(2));
        const int half = t / 2;
        const double cy1 = rng.uniform() * h, cx1 = rng.uniform() * w;
        const double cy2 = rng.uniform() * h, cx2 = rng.uniform() * w;
        for (int f = 0; f < t; ++f) {
          const bool first_half = f < half;
          const bool disc_now = (clip.label == 0) == first_half;
          if (disc_now)
            render_disc(clip.frames, f, first_half ? cy1 : cy2,
                        first_half ? cx1 : cx2, kBlobSigma);
          else
            render_ring(clip.frames, f, first_half ? cy1 : cy2,
                        first_half ? cx1 : cx2, kRingRadius, kRingSigma);
        }
        break;
      }
      case Task::kDense: {
        clip.label = 0;
        clip.mask.assign(static_cast<std::size_t>(t) * 2, 0);
        // two independent events with random active windows
        for (int ev = 0; ev < 2; ++ev) {
          const int len = 2 + static_cast<int>(rng.uniform_int(t / 2));
          const int start = static_cast<int>(rng.uniform_int(t - len + 1));
          double cy = rng.uniform() * h, cx = rng.uniform() * w;
          double vy, vx;
          direction_velocity(static_cast<int>(rng.uniform_int(4)), vy, vx);
          for (int f = start; f < start + len; ++f) {
            if (ev == 0)
              render_disc(clip.frames, f, cy, cx, kBlobSigma);
            else
              render_ring(clip.frames, f, cy, cx, kRingRadius, kRingSigma);
            clip.mask[static_cast<std::size_t>(f) * 2 + ev] = 1;
            cy = std::fmod(cy + vy + h, h);
            cx = std::fmod(cx + vx + w, w);
          }
        }
        break;
      }
    }
    add_noise(clip.frames, rng, kNoise);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

template <typename T>
Dataset<T> gen_static_quadrant_dataset(int num_clips, int h, int w,
                                       std::uint64_t seed) {
  Dataset<T> ds;
  ds.task = Task::kDirection;  // container tag reused; labels are quadrants
  ds.seed = seed;
  ds.num_classes = 4;
  Rng rng(seed);
  for (int n = 0; n < num_clips; ++n) {
    SyntheticClip<T> clip;
    clip.frames = Tensor<T>(Shape5{1, kChannels, 1, h, w});
    // keep the blob inside one quadrant so the label is unambiguous
    const int qy = static_cast<int>(rng.uniform_int(2));
    const int qx = static_cast<int>(rng.uniform_int(2));
    clip.label = qy * 2 + qx;
    const double cy = (qy + 0.25 + 0.5 * rng.uniform()) * (h / 2.0);
    const double cx = (qx + 0.25 + 0.5 * rng.uniform()) * (w / 2.0);
    render_disc(clip.frames, 0, cy, cx, kBlobSigma);
    add_noise(clip.frames, rng, kNoise);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

AugmentDecision draw_augment(Rng& rng, const Shape5& src, int out_t, int out_h,
                             int out_w, bool allow_flip) {
  AugmentDecision d;
  d.off_h = static_cast<int>(rng.uniform_int(src.h - out_h + 1));
  d.off_w = static_cast<int>(rng.uniform_int(src.w - out_w + 1));
  d.off_t = static_cast<int>(rng.uniform_int(src.t - out_t + 1));
  d.flip = allow_flip && rng.bernoulli(0.5);
  return d;
}

template <typename T>
SyntheticClip<T> apply_augment(const SyntheticClip<T>& clip, Task task,
                               const AugmentDecision& d, int out_t, int out_h,
                               int out_w) {
  const Shape5& s = clip.frames.shape();
  if (out_h > s.h || out_w > s.w || out_t > s.t)
    throw std::invalid_argument("augment: clip " + s.str() +
                                " smaller than crop target (" +
                                std::to_string(out_t) + "," +
                                std::to_string(out_h) + "," +
                                std::to_string(out_w) + ")");
  SyntheticClip<T> out;
  out.frames = Tensor<T>(Shape5{1, s.c, out_t, out_h, out_w});
  for (int c = 0; c < s.c; ++c)
    for (int t = 0; t < out_t; ++t)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const int sx = d.flip ? (d.off_w + out_w - 1 - x) : (d.off_w + x);
          out.frames.at(0, c, t, y, x) =
              clip.frames.at(0, c, t + d.off_t, y + d.off_h, sx);
        }
  out.label = clip.label;
  if (d.flip && task == Task::kDirection) {
    if (clip.label == kDirLeft) out.label = kDirRight;
    else if (clip.label == kDirRight) out.label = kDirLeft;
  }
  if (!clip.mask.empty()) {
    const std::size_t classes = clip.mask.size() / s.t;
    out.mask.assign(static_cast<std::size_t>(out_t) * classes, 0);
    for (int t = 0; t < out_t; ++t)
      for (std::size_t c = 0; c < classes; ++c)
        out.mask[t * classes + c] = clip.mask[(t + d.off_t) * classes + c];
  }
  return out;
}

template <typename T>
SyntheticClip<T> augment(const SyntheticClip<T>& clip, Task task, int out_t,
                         int out_h, int out_w, std::uint64_t seed) {
  Rng rng(seed);
  AugmentDecision d =
      draw_augment(rng, clip.frames.shape(), out_t, out_h, out_w, true);
  return apply_augment(clip, task, d, out_t, out_h, out_w);
}

template <typename T>
SyntheticClip<T> center_crop(const SyntheticClip<T>& clip, Task task,
                             int out_t, int out_h, int out_w) {
  const Shape5& s = clip.frames.shape();
  AugmentDecision d;
  d.off_h = (s.h - out_h) / 2;
  d.off_w = (s.w - out_w) / 2;
  d.off_t = (s.t - out_t) / 2;
  d.flip = false;
  return apply_augment(clip, task, d, out_t, out_h, out_w);
}

namespace {
constexpr char kDataMagic[] = "RCNDATA1";
constexpr char kDataEnd[] = "RCNEND__";
}  // namespace

template <typename T>
void save_dataset(const Dataset<T>& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bytes(os, kDataMagic, 8);
  write_pod<std::uint32_t>(os, 1u);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(ds.task));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes));
  write_pod<std::uint64_t>(os, ds.seed);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.clips.size()));
  if (ds.clips.empty()) throw std::runtime_error("refusing to save empty dataset");
  const Shape5& s0 = ds.clips[0].frames.shape();
  for (int d : {s0.c, s0.t, s0.h, s0.w})
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (const auto& clip : ds.clips) {
    if (clip.frames.shape() != s0)
      throw std::runtime_error("dataset clips must share one shape");
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(clip.label));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(clip.mask.size()));
    if (!clip.mask.empty())
      write_bytes(os, clip.mask.data(), clip.mask.size());
    // frames stored narrow; wide tensors are rounded
    std::vector<float> buf(clip.frames.numel());
    for (std::size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(clip.frames[i]);
    write_bytes(os, buf.data(), buf.size() * sizeof(float));
  }
  write_bytes(os, kDataEnd, 8);
}

template <typename T>
Dataset<T> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  expect_magic(is, kDataMagic, "dataset");
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != 1)
    throw std::runtime_error("unsupported dataset version " +
                             std::to_string(version));
  Dataset<T> ds;
  ds.task = static_cast<Task>(read_pod<std::uint8_t>(is, "task"));
  ds.num_classes = static_cast<int>(read_pod<std::uint32_t>(is, "classes"));
  ds.seed = read_pod<std::uint64_t>(is, "seed");
  const auto count = read_pod<std::uint32_t>(is, "clip count");
  Shape5 s{1, 0, 0, 0, 0};
  s.c = static_cast<int>(read_pod<std::uint32_t>(is, "channels"));
  s.t = static_cast<int>(read_pod<std::uint32_t>(is, "frames"));
  s.h = static_cast<int>(read_pod<std::uint32_t>(is, "height"));
  s.w = static_cast<int>(read_pod<std::uint32_t>(is, "width"));
  for (std::uint32_t n = 0; n < count; ++n) {
    SyntheticClip<T> clip;
    clip.label = static_cast<int>(read_pod<std::uint32_t>(is, "label"));
    const auto mask_len = read_pod<std::uint32_t>(is, "mask length");
    if (mask_len) {
      clip.mask.resize(mask_len);
      read_bytes(is, clip.mask.data(), mask_len, "mask");
    }
    clip.frames = Tensor<T>(s);
    std::vector<float> buf(clip.frames.numel());
    read_bytes(is, buf.data(), buf.size() * sizeof(float), "frames");
    for (std::size_t i = 0; i < buf.size(); ++i)
      clip.frames[i] = static_cast<T>(buf[i]);
    ds.clips.push_back(std::move(clip));
  }
  char buf[9] = {0};
  read_bytes(is, buf, 8, "trailer");
  if (std::string(buf, 8) != kDataEnd)
    throw std::runtime_error("corrupt dataset: bad trailer");
  return ds;
}

#define RCN_INSTANTIATE_DATASET(T)                                            \
  template struct SyntheticClip<T>;                                           \
  template struct Dataset<T>;                                                 \
  template Dataset<T> gen_motion_dataset<T>(int, int, int, int, Task,         \
                                            std::uint64_t);                   \
  template Dataset<T> gen_static_quadrant_dataset<T>(int, int, int,           \
                                                     std::uint64_t);          \
  template SyntheticClip<T> apply_augment<T>(const SyntheticClip<T>&, Task,   \
                                             const AugmentDecision&, int,     \
                                             int, int);                       \
  template SyntheticClip<T> augment<T>(const SyntheticClip<T>&, Task, int,    \
                                       int, int, std::uint64_t);              \
  template SyntheticClip<T> center_crop<T>(const SyntheticClip<T>&, Task,     \
                                           int, int, int);                    \
  template void save_dataset<T>(const Dataset<T>&, const std::string&);       \
  template Dataset<T> load_dataset<T>(const std::string&);

RCN_INSTANTIATE_DATASET(float)
RCN_INSTANTIATE_DATASET(double)

}  // namespace rcn
