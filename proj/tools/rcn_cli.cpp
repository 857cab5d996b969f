// Command-line front end: dataset generation, training, evaluation,
// frame-at-a-time streaming, and analysis reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "rcn/analysis.hpp"
#include "rcn/binio.hpp"
#include "rcn/train.hpp"
#include "rcn/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rcn;

namespace {

struct RunConfig {
  std::string backbone = "tiny";
  std::string variant = "rcn";
  int classes = 4;
  bool dense_time = false;
  std::string dtype = "wide";

  std::string data_train, data_val;
  std::string out_dir = "run";
  std::string init_scheme = "identity";  // identity | random
  std::string donor;                     // optional 2D donor checkpoint
  std::uint64_t seed = 1;

  TrainConfig train;
};

RunConfig config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("arch")) {
    const json& a = j["arch"];
    c.backbone = a.value("backbone", c.backbone);
    c.variant = a.value("variant", c.variant);
    c.classes = a.value("classes", c.classes);
    c.dense_time = a.value("dense_time", c.dense_time);
  }
  if (j.contains("data")) {
    c.data_train = j["data"].value("train", c.data_train);
    c.data_val = j["data"].value("val", c.data_val);
  }
  if (j.contains("init")) {
    c.init_scheme = j["init"].value("scheme", c.init_scheme);
    c.donor = j["init"].value("donor", c.donor);
    c.seed = j["init"].value("seed", c.seed);
  }
  c.out_dir = j.value("out_dir", c.out_dir);
  c.dtype = j.value("dtype", c.dtype);
  if (j.contains("train")) {
    const json& t = j["train"];
    c.train.lr0 = t.value("lr0", c.train.lr0);
    c.train.drop_factor = t.value("drop_factor", c.train.drop_factor);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.max_iters = t.value("max_iters", c.train.max_iters);
    c.train.momentum = t.value("momentum", c.train.momentum);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.clip_t = t.value("clip_t", c.train.clip_t);
    c.train.crop_h = t.value("crop", c.train.crop_h);
    c.train.crop_w = t.value("crop", c.train.crop_w);
    c.train.eval_interval = t.value("eval_interval", c.train.eval_interval);
    c.train.stop_at_acc = t.value("stop_at_acc", c.train.stop_at_acc);
    c.train.freeze_bn = t.value("freeze_bn", c.train.freeze_bn);
    c.train.freeze_hidden = t.value("freeze_hidden", c.train.freeze_hidden);
    if (t.contains("lr_drop_steps"))
      c.train.lr_drop_steps = t["lr_drop_steps"].get<std::vector<long>>();
  }
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["arch"] = {{"backbone", c.backbone},
               {"variant", c.variant},
               {"classes", c.classes},
               {"dense_time", c.dense_time}};
  j["data"] = {{"train", c.data_train}, {"val", c.data_val}};
  j["init"] = {{"scheme", c.init_scheme},
               {"donor", c.donor},
               {"seed", c.seed}};
  j["out_dir"] = c.out_dir;
  j["dtype"] = c.dtype;
  j["train"] = {{"lr0", c.train.lr0},
                {"drop_factor", c.train.drop_factor},
                {"batch", c.train.batch},
                {"max_iters", c.train.max_iters},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"seed", c.train.seed},
                {"clip_t", c.train.clip_t},
                {"crop", c.train.crop_h},
                {"eval_interval", c.train.eval_interval},
                {"stop_at_acc", c.train.stop_at_acc},
                {"freeze_bn", c.train.freeze_bn},
                {"freeze_hidden", c.train.freeze_hidden},
                {"lr_drop_steps", c.train.lr_drop_steps}};
  return j;
}

ArchSpec arch_of(const RunConfig& c) {
  ArchSpec s;
  s.backbone = c.backbone;
  s.variant = variant_from_name(c.variant);
  s.num_classes = c.classes;
  s.dense_time = c.dense_time;
  return s;
}

int cmd_gen(const std::string& out, const std::string& task_name_s, int clips,
            int frames, int height, int width, std::uint64_t seed) {
  Task task = task_from_name(task_name_s);
  auto ds = gen_motion_dataset<double>(clips, frames, height, width, task,
                                       seed);
  save_dataset(ds, out);
  std::cout << "wrote " << out << ": " << clips << " clips, task="
            << task_name_s << ", " << frames << "x" << height << "x" << width
            << ", classes=" << ds.num_classes << "\n";
  return 0;
}

template <typename T>
int cmd_train(const RunConfig& cfg) {
  auto train_ds = load_dataset<T>(cfg.data_train);
  Dataset<T> val_ds;
  if (!cfg.data_val.empty()) val_ds = load_dataset<T>(cfg.data_val);
  ArchSpec spec = arch_of(cfg);
  if (spec.num_classes != train_ds.num_classes)
    throw std::runtime_error("config declares " +
                             std::to_string(spec.num_classes) +
                             " classes but the dataset has " +
                             std::to_string(train_ds.num_classes));
  Model<T> m = build_model<T>(spec);
  init_random(m, cfg.seed);
  if (!cfg.donor.empty()) {
    auto donor = load_donor_checkpoint<T>(cfg.donor);
    inflate_from_2d(m, donor);
  }
  if (cfg.init_scheme == "identity") {
    if (spec.variant == Variant::kRcn) init_identity_hidden(m);
  } else if (cfg.init_scheme != "random") {
    throw std::runtime_error("unknown init scheme '" + cfg.init_scheme + "'");
  }

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(cfg.out_dir + "/config.json");
    os << config_to_json(cfg).dump(2) << "\n";
  }
  TrainResult<T> res = train_loop(m, train_ds, val_ds, cfg.train);
  save_checkpoint(m, cfg.out_dir + "/checkpoint.bin", cfg.seed);
  save_metrics_csv(res.log, cfg.out_dir + "/metrics.csv");
  std::cout << "trained " << res.iters_run << " iters, final_acc="
            << res.final_acc << ", wrote " << cfg.out_dir << "/checkpoint.bin"
            << "\n";
  return 0;
}

template <typename T>
int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& protocol, int clip_t, int crop) {
  LoadedModel<T> lm = load_checkpoint<T>(ckpt);
  auto ds = load_dataset<T>(data);
  TrainConfig geom;
  geom.clip_t = clip_t;
  geom.crop_h = geom.crop_w = crop;
  // clip accuracy: one center clip per source
  const double clip_acc = evaluate_accuracy(lm.model, ds, geom);
  // video accuracy over the whole source
  int correct = 0;
  for (const auto& clip : ds.clips) {
    const Shape5& s = clip.frames.shape();
    SyntheticClip<T> cropped =
        center_crop(clip, ds.task, s.t, std::min(crop, s.h), std::min(crop, s.w));
    std::vector<T> video;
    if (protocol == "tenclip" && cropped.frames.shape().t >= clip_t) {
      video = ten_clip_video_scores(lm.model, cropped.frames, clip_t);
    } else {
      auto out = unroll_eval(lm.model, cropped.frames);
      video.assign(out[0].video.begin(), out[0].video.end());
    }
    int best = 0;
    for (std::size_t c = 1; c < video.size(); ++c)
      if (video[c] > video[best]) best = c;
    if (best == cropped.label) ++correct;
  }
  const double video_acc = static_cast<double>(correct) / ds.clips.size();
  std::cout << "clip_acc=" << clip_acc << " video_acc=" << video_acc
            << " protocol=" << protocol << " clips=" << ds.clips.size()
            << "\n";
  return 0;
}

// Frame wire format: per frame a header (u32 C, u32 H, u32 W, u8 dtype tag)
// followed by C*H*W little-endian scalars. dtype 0 = f64, 1 = f32.
template <typename T>
bool read_wire_frame(std::istream& is, Tensor<T>& frame) {
  std::uint32_t c = 0, h = 0, w = 0;
  is.read(reinterpret_cast<char*>(&c), 4);
  if (is.gcount() == 0) return false;  // clean EOF
  if (is.gcount() != 4) throw std::runtime_error("truncated frame header");
  read_bytes(is, &h, 4, "frame header");
  read_bytes(is, &w, 4, "frame header");
  const auto tag = read_pod<std::uint8_t>(is, "frame dtype");
  const Shape5 s{1, static_cast<int>(c), 1, static_cast<int>(h),
                 static_cast<int>(w)};
  if (frame.shape() != s || frame.numel() != s.numel()) frame = Tensor<T>(s);
  if (tag == 0) {
    std::vector<double> buf(frame.numel());
    read_bytes(is, buf.data(), buf.size() * 8, "frame payload");
    for (std::size_t i = 0; i < buf.size(); ++i)
      frame[i] = static_cast<T>(buf[i]);
  } else if (tag == 1) {
    std::vector<float> buf(frame.numel());
    read_bytes(is, buf.data(), buf.size() * 4, "frame payload");
    for (std::size_t i = 0; i < buf.size(); ++i)
      frame[i] = static_cast<T>(buf[i]);
  } else {
    throw std::runtime_error("unknown frame dtype tag");
  }
  return true;
}

template <typename T>
int cmd_stream(const std::string& ckpt, const std::string& input) {
  LoadedModel<T> lm = load_checkpoint<T>(ckpt);
  if (lm.model.spec.variant != Variant::kRcn)
    throw std::runtime_error("streaming is defined only for rcn checkpoints");
  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input.empty()) {
    file.open(input, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open '" + input + "'");
    in = &file;
  }
  Tensor<T> frame;
  StreamState<T> state;
  bool started = false;
  long t = 0;
  while (read_wire_frame(*in, frame)) {
    if (!started) {
      state = init_stream_state(lm.model, 1, frame.shape().h, frame.shape().w);
      started = true;
    }
    Tensor<T> scores = stream_step(lm.model, state, frame);
    std::cout << t;
    for (int c = 0; c < lm.model.spec.num_classes; ++c)
      std::cout << " " << scores.at(0, c, 0, 0, 0);
    std::cout << "\n" << std::flush;
    ++t;
  }
  if (started) {
    std::vector<T> video = stream_video_scores(state);
    std::cerr << "video";
    for (T v : video) std::cerr << " " << v;
    std::cerr << "\n";
  }
  return 0;
}

// Dumps one dataset clip in the stream wire format (pipe composition).
template <typename T>
int cmd_frames(const std::string& data, int index, std::ostream& os) {
  auto ds = load_dataset<T>(data);
  if (index < 0 || index >= static_cast<int>(ds.clips.size()))
    throw std::runtime_error("clip index out of range");
  const Tensor<T>& f = ds.clips[index].frames;
  const Shape5& s = f.shape();
  for (int t = 0; t < s.t; ++t) {
    const std::uint32_t c = s.c, h = s.h, w = s.w;
    os.write(reinterpret_cast<const char*>(&c), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    const std::uint8_t tag = dtype_of<T>() == Dtype::kWide ? 0 : 1;
    os.write(reinterpret_cast<const char*>(&tag), 1);
    for (int ci = 0; ci < s.c; ++ci)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const T v = f.at(0, ci, t, y, x);
          os.write(reinterpret_cast<const char*>(&v), sizeof(T));
        }
  }
  return 0;
}

template <typename T>
int cmd_analyze(const RunConfig& cfg, const std::string& ckpt, int input_t,
                int input_hw, bool curves, const std::string& data,
                int segments) {
  ArchSpec spec = arch_of(cfg);
  Model<T> m = build_model<T>(spec);
  if (!ckpt.empty()) {
    LoadedModel<T> lm = load_checkpoint<T>(ckpt, &spec);
    m = std::move(lm.model);
  } else {
    init_random(m, cfg.seed);
    if (spec.variant == Variant::kRcn) init_identity_hidden(m);
  }
  fs::create_directories(cfg.out_dir);
  const Shape5 input{1, spec.in_channels, input_t, input_hw, input_hw};

  CostReport cost = cost_report(m, input);
  cost_report_csv(cost, cfg.out_dir + "/cost.csv");

  // three-variant comparison at this backbone/classes
  {
    std::ofstream os(cfg.out_dir + "/cost_comparison.csv");
    os << "variant,params,macs,params_vs_rcn,macs_vs_rcn\n";
    long long rcn_p = 0, rcn_m = 0;
    std::vector<std::pair<std::string, std::pair<long long, long long>>> rows;
    for (Variant v : {Variant::kRcn, Variant::kI3d, Variant::k2Plus1d}) {
      ArchSpec s2 = spec;
      s2.variant = v;
      Model<T> m2 = build_model<T>(s2);
      CostReport r2 = cost_report(m2, input);
      if (v == Variant::kRcn) {
        rcn_p = r2.total_params;
        rcn_m = r2.total_macs;
      }
      rows.push_back({variant_name(v), {r2.total_params, r2.total_macs}});
    }
    for (auto& [name, pm] : rows)
      os << name << "," << pm.first << "," << pm.second << ","
         << double(pm.first) / rcn_p << "," << double(pm.second) / rcn_m
         << "\n";
  }

  {
    std::ofstream os(cfg.out_dir + "/shapes.csv");
    os << "stage,channels,frames,height,width\n";
    for (const auto& [name, s] : trace_shapes(spec, input))
      os << name << "," << s.c << "," << s.t << "," << s.h << "," << s.w
         << "\n";
  }

  {
    std::ofstream os(cfg.out_dir + "/receptive_field.csv");
    os << "layer,t,lo,hi\n";
    const ArchPlan plan = arch_plan(spec);
    std::vector<std::string> layers{"conv1"};
    for (const StagePlan& sp : plan.stages) layers.push_back(sp.name);
    for (const std::string& layer : layers) {
      FrameInterval iv = temporal_receptive_field(spec, layer, input_t / 2);
      os << layer << "," << input_t / 2 << "," << iv.lo << "," << iv.hi
         << "\n";
    }
  }

  if (spec.variant == Variant::kRcn)
    hidden_stats_csv(whh_statistics(m), cfg.out_dir + "/hidden_stats.csv");

  if (curves) {
    if (data.empty())
      throw std::runtime_error("--curves needs --data with labeled videos");
    auto ds = load_dataset<T>(data);
    std::vector<LabeledVideo<T>> vids;
    for (auto& c : ds.clips) vids.push_back({c.frames, c.label});
    std::vector<double> fractions;
    const int steps = 8;
    for (int i = 1; i <= steps; ++i) fractions.push_back(double(i) / steps);
    curve_csv(early_prediction_curve(m, vids, fractions), "fraction",
              "accuracy", cfg.out_dir + "/early_prediction.csv");
    for (SegmentMode mode : {SegmentMode::kUnrolled, SegmentMode::kSliding}) {
      auto deltas = segment_relative_accuracy(m, vids, segments, mode);
      std::vector<std::pair<double, double>> curve;
      for (int s = 0; s < segments; ++s)
        curve.emplace_back(s + 1, deltas[s]);
      curve_csv(curve, "segment", "delta_accuracy",
                cfg.out_dir + (mode == SegmentMode::kUnrolled
                                   ? "/segment_unrolled.csv"
                                   : "/segment_sliding.csv"));
    }
  }

  std::cout << "variant=" << variant_name(spec.variant)
            << " params=" << cost.total_params << " ("
            << cost.total_params / 1e6 << "M) macs=" << cost.total_macs
            << " (" << cost.total_macs / 1e6 << "MMac for "
            << input_t << "x" << input_hw << "x" << input_hw << ", "
            << cost.total_macs / 1e6 / input_t << "MMac/frame)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent-convolutional video networks: train, stream, analyze"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  // a config file provides the defaults; explicit flags override it
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) {
      std::cerr << "error: cannot open config '" << config_path << "'\n";
      return 1;
    }
    try {
      cfg = config_from_json(json::parse(is));
    } catch (const std::exception& e) {
      std::cerr << "error: malformed config: " << e.what() << "\n";
      return 1;
    }
  }

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset split");
  std::string gen_out = "data.bin", gen_task = "direction";
  int gen_clips = 256, gen_t = 12, gen_h = 36, gen_w = 36;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output container path");
  gen->add_option("--task", gen_task, "direction | order | dense");
  gen->add_option("--clips", gen_clips, "number of clips");
  gen->add_option("--frames", gen_t, "frames per clip");
  gen->add_option("--height", gen_h, "frame height");
  gen->add_option("--width", gen_w, "frame width");
  gen->add_option("--seed", gen_seed, "generator seed");

  auto add_arch_opts = [&](CLI::App* c) {
    c->add_option("--arch", cfg.backbone, "tiny | resnet18 | resnet34 | resnet50");
    c->add_option("--variant", cfg.variant, "rcn | i3d | 2plus1d");
    c->add_option("--classes", cfg.classes, "number of classes");
    c->add_flag("--dense-time", cfg.dense_time,
                "temporal stride 1 for i3d/2plus1d (dense prediction)");
    c->add_option("--dtype", cfg.dtype, "wide | narrow");
    c->add_option("--out", cfg.out_dir, "output directory");
    c->add_option("--seed", cfg.seed, "init seed");
  };

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", config_path, "JSON run config");
  add_arch_opts(train);
  train->add_option("--data", cfg.data_train, "training container");
  train->add_option("--val", cfg.data_val, "validation container");
  train->add_option("--init", cfg.init_scheme, "identity | random");
  train->add_option("--donor", cfg.donor, "2D donor checkpoint to inflate");
  train->add_option("--iters", cfg.train.max_iters, "training iterations");
  train->add_option("--batch", cfg.train.batch, "batch size");
  train->add_option("--lr", cfg.train.lr0, "initial learning rate");
  train->add_option("--momentum", cfg.train.momentum, "SGD momentum");
  train->add_option("--wd", cfg.train.weight_decay, "weight decay");
  train->add_option("--drops", cfg.train.lr_drop_steps,
                    "lr drop iterations (factor 10)");
  train->add_option("--clip-t", cfg.train.clip_t, "training clip length");
  int crop = 32;
  train->add_option("--crop", crop, "square crop size");
  train->add_option("--eval-interval", cfg.train.eval_interval,
                    "validation interval");
  train->add_option("--stop-at-acc", cfg.train.stop_at_acc,
                    "stop once val accuracy reaches this");
  train->add_flag("--freeze-bn", cfg.train.freeze_bn, "eval-mode BN while training");
  train->add_flag("--freeze-hidden", cfg.train.freeze_hidden,
                  "do not update hidden kernels");
  train->add_option("--train-seed", cfg.train.seed, "sampler seed");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_protocol = "tenclip";
  int eval_clip_t = 8, eval_crop = 32;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--data", eval_data, "evaluation container")->required();
  eval->add_option("--protocol", eval_protocol, "tenclip | unrolled");
  eval->add_option("--clip-t", eval_clip_t, "clip length for clip accuracy");
  eval->add_option("--crop", eval_crop, "square crop size");
  eval->add_option("--dtype", cfg.dtype, "wide | narrow");

  // stream
  auto* stream = app.add_subcommand(
      "stream", "read frames from a pipe/file, emit one score line per frame");
  std::string stream_ckpt, stream_input;
  stream->add_option("--checkpoint", stream_ckpt, "rcn checkpoint")->required();
  stream->add_option("--input", stream_input, "frame file (default: stdin)");
  stream->add_option("--dtype", cfg.dtype, "wide | narrow");

  // frames (wire-format dump, composes with stream)
  auto* frames = app.add_subcommand(
      "frames", "dump one dataset clip in the stream wire format");
  std::string frames_data;
  int frames_index = 0;
  frames->add_option("--data", frames_data, "dataset container")->required();
  frames->add_option("--index", frames_index, "clip index");
  frames->add_option("--dtype", cfg.dtype, "wide | narrow");

  // analyze
  auto* analyze = app.add_subcommand(
      "analyze", "cost/shape/recurrence reports and behaviour curves");
  add_arch_opts(analyze);
  std::string an_ckpt, an_data;
  int an_t = 16, an_hw = 112, an_segments = 10;
  bool an_curves = false;
  analyze->add_option("--checkpoint", an_ckpt, "optional checkpoint");
  analyze->add_option("--input-t", an_t, "report input frames");
  analyze->add_option("--input-hw", an_hw, "report input height/width");
  analyze->add_flag("--curves", an_curves, "early-prediction + segment curves");
  analyze->add_option("--data", an_data, "labeled videos for --curves");
  analyze->add_option("--segments", an_segments, "segment count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->count("--crop") > 0 || config_path.empty())
      cfg.train.crop_h = cfg.train.crop_w = crop;

    if (*gen)
      return cmd_gen(gen_out, gen_task, gen_clips, gen_t, gen_h, gen_w,
                     gen_seed);
    const bool wide = cfg.dtype == "wide";
    if (!wide && cfg.dtype != "narrow")
      throw std::runtime_error("dtype must be wide or narrow");
    if (*train)
      return wide ? cmd_train<double>(cfg) : cmd_train<float>(cfg);
    if (*eval)
      return wide ? cmd_eval<double>(eval_ckpt, eval_data, eval_protocol,
                                     eval_clip_t, eval_crop)
                  : cmd_eval<float>(eval_ckpt, eval_data, eval_protocol,
                                    eval_clip_t, eval_crop);
    if (*stream)
      return wide ? cmd_stream<double>(stream_ckpt, stream_input)
                  : cmd_stream<float>(stream_ckpt, stream_input);
    if (*frames)
      return wide ? cmd_frames<double>(frames_data, frames_index, std::cout)
                  : cmd_frames<float>(frames_data, frames_index, std::cout);
    if (*analyze)
      return wide ? cmd_analyze<double>(cfg, an_ckpt, an_t, an_hw, an_curves,
                                        an_data, an_segments)
                  : cmd_analyze<float>(cfg, an_ckpt, an_t, an_hw, an_curves,
                                       an_data, an_segments);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
