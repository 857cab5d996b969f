#include "rcn/weights.hpp"

#include <nlohmann/json.hpp>

#include "rcn/binio.hpp"
#include "rcn/rng.hpp"

namespace rcn {

using nlohmann::json;

template <typename T>
void init_identity_hidden(Model<T>& m) {
  if (m.spec.variant != Variant::kRcn)
    throw std::invalid_argument(
        "init_identity_hidden: variant " +
        std::string(variant_name(m.spec.variant)) + " has no hidden kernels");
  for (ParamRef<T>& p : m.params()) {
    if (p.kind != ParamKind::kHiddenKernel) continue;
    Tensor<T>& w = *p.tensor;
    const int n = w.shape().b;
    w.fill(T(0));
    for (int i = 0; i < n; ++i) w.at(i, i, 0, 0, 0) = T(1);
  }
}

template <typename T>
void init_random(Model<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (ParamRef<T>& p : m.params()) {
    Tensor<T>& w = *p.tensor;
    switch (p.kind) {
      case ParamKind::kConvKernel:
      case ParamKind::kHiddenKernel: {
        const Shape5& s = w.shape();
        const double fan_in =
            static_cast<double>(s.c) * s.t * s.h * s.w;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < w.numel(); ++i)
          w[i] = static_cast<T>(rng.normal(0.0, stddev));
        break;
      }
      case ParamKind::kBnGamma: w.fill(T(1)); break;
      case ParamKind::kBnBeta: w.fill(T(0)); break;
      case ParamKind::kBnRunningMean: w.fill(T(0)); break;
      case ParamKind::kBnRunningVar: w.fill(T(1)); break;
    }
  }
}

namespace {

// conv kernel names map to variant-neutral donor names:
//   conv1.w_xh / conv1.w  ->  conv1.spatial
std::string donor_kernel_name(const std::string& param_name) {
  auto strip = [&](const char* suffix) -> std::string {
    const std::string suf(suffix);
    if (param_name.size() > suf.size() &&
        param_name.compare(param_name.size() - suf.size(), suf.size(), suf) ==
            0)
      return param_name.substr(0, param_name.size() - suf.size()) +
             ".spatial";
    return {};
  };
  for (const char* suf : {".w_xh", ".w"}) {
    std::string s = strip(suf);
    if (!s.empty()) return s;
  }
  return {};
}

}  // namespace

template <typename T>
Donor2dCheckpoint<T> make_donor_from_model(Model<T>& m, std::uint64_t seed) {
  if (m.spec.variant == Variant::k2Plus1d)
    throw std::invalid_argument(
        "a 2plus1d model cannot act as a 2D donor (kernel counts differ)");
  Donor2dCheckpoint<T> d;
  d.spec = m.spec;
  d.seed = seed;
  for (ParamRef<T>& p : m.params()) {
    if (p.kind == ParamKind::kHiddenKernel) continue;
    if (p.kind == ParamKind::kConvKernel) {
      const std::string name = donor_kernel_name(p.name);
      if (name.empty())
        throw std::logic_error("unrecognized kernel name " + p.name);
      Tensor<T> k = *p.tensor;
      if (k.shape().t != 1) {
        // collapse temporal taps so the donor is a genuine 2D kernel
        const Shape5& s = k.shape();
        Tensor<T> flat(Shape5{s.b, s.c, 1, s.h, s.w});
        for (int o = 0; o < s.b; ++o)
          for (int i = 0; i < s.c; ++i)
            for (int dt = 0; dt < s.t; ++dt)
              for (int dh = 0; dh < s.h; ++dh)
                for (int dw = 0; dw < s.w; ++dw)
                  flat.at(o, i, 0, dh, dw) += k.at(o, i, dt, dh, dw);
        k = std::move(flat);
      }
      d.blobs.emplace(name, std::move(k));
    } else {
      d.blobs.emplace(p.name, *p.tensor);
    }
  }
  return d;
}

template <typename T>
void inflate_from_2d(Model<T>& m, const Donor2dCheckpoint<T>& donor) {
  if (m.spec.variant == Variant::k2Plus1d)
    throw std::invalid_argument(
        "donor inflation unsupported for the 2plus1d variant: the middle "
        "plane count changes the number of kernels");
  for (ParamRef<T>& p : m.params()) {
    if (p.kind == ParamKind::kHiddenKernel) continue;  // untouched
    std::string name =
        p.kind == ParamKind::kConvKernel ? donor_kernel_name(p.name) : p.name;
    auto it = donor.blobs.find(name);
    if (it == donor.blobs.end())
      throw std::invalid_argument("donor checkpoint is missing entry '" +
                                  name + "' needed by " + p.name);
    const Tensor<T>& src = it->second;
    Tensor<T>& dst = *p.tensor;
    if (p.kind != ParamKind::kConvKernel) {
      if (src.shape() != dst.shape())
        throw std::invalid_argument("donor entry '" + name + "' has shape " +
                                    src.shape().str() + ", expected " +
                                    dst.shape().str());
      dst = src;
      continue;
    }
    const Shape5& ss = src.shape();
    const Shape5& ds = dst.shape();
    if (ss.b != ds.b || ss.c != ds.c || ss.h != ds.h || ss.w != ds.w ||
        ss.t != 1)
      throw std::invalid_argument("donor entry '" + name + "' has shape " +
                                  ss.str() + ", incompatible with kernel " +
                                  ds.str());
    const int n = ds.t;
    const T scale = T(1) / static_cast<T>(n);
    for (int o = 0; o < ds.b; ++o)
      for (int i = 0; i < ds.c; ++i)
        for (int dt = 0; dt < n; ++dt)
          for (int dh = 0; dh < ds.h; ++dh)
            for (int dw = 0; dw < ds.w; ++dw)
              dst.at(o, i, dt, dh, dw) =
                  (n == 1) ? src.at(o, i, 0, dh, dw)
                           : src.at(o, i, 0, dh, dw) * scale;
  }
}

// ---- containers ----------------------------------------------------------

std::string arch_spec_to_json(const ArchSpec& spec) {
  json j;
  j["backbone"] = spec.backbone;
  j["variant"] = variant_name(spec.variant);
  j["num_classes"] = spec.num_classes;
  j["in_channels"] = spec.in_channels;
  j["dense_time"] = spec.dense_time;
  return j.dump();
}

ArchSpec arch_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  ArchSpec s;
  s.backbone = j.at("backbone").get<std::string>();
  s.variant = variant_from_name(j.at("variant").get<std::string>());
  s.num_classes = j.at("num_classes").get<int>();
  s.in_channels = j.at("in_channels").get<int>();
  s.dense_time = j.value("dense_time", false);
  return s;
}

namespace {

constexpr char kCkptMagic[] = "RCNCKPT1";
constexpr char kEndMagic[] = "RCNEND__";

template <typename T>
void write_blob(std::ostream& os, const std::string& name, ParamKind kind,
                const Tensor<T>& t) {
  write_string(os, name);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(kind));
  const Shape5& s = t.shape();
  for (int d : {s.b, s.c, s.t, s.h, s.w})
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  write_bytes(os, t.data(), t.numel() * sizeof(T));
}

template <typename T>
std::tuple<std::string, ParamKind, Tensor<T>> read_blob(std::istream& is) {
  std::string name = read_string(is, "blob name");
  const auto kind = read_pod<std::uint8_t>(is, "blob kind");
  Shape5 s;
  s.b = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
  s.c = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
  s.t = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
  s.h = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
  s.w = static_cast<int>(read_pod<std::uint32_t>(is, "dim"));
  Tensor<T> t(s);
  read_bytes(is, t.data(), t.numel() * sizeof(T), "blob '" + name + "' data");
  return {std::move(name), static_cast<ParamKind>(kind), std::move(t)};
}

template <typename T>
void write_container(std::ostream& os, const std::string& topology,
                     const ArchSpec& spec, std::uint64_t seed,
                     const std::vector<std::tuple<std::string, ParamKind,
                                                  const Tensor<T>*>>& blobs) {
  write_bytes(os, kCkptMagic, 8);
  write_pod<std::uint32_t>(os, 1u);  // version
  write_string(os, topology);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  write_string(os, arch_spec_to_json(spec));
  write_pod<std::uint64_t>(os, seed);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, kind, t] : blobs) write_blob(os, name, kind, *t);
  write_bytes(os, kEndMagic, 8);
}

struct ContainerHeader {
  std::string topology;
  Dtype dtype;
  ArchSpec spec;
  std::uint64_t seed;
  std::uint32_t blob_count;
};

ContainerHeader read_container_header(std::istream& is) {
  expect_magic(is, kCkptMagic, "checkpoint");
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  ContainerHeader h;
  h.topology = read_string(is, "topology");
  h.dtype = static_cast<Dtype>(read_pod<std::uint8_t>(is, "dtype"));
  h.spec = arch_spec_from_json(read_string(is, "spec"));
  h.seed = read_pod<std::uint64_t>(is, "seed");
  h.blob_count = read_pod<std::uint32_t>(is, "blob count");
  return h;
}

void read_trailer(std::istream& is) {
  char buf[9] = {0};
  read_bytes(is, buf, 8, "trailer");
  if (std::string(buf, 8) != kEndMagic)
    throw std::runtime_error("corrupt file: bad trailer");
}

}  // namespace

template <typename T>
void save_checkpoint(Model<T>& m, const std::string& path,
                     std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  std::vector<std::tuple<std::string, ParamKind, const Tensor<T>*>> blobs;
  for (ParamRef<T>& p : m.params()) blobs.emplace_back(p.name, p.kind, p.tensor);
  write_container(os, "3d", m.spec, seed, blobs);
}

template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path,
                               const ArchSpec* expect_spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  ContainerHeader h = read_container_header(is);
  if (h.topology != "3d")
    throw std::runtime_error("checkpoint '" + path +
                             "' holds a " + h.topology +
                             " container, not a model");
  if (h.dtype != dtype_of<T>())
    throw std::runtime_error("checkpoint precision is " +
                             std::string(dtype_name(h.dtype)) +
                             ", requested " +
                             std::string(dtype_name(dtype_of<T>())));
  if (expect_spec && !(h.spec == *expect_spec))
    throw std::runtime_error(
        "checkpoint spec mismatch: file holds " + arch_spec_to_json(h.spec) +
        ", expected " + arch_spec_to_json(*expect_spec));
  LoadedModel<T> out{build_model<T>(h.spec), h.seed};
  std::map<std::string, Tensor<T>> blobs;
  for (std::uint32_t i = 0; i < h.blob_count; ++i) {
    auto [name, kind, t] = read_blob<T>(is);
    blobs.emplace(std::move(name), std::move(t));
  }
  read_trailer(is);
  for (ParamRef<T>& p : out.model.params()) {
    auto it = blobs.find(p.name);
    if (it == blobs.end())
      throw std::runtime_error("checkpoint is missing parameter '" + p.name +
                               "'");
    if (it->second.shape() != p.tensor->shape())
      throw std::runtime_error("checkpoint parameter '" + p.name +
                               "' has shape " + it->second.shape().str() +
                               ", expected " + p.tensor->shape().str());
    *p.tensor = std::move(it->second);
  }
  return out;
}

template <typename T>
void save_donor_checkpoint(const Donor2dCheckpoint<T>& d,
                           const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  std::vector<std::tuple<std::string, ParamKind, const Tensor<T>*>> blobs;
  for (const auto& [name, t] : d.blobs)
    blobs.emplace_back(name, ParamKind::kConvKernel, &t);
  write_container(os, "2d", d.spec, d.seed, blobs);
}

template <typename T>
Donor2dCheckpoint<T> load_donor_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  ContainerHeader h = read_container_header(is);
  if (h.topology != "2d")
    throw std::runtime_error("'" + path + "' is not a 2d donor checkpoint");
  if (h.dtype != dtype_of<T>())
    throw std::runtime_error("donor precision mismatch");
  Donor2dCheckpoint<T> d;
  d.spec = h.spec;
  d.seed = h.seed;
  for (std::uint32_t i = 0; i < h.blob_count; ++i) {
    auto [name, kind, t] = read_blob<T>(is);
    (void)kind;
    d.blobs.emplace(std::move(name), std::move(t));
  }
  read_trailer(is);
  return d;
}

#define RCN_INSTANTIATE_WEIGHTS(T)                                            \
  template void init_identity_hidden<T>(Model<T>&);                           \
  template void init_random<T>(Model<T>&, std::uint64_t);                     \
  template struct Donor2dCheckpoint<T>;                                       \
  template Donor2dCheckpoint<T> make_donor_from_model<T>(Model<T>&,           \
                                                         std::uint64_t);      \
  template void inflate_from_2d<T>(Model<T>&, const Donor2dCheckpoint<T>&);   \
  template void save_donor_checkpoint<T>(const Donor2dCheckpoint<T>&,         \
                                         const std::string&);                 \
  template Donor2dCheckpoint<T> load_donor_checkpoint<T>(const std::string&); \
  template void save_checkpoint<T>(Model<T>&, const std::string&,             \
                                   std::uint64_t);                            \
  template LoadedModel<T> load_checkpoint<T>(const std::string&,              \
                                             const ArchSpec*);

RCN_INSTANTIATE_WEIGHTS(float)
RCN_INSTANTIATE_WEIGHTS(double)

}  // namespace rcn
