#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rcn/arch.hpp"

namespace rcn {

// Sets every hidden kernel to the identity map over channels, so that at
// t=1 the hidden state equals the spatial response exactly and the feature
// norm between consecutive 2D layers is preserved.
template <typename T>
void init_identity_hidden(Model<T>& m);

// Fan-in-scaled normal draw for every conv kernel (std = sqrt(2 / fan_in)),
// hidden kernels included; BN resets to gamma=1, beta=0, stats 0/1.
// Bit-deterministic for a given seed.
template <typename T>
void init_random(Model<T>& m, std::uint64_t seed);

// A 2D donor: named spatial kernels and BN parameters covering every spatial
// kernel of a target spec. Kernel names use a variant-neutral ".spatial"
// suffix; temporal extent is 1 in storage.
template <typename T>
struct Donor2dCheckpoint {
  ArchSpec spec;  // topology the donor was built for (variant ignored)
  std::uint64_t seed = 0;
  std::map<std::string, Tensor<T>> blobs;
};

// Copies donor weights into the model: rcn spatial kernels verbatim (their
// temporal extent is already 1); i3d kernels replicated n times along time
// and divided by n, so a temporally constant input reproduces the 2D
// response; BN parameters copied; hidden kernels untouched. The 2plus1d
// variant changes the kernel counts and is rejected.
template <typename T>
void inflate_from_2d(Model<T>& m, const Donor2dCheckpoint<T>& donor);

// Extracts a model's spatial kernels + BN into donor form. The model acts
// as a 2D network (rcn weights read frame-wise; hidden kernels dropped).
template <typename T>
Donor2dCheckpoint<T> make_donor_from_model(Model<T>& m, std::uint64_t seed);

template <typename T>
void save_donor_checkpoint(const Donor2dCheckpoint<T>& d,
                           const std::string& path);
template <typename T>
Donor2dCheckpoint<T> load_donor_checkpoint(const std::string& path);

// Full-model checkpoint: spec, seed metadata, every parameter tensor and BN
// running statistic, bit-exact round trip.
template <typename T>
void save_checkpoint(Model<T>& m, const std::string& path,
                     std::uint64_t seed = 0);

template <typename T>
struct LoadedModel {
  Model<T> model;
  std::uint64_t seed = 0;
};

// Rebuilds the model recorded in the file. If expect_spec is given, a
// mismatch is rejected with a diagnostic.
template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path,
                               const ArchSpec* expect_spec = nullptr);

std::string arch_spec_to_json(const ArchSpec& spec);
ArchSpec arch_spec_from_json(const std::string& json);

}  // namespace rcn
