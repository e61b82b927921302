#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cnds/data.hpp"
#include "cnds/network.hpp"

namespace cnds {

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int epoch = 0;
    real alpha = 0.0;
    std::uint64_t seed = 0;
};

// Fraction of rows whose true label is not among the k highest-probability
// classes; probability ties rank the lower class index first.
real top_k_error(const Tensor& probs, const std::vector<int>& labels, int k);

// Mean top-1 / top-k error of the main head over a dataset, evaluated in
// batches. k is clamped to the class count.
std::pair<real, real> evaluate_top_errors(const Network& net, const ParameterStore& params,
                                          const Dataset& ds, int batch_size, int k = 5);

// Removes every branch and its parameters; main path and its parameters are
// returned bit-for-bit unchanged.
std::pair<NetworkSpec, ParameterStore> strip_branches(const NetworkSpec& spec,
                                                      const ParameterStore& params);

// Binary checkpoint: magic "CNDS", little-endian u32 version, u64 length +
// UTF-8 spec text (config grammar), then per tensor (weights then bias per
// parameterized block, declaration order): u8 rank, u32 extents, f32 payload.
void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const ParameterStore& params, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    NetworkSpec spec;
    ParameterStore params;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace cnds
