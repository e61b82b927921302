#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnds/tensor.hpp"

namespace cnds {

enum class BlockKind { Conv, Maxpool, Linear, SoftmaxHead };

struct BlockSpec {
    BlockKind kind = BlockKind::Conv;
    std::string name;
    // conv
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool relu = false; // conv and linear
    // maxpool
    int window = 0; // stride shared with conv field
    // linear
    int out_dim = 0;
    // softmax head
    int classes = 0;

    static BlockSpec conv(std::string name, int out_channels, int kernel, int stride, int pad,
                          bool relu);
    static BlockSpec maxpool(std::string name, int window, int stride);
    static BlockSpec linear(std::string name, int out_dim, bool relu);
    static BlockSpec softmax_head(std::string name, int classes);
};

struct BranchSpec {
    std::string attach_after; // main-path block name
    std::vector<BlockSpec> blocks;
    real alpha0 = 0.3;
};

struct NetworkSpec {
    std::vector<BlockSpec> main_path;
    std::vector<BranchSpec> branches;
};

// One parameterized block's storage. partition is -1 for the main path,
// otherwise the owning branch index.
struct ParamBlock {
    std::string block_name;
    int partition = -1;
    Tensor w;
    Tensor b;
};

struct ParameterStore {
    std::vector<ParamBlock> blocks;

    ParameterStore zeros_like() const;
    const ParamBlock* find(const std::string& block_name) const;
    ParamBlock* find(const std::string& block_name);
    long long element_count() const;
};

using GradientStore = ParameterStore;

// Which loss heads participate in a backward pass: head -1 is the main head,
// head j >= 0 is branch j, each scaled by its weight.
struct HeadWeight {
    int head = -1;
    real weight = 1.0;
};

// Everything forward produced, consumed by backward. labels / losses are
// filled only by the labeled forward overload.
struct ActivationRecord {
    const void* net_id = nullptr;
    Tensor input;
    std::vector<Tensor> main_acts;                       // output of each main block
    std::vector<std::vector<int>> main_argmax;           // per main block, pools only
    std::vector<std::vector<Tensor>> branch_acts;        // per branch, per block
    std::vector<std::vector<std::vector<int>>> branch_argmax;
    std::vector<int> labels;
    real main_loss = 0.0;
    std::vector<real> branch_losses;

    const Tensor& main_probs() const { return main_acts.back(); }
    const Tensor& branch_probs(int j) const { return branch_acts[(size_t)j].back(); }
};

// A block with its shapes resolved against the network input.
struct BuiltBlock {
    BlockSpec spec;
    std::vector<int> in_shape;  // per-example, batch dimension excluded
    std::vector<int> out_shape;
    int param_index = -1; // into ParameterStore::blocks; -1 when parameterless
};

struct BuiltBranch {
    int attach_index = -1; // main-path block index the branch reads from
    std::vector<BuiltBlock> blocks;
    real alpha0 = 0.3;
};

class Network {
public:
    // input_chw is the per-example input shape {C, H, W}. Throws
    // std::invalid_argument on unknown attach points, duplicate names, or
    // shapes that collapse to nonpositive extents.
    static Network build(const NetworkSpec& spec, const std::vector<int>& input_chw);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<int>& input_shape() const { return input_chw_; }
    const std::vector<BuiltBlock>& main_blocks() const { return main_; }
    const std::vector<BuiltBranch>& branches() const { return branches_; }
    int num_classes() const;
    // Conv-block names in main-path order (probe targets).
    std::vector<std::string> conv_block_names() const;

    // Parameter store with the right structure and all values zero.
    ParameterStore zero_params() const;
    // Gaussian(0, std^2) weights from a seeded generator, biases exactly 0.
    ParameterStore init_params(std::uint64_t seed, real std_dev = 0.01) const;

    ActivationRecord forward(const ParameterStore& params, const Tensor& batch) const;
    // Also computes per-head mean cross-entropy losses.
    ActivationRecord forward(const ParameterStore& params, const Tensor& batch,
                             const std::vector<int>& labels) const;

    // Sum over heads of weight x (that head's loss gradient). Each head's
    // walk is computed at unit scale and accumulated as weight * unit, so
    // contributions are exactly linear in the weights.
    GradientStore backward(const ParameterStore& params, const ActivationRecord& acts,
                           const std::vector<HeadWeight>& head_weights) const;

private:
    NetworkSpec spec_;
    std::vector<int> input_chw_;
    std::vector<BuiltBlock> main_;
    std::vector<BuiltBranch> branches_;
    long long param_block_count_ = 0;
};

// Mean absolute value over the named block's weight gradient (biases
// excluded). Throws std::invalid_argument for parameterless blocks.
real mean_gradient_magnitude(const GradientStore& grads, const std::string& block_name);

} // namespace cnds
