#include "cnds/network.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "cnds/kernels.hpp"
#include "cnds/ops.hpp"

namespace cnds {

BlockSpec BlockSpec::conv(std::string name, int out_channels, int kernel, int stride, int pad,
                          bool relu) {
    BlockSpec b;
    b.kind = BlockKind::Conv;
    b.name = std::move(name);
    b.out_channels = out_channels;
    b.kernel = kernel;
    b.stride = stride;
    b.pad = pad;
    b.relu = relu;
    return b;
}

BlockSpec BlockSpec::maxpool(std::string name, int window, int stride) {
    BlockSpec b;
    b.kind = BlockKind::Maxpool;
    b.name = std::move(name);
    b.window = window;
    b.stride = stride;
    return b;
}

BlockSpec BlockSpec::linear(std::string name, int out_dim, bool relu) {
    BlockSpec b;
    b.kind = BlockKind::Linear;
    b.name = std::move(name);
    b.out_dim = out_dim;
    b.relu = relu;
    return b;
}

BlockSpec BlockSpec::softmax_head(std::string name, int classes) {
    BlockSpec b;
    b.kind = BlockKind::SoftmaxHead;
    b.name = std::move(name);
    b.classes = classes;
    return b;
}

ParameterStore ParameterStore::zeros_like() const {
    ParameterStore out;
    out.blocks.reserve(blocks.size());
    for (const auto& pb : blocks)
        out.blocks.push_back({pb.block_name, pb.partition, Tensor(pb.w.shape()),
                              Tensor(pb.b.shape())});
    return out;
}

const ParamBlock* ParameterStore::find(const std::string& block_name) const {
    for (const auto& pb : blocks)
        if (pb.block_name == block_name) return &pb;
    return nullptr;
}

ParamBlock* ParameterStore::find(const std::string& block_name) {
    for (auto& pb : blocks)
        if (pb.block_name == block_name) return &pb;
    return nullptr;
}

long long ParameterStore::element_count() const {
    long long n = 0;
    for (const auto& pb : blocks) n += pb.w.size() + pb.b.size();
    return n;
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// Resolves one block's output shape from its input shape; throws on any
// geometry that cannot be realized. Shapes are per-example: {C,H,W} in the
// convolutional part, {D} once the path has gone fully connected.
std::vector<int> resolve_shape(const BlockSpec& b, const std::vector<int>& in) {
    switch (b.kind) {
        case BlockKind::Conv: {
            if (in.size() != 3)
                fail("block '" + b.name + "': conv requires a C x H x W input, but the path is "
                     "already fully connected");
            if (b.out_channels < 1 || b.kernel < 1 || b.stride < 1 || b.pad < 0)
                fail("block '" + b.name + "': bad conv geometry");
            const int oh = (in[1] + 2 * b.pad - b.kernel) / b.stride + 1;
            const int ow = (in[2] + 2 * b.pad - b.kernel) / b.stride + 1;
            if (in[1] + 2 * b.pad < b.kernel || in[2] + 2 * b.pad < b.kernel || oh < 1 || ow < 1)
                fail("block '" + b.name + "': output extent collapses to zero for input " +
                     shape_to_string(in));
            return {b.out_channels, oh, ow};
        }
        case BlockKind::Maxpool: {
            if (in.size() != 3)
                fail("block '" + b.name + "': pool requires a C x H x W input");
            if (b.window < 1 || b.stride < 1)
                fail("block '" + b.name + "': bad pool geometry");
            if (b.window > in[1] || b.window > in[2])
                fail("block '" + b.name + "': pool window " + std::to_string(b.window) +
                     " exceeds input " + shape_to_string(in));
            return {in[0], (in[1] - b.window) / b.stride + 1, (in[2] - b.window) / b.stride + 1};
        }
        case BlockKind::Linear: {
            if (b.out_dim < 1) fail("block '" + b.name + "': linear out dimension must be >= 1");
            return {b.out_dim};
        }
        case BlockKind::SoftmaxHead: {
            if (b.classes < 1) fail("block '" + b.name + "': head needs >= 1 classes");
            if (shape_product(in) != b.classes)
                fail("block '" + b.name + "': head expects " + std::to_string(b.classes) +
                     " inputs per example but the incoming shape " + shape_to_string(in) +
                     " has " + std::to_string(shape_product(in)));
            return {b.classes};
        }
    }
    fail("unreachable block kind");
}

bool has_params(const BlockSpec& b) {
    return b.kind == BlockKind::Conv || b.kind == BlockKind::Linear;
}

// Validates a path (main or branch): nonempty, exactly one softmax head, at
// the end.
void check_path(const std::vector<BlockSpec>& blocks, const std::string& what) {
    if (blocks.empty()) fail(what + " is empty");
    for (size_t i = 0; i < blocks.size(); ++i) {
        const bool is_head = blocks[i].kind == BlockKind::SoftmaxHead;
        const bool is_last = i + 1 == blocks.size();
        if (is_last && !is_head)
            fail(what + " must end in a softmax head, but '" + blocks[i].name + "' is not one");
        if (!is_last && is_head)
            fail(what + ": softmax head '" + blocks[i].name + "' is not the final block");
    }
}

std::vector<BuiltBlock> build_path(const std::vector<BlockSpec>& blocks,
                                   std::vector<int> in_shape, long long& param_counter) {
    std::vector<BuiltBlock> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) {
        BuiltBlock bb;
        bb.spec = b;
        bb.in_shape = in_shape;
        bb.out_shape = resolve_shape(b, in_shape);
        if (has_params(b)) bb.param_index = (int)param_counter++;
        in_shape = bb.out_shape;
        out.push_back(std::move(bb));
    }
    return out;
}

void axpy(real a, const Tensor& x, Tensor& y) {
    const real* xs = x.data();
    real* ys = y.data();
    const long long n = x.size();
    for (long long i = 0; i < n; ++i) ys[i] += a * xs[i];
}

// Backpropagates g (the gradient w.r.t. blocks[i_start]'s output) down to the
// path input. Unit-scale parameter gradients are accumulated into grads as
// factor * unit, keeping every head's contribution exactly linear in factor.
Tensor backprop_blocks(const std::vector<BuiltBlock>& blocks, int i_start,
                       const Tensor& path_input, const std::vector<Tensor>& acts,
                       const std::vector<std::vector<int>>& argmax,
                       const ParameterStore& params, Tensor g, GradientStore& grads,
                       real factor) {
    for (int i = i_start; i >= 0; --i) {
        const BuiltBlock& bb = blocks[(size_t)i];
        const Tensor& out_act = acts[(size_t)i];
        const Tensor& in_act = i == 0 ? path_input : acts[(size_t)i - 1];
        g = reshaped(std::move(g), out_act.shape());
        switch (bb.spec.kind) {
            case BlockKind::Conv: {
                if (bb.spec.relu) {
                    Tensor masked;
                    kernels::relu_backward(g, out_act, masked);
                    g = std::move(masked);
                }
                const ParamBlock& pb = params.blocks[(size_t)bb.param_index];
                Tensor gw(pb.w.shape()), gb(pb.b.shape());
                kernels::conv2d_backward_params(g, in_act, bb.spec.stride, bb.spec.pad, gw, gb);
                axpy(factor, gw, grads.blocks[(size_t)bb.param_index].w);
                axpy(factor, gb, grads.blocks[(size_t)bb.param_index].b);
                Tensor gi(in_act.shape());
                kernels::conv2d_backward_input(g, pb.w, bb.spec.stride, bb.spec.pad, gi);
                g = std::move(gi);
                break;
            }
            case BlockKind::Maxpool: {
                Tensor gi(in_act.shape());
                kernels::maxpool_backward(g, argmax[(size_t)i], bb.spec.window, bb.spec.stride,
                                          gi);
                g = std::move(gi);
                break;
            }
            case BlockKind::Linear: {
                if (bb.spec.relu) {
                    Tensor masked;
                    kernels::relu_backward(g, out_act, masked);
                    g = std::move(masked);
                }
                const ParamBlock& pb = params.blocks[(size_t)bb.param_index];
                Tensor gw(pb.w.shape()), gb(pb.b.shape());
                kernels::linear_backward_params(g, in_act, gw, gb);
                axpy(factor, gw, grads.blocks[(size_t)bb.param_index].w);
                axpy(factor, gb, grads.blocks[(size_t)bb.param_index].b);
                Tensor gi(in_act.shape());
                kernels::linear_backward_input(g, pb.w, gi);
                g = std::move(gi);
                break;
            }
            case BlockKind::SoftmaxHead:
                fail("internal: softmax head reached inside a backward walk");
        }
    }
    return reshaped(std::move(g), path_input.shape());
}

// Runs one path forward from `input` through `blocks`, recording every
// activation (softmax-head blocks record probabilities) and pool argmaxes.
void forward_path(const std::vector<BuiltBlock>& blocks, const ParameterStore& params,
                  const Tensor& input, std::vector<Tensor>& acts,
                  std::vector<std::vector<int>>& argmax) {
    acts.clear();
    argmax.assign(blocks.size(), {});
    const Tensor* cur = &input;
    for (size_t i = 0; i < blocks.size(); ++i) {
        const BuiltBlock& bb = blocks[i];
        Tensor out;
        switch (bb.spec.kind) {
            case BlockKind::Conv: {
                const ParamBlock& pb = params.blocks[(size_t)bb.param_index];
                out = conv2d(*cur, pb.w, pb.b, bb.spec.stride, bb.spec.pad);
                if (bb.spec.relu) out = relu(out);
                break;
            }
            case BlockKind::Maxpool: {
                Tensor pooled;
                kernels::maxpool_forward(*cur, bb.spec.window, bb.spec.stride, pooled, argmax[i]);
                out = std::move(pooled);
                break;
            }
            case BlockKind::Linear: {
                const ParamBlock& pb = params.blocks[(size_t)bb.param_index];
                out = linear(*cur, pb.w, pb.b);
                if (bb.spec.relu) out = relu(out);
                break;
            }
            case BlockKind::SoftmaxHead:
                out = softmax(flatten_rows(*cur));
                break;
        }
        acts.push_back(std::move(out));
        cur = &acts.back();
    }
}

} // namespace

Network Network::build(const NetworkSpec& spec, const std::vector<int>& input_chw) {
    if (input_chw.size() != 3 || input_chw[0] < 1 || input_chw[1] < 1 || input_chw[2] < 1)
        fail("network input shape must be {C, H, W} with positive extents, got " +
             shape_to_string(input_chw));
    check_path(spec.main_path, "main path");

    std::set<std::string> names;
    auto claim_name = [&names](const std::string& n) {
        if (n.empty()) fail("block with empty name");
        if (!names.insert(n).second) fail("duplicate block name '" + n + "'");
    };
    for (const auto& b : spec.main_path) claim_name(b.name);
    for (const auto& br : spec.branches)
        for (const auto& b : br.blocks) claim_name(b.name);

    Network net;
    net.spec_ = spec;
    net.input_chw_ = input_chw;
    long long param_counter = 0;
    net.main_ = build_path(spec.main_path, input_chw, param_counter);

    // First fully connected main block; branches must attach strictly below it.
    size_t first_linear = spec.main_path.size();
    for (size_t i = 0; i < spec.main_path.size(); ++i) {
        if (spec.main_path[i].kind == BlockKind::Linear) {
            first_linear = i;
            break;
        }
    }

    std::set<std::string> used_attach;
    for (const auto& br : spec.branches) {
        if (br.alpha0 < 0) fail("branch at '" + br.attach_after + "': alpha0 must be >= 0");
        check_path(br.blocks, "branch at '" + br.attach_after + "'");
        int attach = -1;
        for (size_t i = 0; i < net.main_.size(); ++i)
            if (net.main_[i].spec.name == br.attach_after) attach = (int)i;
        if (attach < 0) fail("branch attach point '" + br.attach_after + "' is not a main-path block");
        if ((size_t)attach >= first_linear)
            fail("branch attach point '" + br.attach_after +
                 "' must lie strictly before the first fully connected layer");
        const BlockKind k = net.main_[(size_t)attach].spec.kind;
        if (k != BlockKind::Conv && k != BlockKind::Maxpool)
            fail("branch attach point '" + br.attach_after + "' must be a conv or pool block");
        if (!used_attach.insert(br.attach_after).second)
            fail("duplicate branch attach point '" + br.attach_after + "'");
        BuiltBranch bb;
        bb.attach_index = attach;
        bb.alpha0 = br.alpha0;
        bb.blocks = build_path(br.blocks, net.main_[(size_t)attach].out_shape, param_counter);
        net.branches_.push_back(std::move(bb));
    }
    net.param_block_count_ = param_counter;
    return net;
}

int Network::num_classes() const { return main_.back().spec.classes; }

std::vector<std::string> Network::conv_block_names() const {
    std::vector<std::string> out;
    for (const auto& bb : main_)
        if (bb.spec.kind == BlockKind::Conv) out.push_back(bb.spec.name);
    return out;
}

ParameterStore Network::zero_params() const {
    ParameterStore store;
    auto add_path = [&](const std::vector<BuiltBlock>& blocks, int partition) {
        for (const auto& bb : blocks) {
            if (bb.param_index < 0) continue;
            ParamBlock pb;
            pb.block_name = bb.spec.name;
            pb.partition = partition;
            if (bb.spec.kind == BlockKind::Conv) {
                pb.w = Tensor({bb.spec.out_channels, bb.in_shape[0], bb.spec.kernel,
                               bb.spec.kernel});
                pb.b = Tensor({bb.spec.out_channels});
            } else { // linear
                pb.w = Tensor({bb.spec.out_dim, (int)shape_product(bb.in_shape)});
                pb.b = Tensor({bb.spec.out_dim});
            }
            store.blocks.push_back(std::move(pb));
        }
    };
    add_path(main_, -1);
    for (size_t j = 0; j < branches_.size(); ++j) add_path(branches_[j].blocks, (int)j);
    return store;
}

ParameterStore Network::init_params(std::uint64_t seed, real std_dev) const {
    if (!(std_dev > 0)) fail("init_params: std must be > 0");
    std::mt19937_64 gen(seed);
    std::normal_distribution<real> dist(0.0, std_dev);
    ParameterStore store = zero_params();
    for (auto& pb : store.blocks)
        for (auto& v : pb.w.raw()) v = dist(gen);
    return store;
}

ActivationRecord Network::forward(const ParameterStore& params, const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != input_chw_[0] || batch.dim(2) != input_chw_[1] ||
        batch.dim(3) != input_chw_[2])
        fail("forward: batch shape " + batch.shape_str() + " does not match network input {C,H,W} = " +
             shape_to_string(input_chw_));
    if ((long long)params.blocks.size() != param_block_count_)
        fail("forward: parameter store has " + std::to_string(params.blocks.size()) +
             " blocks, network expects " + std::to_string(param_block_count_));
    ActivationRecord rec;
    rec.net_id = this;
    rec.input = batch;
    forward_path(main_, params, rec.input, rec.main_acts, rec.main_argmax);
    rec.branch_acts.resize(branches_.size());
    rec.branch_argmax.resize(branches_.size());
    for (size_t j = 0; j < branches_.size(); ++j)
        forward_path(branches_[j].blocks, params, rec.main_acts[(size_t)branches_[j].attach_index],
                     rec.branch_acts[j], rec.branch_argmax[j]);
    return rec;
}

ActivationRecord Network::forward(const ParameterStore& params, const Tensor& batch,
                                  const std::vector<int>& labels) const {
    if ((long long)labels.size() != batch.dim(0))
        fail("forward: batch size " + std::to_string(batch.dim(0)) + " != label count " +
             std::to_string(labels.size()));
    ActivationRecord rec = forward(params, batch);
    rec.labels = labels;
    rec.main_loss = cross_entropy(rec.main_probs(), labels);
    rec.branch_losses.resize(branches_.size());
    for (size_t j = 0; j < branches_.size(); ++j)
        rec.branch_losses[j] = cross_entropy(rec.branch_probs((int)j), labels);
    return rec;
}

GradientStore Network::backward(const ParameterStore& params, const ActivationRecord& acts,
                                const std::vector<HeadWeight>& head_weights) const {
    if (acts.net_id != this)
        fail("backward: activation record was produced by a different network");
    if (acts.main_acts.size() != main_.size())
        fail("backward: stale activation record (block count mismatch)");
    if (acts.labels.empty())
        fail("backward: activation record has no labels; use the labeled forward overload");
    GradientStore grads = params.zeros_like();
    for (const HeadWeight& hw : head_weights) {
        if (hw.head == -1) {
            Tensor g = softmax_ce_grad(acts.main_probs(), acts.labels);
            backprop_blocks(main_, (int)main_.size() - 2, acts.input, acts.main_acts,
                            acts.main_argmax, params, std::move(g), grads, hw.weight);
        } else {
            if (hw.head < 0 || (size_t)hw.head >= branches_.size())
                fail("backward: head index " + std::to_string(hw.head) + " out of range");
            const BuiltBranch& br = branches_[(size_t)hw.head];
            const Tensor& branch_input = acts.main_acts[(size_t)br.attach_index];
            Tensor g = softmax_ce_grad(acts.branch_probs(hw.head), acts.labels);
            g = backprop_blocks(br.blocks, (int)br.blocks.size() - 2, branch_input,
                                acts.branch_acts[(size_t)hw.head],
                                acts.branch_argmax[(size_t)hw.head], params, std::move(g), grads,
                                hw.weight);
            // Continue through the shared lower main-path blocks; everything
            // above the attach point receives nothing from this head.
            backprop_blocks(main_, br.attach_index, acts.input, acts.main_acts, acts.main_argmax,
                            params, std::move(g), grads, hw.weight);
        }
    }
    return grads;
}

real mean_gradient_magnitude(const GradientStore& grads, const std::string& block_name) {
    const ParamBlock* pb = grads.find(block_name);
    if (pb == nullptr)
        throw std::invalid_argument("mean_gradient_magnitude: block '" + block_name +
                                    "' has no weight parameters");
    real sum = 0.0;
    for (long long i = 0; i < pb->w.size(); ++i) sum += std::fabs(pb->w.data()[i]);
    return sum / (real)pb->w.size();
}

} // namespace cnds
