#include "cnds/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cnds/errors.hpp"
#include "cnds/trainer.hpp"

namespace cnds {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_probe_config(const ProbeConfig& cfg) {
    if (cfg.iterations < 1) fail("probe: iterations must be >= 1");
    if (!(cfg.threshold > 0)) fail("probe: threshold must be > 0");
    if (cfg.batch_size < 1) fail("probe: batch_size must be >= 1");
}

} // namespace

std::vector<std::vector<real>> probe_magnitudes(const NetworkSpec& spec, const Dataset& data,
                                                const ProbeConfig& cfg) {
    check_probe_config(cfg);
    if (data.count() < 1) fail("probe: dataset is empty");
    const Network net = Network::build(spec, data.example_shape());
    ParameterStore params = net.init_params(cfg.seed, 0.01);
    OptimizerState velocity = params.zeros_like();

    std::vector<HeadWeight> heads{{-1, 1.0}};
    for (size_t j = 0; j < net.branches().size(); ++j)
        heads.push_back({(int)j, net.branches()[j].alpha0});

    const std::vector<std::string> conv_names = net.conv_block_names();
    std::vector<std::vector<real>> rows;
    rows.reserve((size_t)cfg.iterations);

    int epoch = 0;
    BatchIterator it(data, cfg.batch_size, cfg.seed, epoch);
    Tensor images;
    std::vector<int> labels;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (!it.next(images, labels)) {
            it = BatchIterator(data, cfg.batch_size, cfg.seed, ++epoch);
            it.next(images, labels);
        }
        const ActivationRecord rec = net.forward(params, images, labels);
        if (!std::isfinite(rec.main_loss))
            throw DivergenceError(0, iter, "non-finite loss during probe");
        const GradientStore grads = net.backward(params, rec, heads);
        std::vector<real> row;
        row.reserve(conv_names.size());
        for (const auto& name : conv_names) row.push_back(mean_gradient_magnitude(grads, name));
        rows.push_back(std::move(row));
        sgd_step(params, grads, velocity, cfg.learning_rate, 0.0, 0.0);
    }
    return rows;
}

std::vector<std::string> recommend_attach_points(const std::vector<std::string>& blocks,
                                                 const std::vector<bool>& flagged) {
    if (blocks.size() != flagged.size())
        fail("recommend_attach_points: blocks and flags must align");
    std::vector<std::string> points;
    int deepest = -1;
    for (int i = (int)blocks.size() - 1; i >= 0; --i)
        if (flagged[(size_t)i]) {
            deepest = i;
            break;
        }
    if (deepest < 0) return points;
    points.push_back(blocks[(size_t)deepest]);
    for (int cand = deepest - 3; cand >= 0; cand -= 3) {
        if (!flagged[(size_t)cand]) break;
        int below = 0;
        for (int i = 0; i <= cand; ++i)
            if (flagged[(size_t)i]) ++below;
        if (below < 3) break;
        points.push_back(blocks[(size_t)cand]);
    }
    return points;
}

ProbeReport probe_vanishing(const NetworkSpec& spec, const Dataset& data,
                            const ProbeConfig& cfg) {
    if (!spec.branches.empty())
        fail("probe_vanishing: spec already has branches; the probe runs branchless");
    if (data.count() < 1) fail("probe: dataset is empty");
    const Network net = Network::build(spec, data.example_shape());

    ProbeReport report;
    report.blocks = net.conv_block_names();
    report.threshold = cfg.threshold;
    report.magnitudes = probe_magnitudes(spec, data, cfg);

    const std::vector<real>& final_row = report.magnitudes.back();
    std::vector<bool> is_flagged(report.blocks.size(), false);
    for (size_t i = 0; i < report.blocks.size(); ++i) {
        if (final_row[i] < cfg.threshold) {
            is_flagged[i] = true;
            report.flagged.push_back(report.blocks[i]);
        }
    }
    report.recommended_attach_points = recommend_attach_points(report.blocks, is_flagged);
    return report;
}

AlphaSchedule::AlphaSchedule(real alpha0_, int total_epochs_)
    : alpha0(alpha0_), total_epochs(total_epochs_) {
    if (alpha0 < 0) fail("alpha schedule: alpha0 must be >= 0");
    if (total_epochs < 1) fail("alpha schedule: total epochs must be >= 1");
}

real alpha_at(const AlphaSchedule& schedule, int t) {
    if (t < 0 || t > schedule.total_epochs)
        fail("alpha_at: epoch " + std::to_string(t) + " outside [0, " +
             std::to_string(schedule.total_epochs) + "]");
    return schedule.alpha0 * (1.0 - (real)t / (real)schedule.total_epochs);
}

real combined_loss(real main_loss, const std::vector<std::pair<real, real>>& branch_losses) {
    real total = main_loss;
    for (const auto& [alpha, loss] : branch_losses) total += alpha * loss;
    return total;
}

BranchTemplate default_branch_template(const Network& net, const std::string& attach_after) {
    for (const auto& bb : net.main_blocks()) {
        if (bb.spec.name != attach_after) continue;
        BranchTemplate tmpl;
        tmpl.conv_out = std::max(1, bb.out_shape[0] / 2);
        tmpl.conv_kernel = 1;
        tmpl.conv_stride = 1;
        tmpl.conv_pad = 0;
        tmpl.classes = net.num_classes();
        tmpl.fc_dims = {64, tmpl.classes};
        return tmpl;
    }
    fail("default_branch_template: unknown attach point '" + attach_after + "'");
}

NetworkSpec attach_branch(const NetworkSpec& spec, const std::string& attach_after,
                          const BranchTemplate& tmpl, real alpha0) {
    if (alpha0 < 0) fail("attach_branch: alpha0 must be >= 0");
    if (tmpl.classes < 1) fail("attach_branch: template needs >= 1 classes");
    if (tmpl.conv_out < 1) fail("attach_branch: template conv out-channels must be >= 1");
    if (!tmpl.fc_dims.empty() && tmpl.fc_dims.back() != tmpl.classes)
        fail("attach_branch: last fc width " + std::to_string(tmpl.fc_dims.back()) +
             " must equal the class count " + std::to_string(tmpl.classes));

    int attach_idx = -1;
    size_t first_linear = spec.main_path.size();
    for (size_t i = 0; i < spec.main_path.size(); ++i) {
        if (spec.main_path[i].kind == BlockKind::Linear && first_linear == spec.main_path.size())
            first_linear = i;
        if (spec.main_path[i].name == attach_after) attach_idx = (int)i;
    }
    if (attach_idx < 0) fail("attach_branch: unknown block '" + attach_after + "'");
    const BlockKind kind = spec.main_path[(size_t)attach_idx].kind;
    if (kind == BlockKind::Linear || kind == BlockKind::SoftmaxHead ||
        (size_t)attach_idx >= first_linear)
        fail("attach_branch: attach point '" + attach_after +
             "' must be a conv or pool block before the first fully connected layer");
    for (const auto& br : spec.branches)
        if (br.attach_after == attach_after)
            fail("attach_branch: duplicate attach point '" + attach_after + "'");

    BranchSpec branch;
    branch.attach_after = attach_after;
    branch.alpha0 = alpha0;
    const std::string prefix = attach_after + "_aux_";
    // The branch conv is linear (no ReLU): the branch's job is to carry
    // gradient into a block whose activations are still tiny, and a rectifier
    // in front of that conduit can gate the entire branch shut when biases
    // move faster than the vanished activations. Nonlinearity in the branch
    // comes from its hidden fully connected layers.
    branch.blocks.push_back(BlockSpec::conv(prefix + "conv", tmpl.conv_out, tmpl.conv_kernel,
                                            tmpl.conv_stride, tmpl.conv_pad, false));
    for (size_t i = 0; i < tmpl.fc_dims.size(); ++i) {
        const bool last = i + 1 == tmpl.fc_dims.size();
        branch.blocks.push_back(BlockSpec::linear(prefix + "fc" + std::to_string(i + 1),
                                                  tmpl.fc_dims[i], !last));
    }
    branch.blocks.push_back(BlockSpec::softmax_head(prefix + "head", tmpl.classes));

    NetworkSpec out = spec;
    out.branches.push_back(std::move(branch));
    return out;
}

std::string probe_report_to_csv(const ProbeReport& report) {
    std::string csv = "iteration,block,mean_grad_magnitude\n";
    char buf[64];
    for (size_t it = 0; it < report.magnitudes.size(); ++it) {
        for (size_t b = 0; b < report.blocks.size(); ++b) {
            std::snprintf(buf, sizeof buf, "%.12e", report.magnitudes[it][b]);
            csv += std::to_string(it + 1);
            csv += ',';
            csv += report.blocks[b];
            csv += ',';
            csv += buf;
            csv += '\n';
        }
    }
    return csv;
}

void write_probe_csv(const ProbeReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const std::string csv = probe_report_to_csv(report);
    out.write(csv.data(), (std::streamsize)csv.size());
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace cnds
