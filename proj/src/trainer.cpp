#include "cnds/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cnds/errors.hpp"
#include "cnds/eval_export.hpp"
#include "cnds/supervision.hpp"

namespace cnds {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void step_tensor(Tensor& w, const Tensor& g, Tensor& v, real lr, real momentum,
                 real weight_decay) {
    real* ws = w.data();
    const real* gs = g.data();
    real* vs = v.data();
    const long long n = w.size();
    for (long long i = 0; i < n; ++i) {
        vs[i] = momentum * vs[i] - lr * (gs[i] + weight_decay * ws[i]);
        ws[i] += vs[i];
    }
}

std::string fmt_real17(real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_labels(const Dataset& ds, int num_classes, const char* which) {
    for (int label : ds.labels)
        if (label < 0 || label >= num_classes)
            fail(std::string(which) + " dataset: label " + std::to_string(label) +
                 " outside the network's " + std::to_string(num_classes) + " classes");
}

} // namespace

void sgd_step(ParameterStore& params, const GradientStore& grads, OptimizerState& state,
              real lr, real momentum, real weight_decay) {
    if (params.blocks.size() != grads.blocks.size() ||
        params.blocks.size() != state.blocks.size())
        fail("sgd_step: store block counts disagree");
    for (size_t i = 0; i < params.blocks.size(); ++i) {
        ParamBlock& p = params.blocks[i];
        const ParamBlock& g = grads.blocks[i];
        ParamBlock& v = state.blocks[i];
        if (!p.w.same_shape(g.w) || !p.w.same_shape(v.w) || !p.b.same_shape(g.b) ||
            !p.b.same_shape(v.b))
            fail("sgd_step: shape mismatch at block '" + p.block_name + "'");
        step_tensor(p.w, g.w, v.w, lr, momentum, weight_decay);
        step_tensor(p.b, g.b, v.b, lr, momentum, weight_decay);
    }
}

std::string metrics_to_csv(const MetricsLog& log) {
    std::string csv = "epoch,alpha,train_loss_combined,train_loss_main";
    for (int j = 1; j <= log.num_branches; ++j)
        csv += ",train_loss_branch_" + std::to_string(j);
    csv += ",val_top1_err,val_top5_err\n";
    for (const auto& m : log.epochs) {
        csv += std::to_string(m.epoch);
        csv += ',';
        csv += fmt_real17(m.alpha);
        csv += ',';
        csv += fmt_real17(m.train_loss_combined);
        csv += ',';
        csv += fmt_real17(m.train_loss_main);
        for (real b : m.train_loss_branches) {
            csv += ',';
            csv += fmt_real17(b);
        }
        csv += ',';
        csv += fmt_real17(m.val_top1_err);
        csv += ',';
        csv += fmt_real17(m.val_top5_err);
        csv += '\n';
    }
    return csv;
}

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const std::string csv = metrics_to_csv(log);
    out.write(csv.data(), (std::streamsize)csv.size());
    if (!out) throw IoError("write failed for '" + path + "'");
}

TrainResult train(const NetworkSpec& spec, const Dataset& data, const Dataset& val,
                  const TrainingConfig& cfg,
                  const std::function<void(int, const ParameterStore&)>& snapshot_hook,
                  const std::function<void(const EpochMetrics&)>& epoch_hook) {
    if (cfg.epochs < 0) fail("train: epochs must be >= 0");
    if (cfg.batch_size < 1) fail("train: batch_size must be >= 1");
    if (!(cfg.learning_rate > 0)) fail("train: learning_rate must be > 0");
    if (cfg.momentum < 0 || cfg.momentum >= 1) fail("train: momentum must lie in [0, 1)");
    if (cfg.weight_decay < 0) fail("train: weight_decay must be >= 0");
    if (data.count() < 1 || val.count() < 1) fail("train: datasets must be nonempty");
    if (data.example_shape() != val.example_shape())
        fail("train: train and validation example shapes disagree");

    TrainResult result;
    result.net = Network::build(spec, data.example_shape());
    const Network& net = result.net;
    check_labels(data, net.num_classes(), "train");
    check_labels(val, net.num_classes(), "validation");

    result.params = net.init_params(cfg.seed, 0.01);
    OptimizerState velocity = result.params.zeros_like();

    const int N = cfg.epochs;
    const size_t num_branches = net.branches().size();
    result.metrics.num_branches = (int)num_branches;
    if (N == 0) return result;

    std::vector<std::pair<int, real>> lr_drops = cfg.lr_schedule;
    if (cfg.use_default_lr_schedule) {
        lr_drops.clear();
        const int drop_epoch = 2 * N / 3;
        if (drop_epoch >= 1) lr_drops.push_back({drop_epoch, 0.1});
    }

    // Every branch decays on the same schedule shape; the logged alpha column
    // follows the first branch (or cfg.alpha0 when there is none).
    const real logged_alpha0 =
        num_branches == 0 ? cfg.alpha0 : net.branches().front().alpha0;
    const AlphaSchedule logged_schedule(logged_alpha0, N);

    Tensor images;
    std::vector<int> labels;
    for (int t = 0; t < N; ++t) {
        real lr = cfg.learning_rate;
        for (const auto& [epoch, mult] : lr_drops)
            if (t >= epoch) lr *= mult;

        std::vector<real> alphas(num_branches);
        std::vector<HeadWeight> heads{{-1, 1.0}};
        for (size_t j = 0; j < num_branches; ++j) {
            alphas[j] = alpha_at(AlphaSchedule(net.branches()[j].alpha0, N), t);
            heads.push_back({(int)j, alphas[j]});
        }

        real sum_combined = 0.0, sum_main = 0.0;
        std::vector<real> sum_branch(num_branches, 0.0);
        long long seen = 0;
        long long batch_index = 0;
        BatchIterator it(data, cfg.batch_size, cfg.seed, t);
        while (it.next(images, labels)) {
            const ActivationRecord rec = net.forward(result.params, images, labels);
            std::vector<std::pair<real, real>> weighted;
            weighted.reserve(num_branches);
            for (size_t j = 0; j < num_branches; ++j)
                weighted.push_back({alphas[j], rec.branch_losses[j]});
            const real combined = combined_loss(rec.main_loss, weighted);
            if (!std::isfinite(combined))
                throw DivergenceError(t, batch_index, "non-finite training loss");
            const GradientStore grads = net.backward(result.params, rec, heads);
            sgd_step(result.params, grads, velocity, lr, cfg.momentum, cfg.weight_decay);

            const long long n = (long long)labels.size();
            sum_combined += combined * (real)n;
            sum_main += rec.main_loss * (real)n;
            for (size_t j = 0; j < num_branches; ++j)
                sum_branch[j] += rec.branch_losses[j] * (real)n;
            seen += n;
            ++batch_index;
        }

        EpochMetrics m;
        m.epoch = t;
        m.alpha = alpha_at(logged_schedule, t);
        m.train_loss_combined = sum_combined / (real)seen;
        m.train_loss_main = sum_main / (real)seen;
        m.train_loss_branches.resize(num_branches);
        for (size_t j = 0; j < num_branches; ++j)
            m.train_loss_branches[j] = sum_branch[j] / (real)seen;
        const auto [top1, top5] = evaluate_top_errors(net, result.params, val, cfg.batch_size);
        m.val_top1_err = top1;
        m.val_top5_err = top5;
        result.metrics.epochs.push_back(std::move(m));
        if (epoch_hook) epoch_hook(result.metrics.epochs.back());

        if (snapshot_hook && cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0)
            snapshot_hook(t, result.params);
    }
    return result;
}

} // namespace cnds
