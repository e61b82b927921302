#include <cmath>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cnds/config.hpp"
#include "cnds/errors.hpp"
#include "cnds/eval_export.hpp"
#include "cnds/supervision.hpp"
#include "cnds/trainer.hpp"

namespace {

using namespace cnds;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

void require_sections(const RunConfig& cfg, bool network, bool train, bool data) {
    if (network && !cfg.has_network) throw ConfigError(0, "missing [network] section");
    if (train && !cfg.has_train) throw ConfigError(0, "missing [train] section");
    if (data && !cfg.has_data) throw ConfigError(0, "missing [data] section");
}

std::string join(const std::vector<std::string>& items) {
    if (items.empty()) return "none";
    std::string out;
    for (const auto& s : items) {
        if (!out.empty()) out += ' ';
        out += s;
    }
    return out;
}

int run_probe(const std::string& config_path, int iters, double threshold,
              const std::string& out_csv) {
    RunConfig cfg = load_config(config_path);
    require_sections(cfg, true, false, true);
    NetworkSpec spec = cfg.spec;
    if (!spec.branches.empty()) {
        std::printf("note: [branches] ignored; the probe runs on the branchless network\n");
        spec.branches.clear();
    }
    const auto [data, val] = load_datasets(cfg.data);
    (void)val;

    ProbeConfig pc;
    pc.iterations = iters;
    pc.threshold = threshold;
    pc.batch_size = cfg.has_train ? cfg.train.batch_size : pc.batch_size;
    pc.seed = cfg.has_train ? cfg.train.seed : pc.seed;
    pc.learning_rate = cfg.has_train ? cfg.train.learning_rate : pc.learning_rate;

    const ProbeReport report = probe_vanishing(spec, data, pc);
    write_probe_csv(report, out_csv);
    std::printf("probe: %d iterations over %zu conv blocks, threshold %g\n", report.iterations(),
                report.blocks.size(), report.threshold);
    std::printf("flagged blocks: %s\n", join(report.flagged).c_str());
    std::printf("recommended attach points: %s\n",
                join(report.recommended_attach_points).c_str());
    std::printf("wrote %s\n", out_csv.c_str());
    return kExitOk;
}

int run_train(const std::string& config_path, const std::string& out_ckpt,
              const std::string& metrics_csv) {
    RunConfig cfg = load_config(config_path);
    require_sections(cfg, true, true, true);
    const auto [data, val] = load_datasets(cfg.data);

    const int N = cfg.train.epochs;
    auto alpha_for = [&](int t) {
        if (N < 1) return cfg.train.alpha0;
        const real a0 =
            cfg.spec.branches.empty() ? cfg.train.alpha0 : cfg.spec.branches.front().alpha0;
        return alpha_at(AlphaSchedule(a0, N), t);
    };
    auto snapshot = [&](int epoch, const ParameterStore& params) {
        const std::string path = out_ckpt + ".epoch" + std::to_string(epoch);
        save_checkpoint(path, cfg.spec, params,
                        CheckpointMeta{epoch, alpha_for(epoch), cfg.train.seed});
        std::printf("wrote snapshot %s\n", path.c_str());
    };
    auto progress = [](const EpochMetrics& m) {
        std::printf("epoch %d: alpha=%.4g loss=%.6g main=%.6g val_top1=%.4g val_top5=%.4g\n",
                    m.epoch, m.alpha, m.train_loss_combined, m.train_loss_main, m.val_top1_err,
                    m.val_top5_err);
        std::fflush(stdout);
    };

    const TrainResult result = train(cfg.spec, data, val, cfg.train, snapshot, progress);

    const int last_epoch = N > 0 ? N - 1 : 0;
    save_checkpoint(out_ckpt, cfg.spec, result.params,
                    CheckpointMeta{last_epoch, alpha_for(last_epoch), cfg.train.seed});
    std::printf("wrote checkpoint %s\n", out_ckpt.c_str());
    if (!metrics_csv.empty()) {
        write_metrics_csv(result.metrics, metrics_csv);
        std::printf("wrote metrics %s\n", metrics_csv.c_str());
    }
    return kExitOk;
}

int run_eval(const std::string& ckpt_path, const std::string& config_path) {
    RunConfig cfg = load_config(config_path);
    require_sections(cfg, false, false, true);
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);

    if (!ckpt.spec.branches.empty()) {
        const std::size_t n_branches = ckpt.spec.branches.size();
        const long long before = ckpt.params.element_count();
        auto [stripped_spec, stripped_params] = strip_branches(ckpt.spec, ckpt.params);
        ckpt.spec = std::move(stripped_spec);
        ckpt.params = std::move(stripped_params);
        std::printf("note: %zu auxiliary branch(es) stripped for evaluation (%lld parameters)\n",
                    n_branches, before - ckpt.params.element_count());
    }

    const auto [data, val] = load_datasets(cfg.data);
    (void)data;
    const Network net = Network::build(ckpt.spec, val.example_shape());

    // The checkpoint must describe exactly the parameters this network needs.
    const ParameterStore expected = net.zero_params();
    if (expected.blocks.size() != ckpt.params.blocks.size())
        throw ConfigError(0, "checkpoint/spec mismatch: parameter block count differs");
    for (std::size_t i = 0; i < expected.blocks.size(); ++i) {
        const auto& e = expected.blocks[i];
        const auto& g = ckpt.params.blocks[i];
        if (e.block_name != g.block_name || !e.w.same_shape(g.w) || !e.b.same_shape(g.b))
            throw ConfigError(0, "checkpoint/spec mismatch at block '" + e.block_name + "'");
    }

    const int batch = cfg.has_train ? cfg.train.batch_size : 128;
    const int k = std::min(5, net.num_classes());
    if (k < 5)
        std::printf("note: only %d classes; top5_err reports the top-%d error\n",
                    net.num_classes(), k);
    const auto [top1, top5] = evaluate_top_errors(net, ckpt.params, val, batch);
    std::printf("top1_err=%.5g top5_err=%.5g\n", top1, top5);
    return kExitOk;
}

int run_strip(const std::string& in_path, const std::string& out_path) {
    const LoadedCheckpoint ckpt = load_checkpoint(in_path);
    const long long before = ckpt.params.element_count();
    const auto [spec, params] = strip_branches(ckpt.spec, ckpt.params);
    if (ckpt.spec.branches.empty())
        std::printf("note: checkpoint has no branches; writing it through unchanged\n");
    save_checkpoint(out_path, spec, params, ckpt.meta);
    std::printf("removed %lld parameters across %zu branch(es)\n",
                before - params.element_count(), ckpt.spec.branches.size());
    std::printf("wrote %s\n", out_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep-supervision CNN trainer: probe vanishing gradients, attach auxiliary "
                 "classifier branches, train under a decaying combined loss, strip for "
                 "deployment"};
    app.require_subcommand(1);

    std::string config_path, out_path, metrics_path, ckpt_path;
    int iters = 20;
    double threshold = 1e-7;

    CLI::App* probe = app.add_subcommand("probe", "Measure per-conv-block mean gradient "
                                                  "magnitudes and suggest attach points");
    probe->add_option("config", config_path, "run config with [network] and [data]")
        ->required();
    probe->add_option("--iters", iters, "probe iterations")
        ->check(CLI::Range(1, 1000))
        ->capture_default_str();
    probe->add_option("--threshold", threshold, "vanishing-gradient threshold")
        ->capture_default_str();
    probe->add_option("--out", out_path, "probe report CSV path")->required();

    CLI::App* tr = app.add_subcommand("train", "Train the configured network");
    tr->add_option("config", config_path, "run config with [network], [train], [data]")
        ->required();
    tr->add_option("--out", ckpt_path, "final checkpoint path")->required();
    tr->add_option("--metrics", metrics_path, "per-epoch metrics CSV path");

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint's main head");
    ev->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    ev->add_option("config", config_path, "run config with [data]")->required();

    CLI::App* st = app.add_subcommand("strip", "Remove auxiliary branches from a checkpoint");
    st->add_option("input", config_path, "checkpoint to strip")->required();
    st->add_option("output", out_path, "branch-free checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (app.got_subcommand(probe)) return run_probe(config_path, iters, threshold, out_path);
        if (app.got_subcommand(tr)) return run_train(config_path, ckpt_path, metrics_path);
        if (app.got_subcommand(ev)) return run_eval(ckpt_path, config_path);
        if (app.got_subcommand(st)) return run_strip(config_path, out_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kExitDivergence;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kExitIo;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "file format error: %s\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitConfig;
}
