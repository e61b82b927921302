#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cnds/data.hpp"
#include "cnds/network.hpp"

namespace cnds {

struct TrainingConfig {
    int epochs = 1;
    int batch_size = 128;
    real learning_rate = 0.01;
    real momentum = 0.9;
    real weight_decay = 5e-4;
    real alpha0 = 0.3; // schedule start when the spec carries no branches
    std::uint64_t seed = 0;
    int snapshot_every = 0; // epochs between snapshots; 0 disables
    // Step decay: multiplier applied from the given epoch on. When
    // use_default_lr_schedule is set the list is ignored and a single x0.1
    // drop at floor(2N/3) is used.
    std::vector<std::pair<int, real>> lr_schedule;
    bool use_default_lr_schedule = true;
};

using OptimizerState = ParameterStore; // per-parameter velocities

// v <- momentum * v - lr * (g + weight_decay * w); w <- w + v.
void sgd_step(ParameterStore& params, const GradientStore& grads, OptimizerState& state,
              real lr, real momentum, real weight_decay);

struct EpochMetrics {
    int epoch = 0;
    real alpha = 0.0;
    real train_loss_combined = 0.0;
    real train_loss_main = 0.0;
    std::vector<real> train_loss_branches;
    real val_top1_err = 0.0;
    real val_top5_err = 0.0;
};

struct MetricsLog {
    int num_branches = 0;
    std::vector<EpochMetrics> epochs;
};

std::string metrics_to_csv(const MetricsLog& log);
void write_metrics_csv(const MetricsLog& log, const std::string& path);

struct TrainResult {
    Network net;
    ParameterStore params;
    MetricsLog metrics;
};

// Full training loop: per-epoch alpha from the schedule, deterministic
// shuffling from (seed, epoch), combined-loss backward, SGD with momentum,
// validation top-1/top-5 after every epoch. snapshot_hook, when given, is
// called per cfg.snapshot_every with (epoch, params); epoch_hook after every
// epoch's metrics are final. Throws DivergenceError on a non-finite loss.
TrainResult train(const NetworkSpec& spec, const Dataset& data, const Dataset& val,
                  const TrainingConfig& cfg,
                  const std::function<void(int, const ParameterStore&)>& snapshot_hook = {},
                  const std::function<void(const EpochMetrics&)>& epoch_hook = {});

} // namespace cnds
