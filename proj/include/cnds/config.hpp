#pragma once

#include <cstdint>
#include <string>

#include "cnds/eval_export.hpp"
#include "cnds/network.hpp"
#include "cnds/trainer.hpp"

namespace cnds {

// [data] section: where training/validation examples come from.
struct DataConfig {
    enum class Source { Idx, Synthetic };
    Source source = Source::Synthetic;
    // source=idx
    std::string train_images, train_labels, val_images, val_labels;
    // source=synthetic (validation set uses seed+1)
    std::uint64_t seed = 1;
    int count = 1000;
    int val_count = 200;
    int classes = 10;
    int height = 16;
    int width = 16;
    int channels = 1;
    real difficulty = 0.5;
};

// A parsed config file. Sections are independent; flags record which were
// present so partial configs (e.g. checkpoint payloads) round-trip.
struct RunConfig {
    NetworkSpec spec;
    TrainingConfig train;
    DataConfig data;
    CheckpointMeta meta;
    bool has_network = false;
    bool has_train = false;
    bool has_data = false;
    bool has_meta = false;
};

// Parses the line-oriented config grammar:
//   [network]   one block per line: conv/pool/linear/softmax <name> key=value... [relu]
//   [branches]  one branch per line: attach=<block> conv_out=N [conv_k/conv_s/conv_p=N]
//               [fc=a,b,...] [alpha0=x]
//   [train]     key=value lines: epochs, batch_size, lr, momentum, weight_decay,
//               seed, lr_drop (epoch:mult[,...] or none), alpha0, snapshot_every
//   [data]      source=idx|synthetic first, then source-specific keys
//   [meta]      epoch, alpha, seed (written into checkpoints)
// Blank lines and lines starting with '#' are ignored. Throws ConfigError
// with the offending 1-based line number.
RunConfig parse_config_text(const std::string& text);

// Reads and parses a config file; IoError if unreadable.
RunConfig load_config(const std::string& path);

// Canonical text form; parse(print(parse(x))) == parse(x).
std::string print_config(const RunConfig& cfg);

// Builds the train/validation datasets named by the [data] section.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& dc);

} // namespace cnds
