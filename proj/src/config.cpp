#include "cnds/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "cnds/errors.hpp"
#include "cnds/supervision.hpp"

namespace cnds {

namespace {

std::string fmt_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    if (std::strtod(buf, nullptr) == v) return buf;
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

long long parse_ll(const std::string& s, int line, const std::string& key) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw ConfigError(line, "key '" + key + "': '" + s + "' is not an integer");
    return v;
}

int parse_int(const std::string& s, int line, const std::string& key, long long lo,
              long long hi) {
    const long long v = parse_ll(s, line, key);
    if (v < lo || v > hi)
        throw ConfigError(line, "key '" + key + "': value " + s + " outside [" +
                                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return (int)v;
}

std::uint64_t parse_u64(const std::string& s, int line, const std::string& key) {
    std::size_t pos = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw ConfigError(line, "key '" + key + "': '" + s + "' is not a nonnegative integer");
    return v;
}

real parse_real(const std::string& s, int line, const std::string& key) {
    std::size_t pos = 0;
    real v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw ConfigError(line, "key '" + key + "': '" + s + "' is not a number");
    return v;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

// Splits "key=value"; returns false for tokens without '='.
bool split_kv(const std::string& tok, std::string& key, std::string& value) {
    const std::size_t eq = tok.find('=');
    if (eq == std::string::npos) return false;
    key = tok.substr(0, eq);
    value = tok.substr(eq + 1);
    return true;
}

// key=value map for one line, with duplicate detection.
std::map<std::string, std::string> kv_map(const std::vector<std::string>& toks,
                                          std::size_t first, int line, bool* relu_flag) {
    std::map<std::string, std::string> kv;
    for (std::size_t i = first; i < toks.size(); ++i) {
        if (relu_flag != nullptr && toks[i] == "relu") {
            if (*relu_flag) throw ConfigError(line, "duplicate 'relu' flag");
            *relu_flag = true;
            continue;
        }
        std::string k, v;
        if (!split_kv(toks[i], k, v))
            throw ConfigError(line, "expected key=value, got '" + toks[i] + "'");
        if (v.empty()) throw ConfigError(line, "key '" + k + "' has an empty value");
        if (!kv.emplace(k, v).second) throw ConfigError(line, "duplicate key '" + k + "'");
    }
    return kv;
}

std::string take(std::map<std::string, std::string>& kv, const std::string& key, int line,
                 const std::string& context) {
    auto it = kv.find(key);
    if (it == kv.end())
        throw ConfigError(line, context + ": missing key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
}

void reject_leftovers(const std::map<std::string, std::string>& kv, int line,
                      const std::string& context) {
    if (!kv.empty())
        throw ConfigError(line, context + ": unknown key '" + kv.begin()->first + "'");
}

struct PendingBranch {
    int line = 0;
    std::string attach;
    BranchTemplate tmpl;
    real alpha0 = 0.3;
};

BlockSpec parse_network_line(const std::vector<std::string>& toks, int line) {
    const std::string& kind = toks[0];
    if (toks.size() < 2 || toks[1].find('=') != std::string::npos)
        throw ConfigError(line, "block kind '" + kind + "' must be followed by a name");
    const std::string& name = toks[1];
    bool relu = false;
    const std::string ctx = kind + " block '" + name + "'";
    if (kind == "conv") {
        auto kv = kv_map(toks, 2, line, &relu);
        const int out = parse_int(take(kv, "out", line, ctx), line, "out", 1, 1 << 20);
        const int k = parse_int(take(kv, "k", line, ctx), line, "k", 1, 1 << 16);
        int s = 1, p = 0;
        if (kv.count("s")) s = parse_int(take(kv, "s", line, ctx), line, "s", 1, 1 << 16);
        if (kv.count("p")) p = parse_int(take(kv, "p", line, ctx), line, "p", 0, 1 << 16);
        reject_leftovers(kv, line, ctx);
        return BlockSpec::conv(name, out, k, s, p, relu);
    }
    if (kind == "pool") {
        auto kv = kv_map(toks, 2, line, nullptr);
        const int w = parse_int(take(kv, "w", line, ctx), line, "w", 1, 1 << 16);
        const int s = parse_int(take(kv, "s", line, ctx), line, "s", 1, 1 << 16);
        reject_leftovers(kv, line, ctx);
        return BlockSpec::maxpool(name, w, s);
    }
    if (kind == "linear") {
        auto kv = kv_map(toks, 2, line, &relu);
        const int out = parse_int(take(kv, "out", line, ctx), line, "out", 1, 1 << 24);
        reject_leftovers(kv, line, ctx);
        return BlockSpec::linear(name, out, relu);
    }
    if (kind == "softmax") {
        auto kv = kv_map(toks, 2, line, nullptr);
        const int classes =
            parse_int(take(kv, "classes", line, ctx), line, "classes", 1, 1 << 24);
        reject_leftovers(kv, line, ctx);
        return BlockSpec::softmax_head(name, classes);
    }
    throw ConfigError(line, "unknown block kind '" + kind +
                                "' (expected conv, pool, linear, or softmax)");
}

PendingBranch parse_branch_line(const std::vector<std::string>& toks, int line) {
    auto kv = kv_map(toks, 0, line, nullptr);
    PendingBranch pb;
    pb.line = line;
    pb.attach = take(kv, "attach", line, "branch");
    pb.tmpl.conv_out = parse_int(take(kv, "conv_out", line, "branch"), line, "conv_out", 1,
                                 1 << 20);
    if (kv.count("conv_k"))
        pb.tmpl.conv_kernel =
            parse_int(take(kv, "conv_k", line, "branch"), line, "conv_k", 1, 1 << 16);
    if (kv.count("conv_s"))
        pb.tmpl.conv_stride =
            parse_int(take(kv, "conv_s", line, "branch"), line, "conv_s", 1, 1 << 16);
    if (kv.count("conv_p"))
        pb.tmpl.conv_pad =
            parse_int(take(kv, "conv_p", line, "branch"), line, "conv_p", 0, 1 << 16);
    if (kv.count("fc")) {
        const std::string list = take(kv, "fc", line, "branch");
        std::string item;
        std::istringstream in(list);
        while (std::getline(in, item, ','))
            pb.tmpl.fc_dims.push_back(parse_int(item, line, "fc", 1, 1 << 24));
        if (pb.tmpl.fc_dims.empty()) throw ConfigError(line, "key 'fc': empty list");
    }
    if (kv.count("alpha0")) {
        pb.alpha0 = parse_real(take(kv, "alpha0", line, "branch"), line, "alpha0");
        if (pb.alpha0 < 0) throw ConfigError(line, "key 'alpha0': must be >= 0");
    }
    reject_leftovers(kv, line, "branch");
    return pb;
}

void apply_train_kv(TrainingConfig& tc, const std::string& key, const std::string& value,
                    int line) {
    if (key == "epochs") {
        tc.epochs = parse_int(value, line, key, 0, 1 << 24);
    } else if (key == "batch_size") {
        tc.batch_size = parse_int(value, line, key, 1, 1 << 24);
    } else if (key == "lr") {
        tc.learning_rate = parse_real(value, line, key);
        if (!(tc.learning_rate > 0)) throw ConfigError(line, "key 'lr': must be > 0");
    } else if (key == "momentum") {
        tc.momentum = parse_real(value, line, key);
        if (tc.momentum < 0 || tc.momentum >= 1)
            throw ConfigError(line, "key 'momentum': must lie in [0, 1)");
    } else if (key == "weight_decay") {
        tc.weight_decay = parse_real(value, line, key);
        if (tc.weight_decay < 0) throw ConfigError(line, "key 'weight_decay': must be >= 0");
    } else if (key == "seed") {
        tc.seed = parse_u64(value, line, key);
    } else if (key == "alpha0") {
        tc.alpha0 = parse_real(value, line, key);
        if (tc.alpha0 < 0) throw ConfigError(line, "key 'alpha0': must be >= 0");
    } else if (key == "snapshot_every") {
        tc.snapshot_every = parse_int(value, line, key, 0, 1 << 24);
    } else if (key == "lr_drop") {
        tc.use_default_lr_schedule = false;
        tc.lr_schedule.clear();
        if (value == "none") return;
        std::istringstream in(value);
        std::string item;
        while (std::getline(in, item, ',')) {
            const std::size_t colon = item.find(':');
            if (colon == std::string::npos)
                throw ConfigError(line, "key 'lr_drop': expected epoch:multiplier, got '" +
                                            item + "'");
            const int epoch = parse_int(item.substr(0, colon), line, "lr_drop", 0, 1 << 24);
            const real mult = parse_real(item.substr(colon + 1), line, "lr_drop");
            if (!(mult > 0)) throw ConfigError(line, "key 'lr_drop': multiplier must be > 0");
            tc.lr_schedule.push_back({epoch, mult});
        }
        if (tc.lr_schedule.empty())
            throw ConfigError(line, "key 'lr_drop': empty list (use 'none' to disable)");
    } else {
        throw ConfigError(line, "[train]: unknown key '" + key + "'");
    }
}

void apply_data_kv(DataConfig& dc, bool& have_source, const std::string& key,
                   const std::string& value, int line) {
    if (key == "source") {
        if (value == "idx")
            dc.source = DataConfig::Source::Idx;
        else if (value == "synthetic")
            dc.source = DataConfig::Source::Synthetic;
        else
            throw ConfigError(line, "key 'source': expected idx or synthetic, got '" + value +
                                        "'");
        have_source = true;
        return;
    }
    if (!have_source)
        throw ConfigError(line, "[data]: 'source' must be the first entry of the section");
    const bool idx = dc.source == DataConfig::Source::Idx;
    if (idx) {
        if (key == "train_images")
            dc.train_images = value;
        else if (key == "train_labels")
            dc.train_labels = value;
        else if (key == "val_images")
            dc.val_images = value;
        else if (key == "val_labels")
            dc.val_labels = value;
        else
            throw ConfigError(line, "[data] source=idx: unknown key '" + key + "'");
        return;
    }
    if (key == "seed")
        dc.seed = parse_u64(value, line, key);
    else if (key == "count")
        dc.count = parse_int(value, line, key, 1, 1 << 26);
    else if (key == "val_count")
        dc.val_count = parse_int(value, line, key, 1, 1 << 26);
    else if (key == "classes")
        dc.classes = parse_int(value, line, key, 1, 1 << 16);
    else if (key == "height")
        dc.height = parse_int(value, line, key, 1, 1 << 16);
    else if (key == "width")
        dc.width = parse_int(value, line, key, 1, 1 << 16);
    else if (key == "channels")
        dc.channels = parse_int(value, line, key, 1, 1 << 12);
    else if (key == "difficulty") {
        dc.difficulty = parse_real(value, line, key);
        if (dc.difficulty < 0) throw ConfigError(line, "key 'difficulty': must be >= 0");
    } else {
        throw ConfigError(line, "[data] source=synthetic: unknown key '" + key + "'");
    }
}

void apply_meta_kv(CheckpointMeta& meta, const std::string& key, const std::string& value,
                   int line) {
    if (key == "epoch")
        meta.epoch = parse_int(value, line, key, 0, 1 << 30);
    else if (key == "alpha")
        meta.alpha = parse_real(value, line, key);
    else if (key == "seed")
        meta.seed = parse_u64(value, line, key);
    else
        throw ConfigError(line, "[meta]: unknown key '" + key + "'");
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    enum class Section { None, Network, Branches, Train, Data, Meta };
    RunConfig cfg;
    Section section = Section::None;
    bool have_source = false;
    bool seen_network = false, seen_branches = false, seen_train = false, seen_data = false,
         seen_meta = false;
    int data_line = 0;
    std::vector<PendingBranch> pending;

    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const auto toks = split_ws(raw);
        if (toks.empty() || toks[0][0] == '#') continue;
        if (toks[0][0] == '[') {
            if (toks.size() != 1)
                throw ConfigError(line, "unexpected text after section header");
            auto enter = [line](bool& seen, Section s, const char* name) {
                if (seen) throw ConfigError(line, std::string("duplicate section [") + name + "]");
                seen = true;
                return s;
            };
            if (toks[0] == "[network]")
                section = enter(seen_network, Section::Network, "network");
            else if (toks[0] == "[branches]")
                section = enter(seen_branches, Section::Branches, "branches");
            else if (toks[0] == "[train]")
                section = enter(seen_train, Section::Train, "train");
            else if (toks[0] == "[data]") {
                section = enter(seen_data, Section::Data, "data");
                data_line = line;
            } else if (toks[0] == "[meta]")
                section = enter(seen_meta, Section::Meta, "meta");
            else
                throw ConfigError(line, "unknown section header '" + toks[0] + "'");
            continue;
        }
        switch (section) {
            case Section::None:
                throw ConfigError(line, "content before the first section header");
            case Section::Network:
                cfg.spec.main_path.push_back(parse_network_line(toks, line));
                break;
            case Section::Branches:
                pending.push_back(parse_branch_line(toks, line));
                break;
            case Section::Train:
            case Section::Data:
            case Section::Meta: {
                if (toks.size() != 1)
                    throw ConfigError(line, "expected a single key=value entry");
                std::string k, v;
                if (!split_kv(toks[0], k, v))
                    throw ConfigError(line, "expected key=value, got '" + toks[0] + "'");
                if (v.empty()) throw ConfigError(line, "key '" + k + "' has an empty value");
                if (section == Section::Train)
                    apply_train_kv(cfg.train, k, v, line);
                else if (section == Section::Data)
                    apply_data_kv(cfg.data, have_source, k, v, line);
                else
                    apply_meta_kv(cfg.meta, k, v, line);
                break;
            }
        }
    }

    cfg.has_network = seen_network;
    cfg.has_train = seen_train;
    cfg.has_data = seen_data;
    cfg.has_meta = seen_meta;

    if (seen_branches && !seen_network)
        throw ConfigError(0, "[branches] requires a [network] section");
    if (seen_network && cfg.spec.main_path.empty())
        throw ConfigError(0, "[network] section has no blocks");
    if (seen_data) {
        if (!have_source) throw ConfigError(data_line, "[data]: missing 'source'");
        if (cfg.data.source == DataConfig::Source::Idx) {
            for (const auto& [key, val] :
                 std::initializer_list<std::pair<const char*, const std::string*>>{
                     {"train_images", &cfg.data.train_images},
                     {"train_labels", &cfg.data.train_labels},
                     {"val_images", &cfg.data.val_images},
                     {"val_labels", &cfg.data.val_labels}})
                if (val->empty())
                    throw ConfigError(data_line,
                                      std::string("[data] source=idx: missing '") + key + "'");
        } else if (cfg.data.count < cfg.data.classes ||
                   cfg.data.val_count < cfg.data.classes) {
            throw ConfigError(data_line, "[data]: count and val_count must be >= classes");
        }
    }

    for (const auto& pb : pending) {
        // Class count comes from the main head; attach_branch checks the rest.
        if (cfg.spec.main_path.back().kind != BlockKind::SoftmaxHead)
            throw ConfigError(pb.line, "[network] must end in a softmax block before "
                                       "branches can be attached");
        BranchTemplate tmpl = pb.tmpl;
        tmpl.classes = cfg.spec.main_path.back().classes;
        try {
            cfg.spec = attach_branch(cfg.spec, pb.attach, tmpl, pb.alpha0);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(pb.line, e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

namespace {

void print_network(std::string& out, const NetworkSpec& spec) {
    out += "[network]\n";
    for (const auto& b : spec.main_path) {
        switch (b.kind) {
            case BlockKind::Conv:
                out += "conv " + b.name + " out=" + std::to_string(b.out_channels) +
                       " k=" + std::to_string(b.kernel) + " s=" + std::to_string(b.stride) +
                       " p=" + std::to_string(b.pad) + (b.relu ? " relu" : "") + "\n";
                break;
            case BlockKind::Maxpool:
                out += "pool " + b.name + " w=" + std::to_string(b.window) +
                       " s=" + std::to_string(b.stride) + "\n";
                break;
            case BlockKind::Linear:
                out += "linear " + b.name + " out=" + std::to_string(b.out_dim) +
                       (b.relu ? " relu" : "") + "\n";
                break;
            case BlockKind::SoftmaxHead:
                out += "softmax " + b.name + " classes=" + std::to_string(b.classes) + "\n";
                break;
        }
    }
}

void print_branches(std::string& out, const NetworkSpec& spec) {
    if (spec.branches.empty()) return;
    out += "[branches]\n";
    for (const auto& br : spec.branches) {
        // Branches in config form always follow the template shape: one conv,
        // linear layers, softmax head.
        if (br.blocks.size() < 2 || br.blocks.front().kind != BlockKind::Conv ||
            br.blocks.back().kind != BlockKind::SoftmaxHead)
            throw std::invalid_argument("branch at '" + br.attach_after +
                                        "' does not fit the config template form");
        const BlockSpec& conv = br.blocks.front();
        std::string fc;
        for (std::size_t i = 1; i + 1 < br.blocks.size(); ++i) {
            if (br.blocks[i].kind != BlockKind::Linear)
                throw std::invalid_argument("branch at '" + br.attach_after +
                                            "' does not fit the config template form");
            if (!fc.empty()) fc += ',';
            fc += std::to_string(br.blocks[i].out_dim);
        }
        out += "attach=" + br.attach_after + " conv_out=" + std::to_string(conv.out_channels) +
               " conv_k=" + std::to_string(conv.kernel) +
               " conv_s=" + std::to_string(conv.stride) +
               " conv_p=" + std::to_string(conv.pad);
        if (!fc.empty()) out += " fc=" + fc;
        out += " alpha0=" + fmt_real(br.alpha0) + "\n";
    }
}

void print_train(std::string& out, const TrainingConfig& tc) {
    out += "[train]\n";
    out += "epochs=" + std::to_string(tc.epochs) + "\n";
    out += "batch_size=" + std::to_string(tc.batch_size) + "\n";
    out += "lr=" + fmt_real(tc.learning_rate) + "\n";
    out += "momentum=" + fmt_real(tc.momentum) + "\n";
    out += "weight_decay=" + fmt_real(tc.weight_decay) + "\n";
    out += "seed=" + std::to_string(tc.seed) + "\n";
    out += "alpha0=" + fmt_real(tc.alpha0) + "\n";
    if (tc.snapshot_every > 0)
        out += "snapshot_every=" + std::to_string(tc.snapshot_every) + "\n";
    if (!tc.use_default_lr_schedule) {
        if (tc.lr_schedule.empty()) {
            out += "lr_drop=none\n";
        } else {
            out += "lr_drop=";
            for (std::size_t i = 0; i < tc.lr_schedule.size(); ++i) {
                if (i) out += ',';
                out += std::to_string(tc.lr_schedule[i].first) + ":" +
                       fmt_real(tc.lr_schedule[i].second);
            }
            out += "\n";
        }
    }
}

void print_data(std::string& out, const DataConfig& dc) {
    out += "[data]\n";
    if (dc.source == DataConfig::Source::Idx) {
        out += "source=idx\n";
        out += "train_images=" + dc.train_images + "\n";
        out += "train_labels=" + dc.train_labels + "\n";
        out += "val_images=" + dc.val_images + "\n";
        out += "val_labels=" + dc.val_labels + "\n";
        return;
    }
    out += "source=synthetic\n";
    out += "seed=" + std::to_string(dc.seed) + "\n";
    out += "count=" + std::to_string(dc.count) + "\n";
    out += "val_count=" + std::to_string(dc.val_count) + "\n";
    out += "classes=" + std::to_string(dc.classes) + "\n";
    out += "height=" + std::to_string(dc.height) + "\n";
    out += "width=" + std::to_string(dc.width) + "\n";
    out += "channels=" + std::to_string(dc.channels) + "\n";
    out += "difficulty=" + fmt_real(dc.difficulty) + "\n";
}

void print_meta(std::string& out, const CheckpointMeta& meta) {
    out += "[meta]\n";
    out += "epoch=" + std::to_string(meta.epoch) + "\n";
    out += "alpha=" + fmt_real(meta.alpha) + "\n";
    out += "seed=" + std::to_string(meta.seed) + "\n";
}

} // namespace

std::string print_config(const RunConfig& cfg) {
    std::string out;
    if (cfg.has_network) {
        print_network(out, cfg.spec);
        print_branches(out, cfg.spec);
    }
    if (cfg.has_train) print_train(out, cfg.train);
    if (cfg.has_data) print_data(out, cfg.data);
    if (cfg.has_meta) print_meta(out, cfg.meta);
    return out;
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& dc) {
    if (dc.source == DataConfig::Source::Idx)
        return {load_idx(dc.train_images, dc.train_labels),
                load_idx(dc.val_images, dc.val_labels)};
    const std::vector<int> shape{dc.channels, dc.height, dc.width};
    return {synthetic_dataset(dc.seed, dc.count, shape, dc.classes, dc.difficulty),
            synthetic_dataset(dc.seed + 1, dc.val_count, shape, dc.classes, dc.difficulty)};
}

} // namespace cnds
