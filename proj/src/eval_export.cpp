#include "cnds/eval_export.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cnds/config.hpp"
#include "cnds/errors.hpp"

namespace cnds {

namespace {

// Number of rows whose true label is outside the top k (exact integer count,
// so batched evaluation aggregates without rounding drift).
long long top_k_miss_count(const Tensor& probs, const std::vector<int>& labels, int k) {
    const int n = probs.dim(0), K = probs.dim(1);
    if (k < 1 || k > K)
        throw std::invalid_argument("top_k_error: k = " + std::to_string(k) +
                                    " outside [1, " + std::to_string(K) + "]");
    if ((std::size_t)n != labels.size())
        throw std::invalid_argument("top_k_error: batch/label count mismatch");
    long long misses = 0;
    for (int i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || label >= K)
            throw std::invalid_argument("top_k_error: label " + std::to_string(label) +
                                        " out of range for " + std::to_string(K) + " classes");
        const real p_true = probs.at(i, label);
        // Rank of the true class: strictly larger probabilities rank above
        // it, and ties go to the lower class index.
        int rank = 0;
        for (int j = 0; j < K; ++j) {
            if (probs.at(i, j) > p_true || (probs.at(i, j) == p_true && j < label)) ++rank;
        }
        if (rank >= k) ++misses;
    }
    return misses;
}

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((char)(unsigned char)(v >> (8 * i)));
}

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((char)(unsigned char)(v >> (8 * i)));
}

void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

void put_tensor(std::string& out, const Tensor& t) {
    out.push_back((char)(unsigned char)t.rank());
    for (int i = 0; i < t.rank(); ++i) put_u32_le(out, (std::uint32_t)t.dim(i));
    for (long long i = 0; i < t.size(); ++i) put_f32_le(out, (float)t.data()[i]);
}

struct Cursor {
    const unsigned char* p;
    std::size_t left;
    const std::string& path;

    void need(std::size_t n, const char* what) const {
        if (left < n)
            throw FormatError(path + ": truncated while reading " + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= (std::uint32_t)p[i] << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= (std::uint64_t)p[i] << (8 * i);
        p += 8;
        left -= 8;
        return v;
    }
    unsigned char u8(const char* what) {
        need(1, what);
        const unsigned char v = *p;
        ++p;
        --left;
        return v;
    }
    Tensor tensor(const char* what) {
        const int rank = u8(what);
        if (rank < 1 || rank > 4)
            throw FormatError(path + ": tensor rank " + std::to_string(rank) +
                              " outside 1..4 in " + what);
        std::vector<int> shape((std::size_t)rank);
        long long total = 1;
        for (int i = 0; i < rank; ++i) {
            shape[(std::size_t)i] = (int)u32(what);
            if (shape[(std::size_t)i] < 1)
                throw FormatError(path + ": nonpositive tensor extent in " + what);
            total *= shape[(std::size_t)i];
        }
        need((std::size_t)total * 4, what);
        Tensor t(shape);
        for (long long i = 0; i < total; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= (std::uint32_t)p[(std::size_t)(4 * i + b)] << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            t.data()[i] = (real)f;
        }
        p += (std::size_t)total * 4;
        left -= (std::size_t)total * 4;
        return t;
    }
};

} // namespace

real top_k_error(const Tensor& probs, const std::vector<int>& labels, int k) {
    if (probs.rank() != 2)
        throw std::invalid_argument("top_k_error: probs must be batch x K, got " +
                                    probs.shape_str());
    return (real)top_k_miss_count(probs, labels, k) / (real)probs.dim(0);
}

std::pair<real, real> evaluate_top_errors(const Network& net, const ParameterStore& params,
                                          const Dataset& ds, int batch_size, int k) {
    const int kk = std::min(k, net.num_classes());
    long long miss1 = 0, missk = 0, total = 0;
    BatchIterator it(ds, batch_size, 0, 0);
    Tensor images;
    std::vector<int> labels;
    while (it.next(images, labels)) {
        const ActivationRecord rec = net.forward(params, images);
        const Tensor& probs = rec.main_probs();
        miss1 += top_k_miss_count(probs, labels, 1);
        missk += top_k_miss_count(probs, labels, kk);
        total += (long long)labels.size();
    }
    return {(real)miss1 / (real)total, (real)missk / (real)total};
}

std::pair<NetworkSpec, ParameterStore> strip_branches(const NetworkSpec& spec,
                                                      const ParameterStore& params) {
    NetworkSpec out_spec;
    out_spec.main_path = spec.main_path;
    ParameterStore out_params;
    for (const auto& pb : params.blocks)
        if (pb.partition == -1) out_params.blocks.push_back(pb);
    return {std::move(out_spec), std::move(out_params)};
}

void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const ParameterStore& params, const CheckpointMeta& meta) {
    RunConfig text_cfg;
    text_cfg.spec = spec;
    text_cfg.has_network = true;
    text_cfg.meta = meta;
    text_cfg.has_meta = true;
    const std::string text = print_config(text_cfg);

    std::string blob;
    blob += "CNDS";
    put_u32_le(blob, kCheckpointVersion);
    put_u64_le(blob, (std::uint64_t)text.size());
    blob += text;
    for (const auto& pb : params.blocks) {
        put_tensor(blob, pb.w);
        put_tensor(blob, pb.b);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(blob.data(), (std::streamsize)blob.size());
    if (!out) throw IoError("write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Cursor cur{reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), path};
    cur.need(4, "magic");
    if (std::memcmp(cur.p, "CNDS", 4) != 0) throw FormatError(path + ": bad magic");
    cur.p += 4;
    cur.left -= 4;
    const std::uint32_t version = cur.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": version mismatch, file has " + std::to_string(version) +
                          ", this build reads " + std::to_string(kCheckpointVersion));
    const std::uint64_t text_len = cur.u64("spec length");
    cur.need(text_len, "spec text");
    const std::string text(reinterpret_cast<const char*>(cur.p), (std::size_t)text_len);
    cur.p += text_len;
    cur.left -= text_len;

    RunConfig cfg;
    try {
        cfg = parse_config_text(text);
    } catch (const ConfigError& e) {
        throw FormatError(path + ": embedded spec: " + e.what());
    }
    if (!cfg.has_network) throw FormatError(path + ": embedded spec has no [network] section");

    LoadedCheckpoint loaded;
    loaded.spec = cfg.spec;
    loaded.meta = cfg.meta;

    auto read_block = [&cur, &path](const BlockSpec& b, int partition) {
        ParamBlock pb;
        pb.block_name = b.name;
        pb.partition = partition;
        pb.w = cur.tensor(("weights of '" + b.name + "'").c_str());
        pb.b = cur.tensor(("bias of '" + b.name + "'").c_str());
        if (b.kind == BlockKind::Conv) {
            if (pb.w.rank() != 4 || pb.w.dim(0) != b.out_channels || pb.w.dim(2) != b.kernel ||
                pb.w.dim(3) != b.kernel)
                throw FormatError(path + ": weight shape " + pb.w.shape_str() +
                                  " inconsistent with conv block '" + b.name + "'");
            if (pb.b.rank() != 1 || pb.b.dim(0) != b.out_channels)
                throw FormatError(path + ": bias shape " + pb.b.shape_str() +
                                  " inconsistent with conv block '" + b.name + "'");
        } else {
            if (pb.w.rank() != 2 || pb.w.dim(0) != b.out_dim)
                throw FormatError(path + ": weight shape " + pb.w.shape_str() +
                                  " inconsistent with linear block '" + b.name + "'");
            if (pb.b.rank() != 1 || pb.b.dim(0) != b.out_dim)
                throw FormatError(path + ": bias shape " + pb.b.shape_str() +
                                  " inconsistent with linear block '" + b.name + "'");
        }
        return pb;
    };

    for (const auto& b : loaded.spec.main_path)
        if (b.kind == BlockKind::Conv || b.kind == BlockKind::Linear)
            loaded.params.blocks.push_back(read_block(b, -1));
    for (std::size_t j = 0; j < loaded.spec.branches.size(); ++j)
        for (const auto& b : loaded.spec.branches[j].blocks)
            if (b.kind == BlockKind::Conv || b.kind == BlockKind::Linear)
                loaded.params.blocks.push_back(read_block(b, (int)j));
    if (cur.left != 0)
        throw FormatError(path + ": " + std::to_string(cur.left) +
                          " trailing bytes after the last parameter blob");
    return loaded;
}

} // namespace cnds
