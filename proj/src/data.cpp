#include "cnds/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cnds/errors.hpp"

namespace cnds {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803; // u8 payload, 3 dimensions
constexpr std::uint32_t kLabelMagic = 0x00000801; // u8 payload, 1 dimension

std::uint32_t read_u32_be(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(path + ": truncated while reading " + what);
    return (std::uint32_t)b[0] << 24 | (std::uint32_t)b[1] << 16 | (std::uint32_t)b[2] << 8 |
           (std::uint32_t)b[3];
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 8), (unsigned char)v};
    out.write(reinterpret_cast<char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n,
                                        const std::string& path) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)n);
    if ((std::size_t)in.gcount() != n)
        throw FormatError(path + ": truncated payload, expected " + std::to_string(n) +
                          " bytes, got " + std::to_string(in.gcount()));
    in.peek();
    if (!in.eof()) throw FormatError(path + ": trailing bytes after payload");
    return buf;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

char hexdigit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(std::uint32_t v) {
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) s += hexdigit(v >> shift);
    return s;
}

} // namespace

std::vector<int> Dataset::example_shape() const {
    if (images.rank() != 4)
        throw std::invalid_argument("dataset has no examples to take a shape from");
    return {images.dim(1), images.dim(2), images.dim(3)};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto img_in = open_in(images_path);
    const std::uint32_t img_magic = read_u32_be(img_in, images_path, "magic");
    if (img_magic != kImageMagic)
        throw FormatError(images_path + ": bad magic " + hex32(img_magic) + ", expected " +
                          hex32(kImageMagic));
    const int count = (int)read_u32_be(img_in, images_path, "image count");
    const int h = (int)read_u32_be(img_in, images_path, "image height");
    const int w = (int)read_u32_be(img_in, images_path, "image width");
    if (count < 1 || h < 1 || w < 1)
        throw FormatError(images_path + ": nonpositive extents in header");
    const auto pixels = read_payload(img_in, (std::size_t)count * h * w, images_path);

    auto lbl_in = open_in(labels_path);
    const std::uint32_t lbl_magic = read_u32_be(lbl_in, labels_path, "magic");
    if (lbl_magic != kLabelMagic)
        throw FormatError(labels_path + ": bad magic " + hex32(lbl_magic) + ", expected " +
                          hex32(kLabelMagic));
    const int lbl_count = (int)read_u32_be(lbl_in, labels_path, "label count");
    if (lbl_count != count)
        throw FormatError("image/label count mismatch: " + images_path + " has " +
                          std::to_string(count) + ", " + labels_path + " has " +
                          std::to_string(lbl_count));
    const auto raw_labels = read_payload(lbl_in, (std::size_t)lbl_count, labels_path);

    Dataset ds;
    ds.images = Tensor({count, 1, h, w});
    for (long long i = 0; i < ds.images.size(); ++i)
        ds.images.data()[i] = pixels[(std::size_t)i] / 255.0;
    ds.labels.resize((std::size_t)count);
    int max_label = 0;
    for (int i = 0; i < count; ++i) {
        ds.labels[(std::size_t)i] = raw_labels[(std::size_t)i];
        max_label = std::max(max_label, ds.labels[(std::size_t)i]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    if (ds.images.dim(1) != 1)
        throw std::invalid_argument("save_idx: IDX image tensors are single-channel, got " +
                                    ds.images.shape_str());
    const int count = (int)ds.count(), h = ds.images.dim(2), w = ds.images.dim(3);
    auto img_out = open_out(images_path);
    write_u32_be(img_out, kImageMagic);
    write_u32_be(img_out, (std::uint32_t)count);
    write_u32_be(img_out, (std::uint32_t)h);
    write_u32_be(img_out, (std::uint32_t)w);
    std::vector<unsigned char> pixels((std::size_t)ds.images.size());
    for (long long i = 0; i < ds.images.size(); ++i) {
        const real v = std::min(std::max(ds.images.data()[i], 0.0), 1.0);
        pixels[(std::size_t)i] = (unsigned char)std::lround(v * 255.0);
    }
    img_out.write(reinterpret_cast<char*>(pixels.data()), (std::streamsize)pixels.size());
    if (!img_out) throw IoError("write failed for '" + images_path + "'");

    auto lbl_out = open_out(labels_path);
    write_u32_be(lbl_out, kLabelMagic);
    write_u32_be(lbl_out, (std::uint32_t)count);
    std::vector<unsigned char> raw((std::size_t)count);
    for (int i = 0; i < count; ++i) {
        if (ds.labels[(std::size_t)i] < 0 || ds.labels[(std::size_t)i] > 255)
            throw std::invalid_argument("save_idx: label " +
                                        std::to_string(ds.labels[(std::size_t)i]) +
                                        " does not fit in a byte");
        raw[(std::size_t)i] = (unsigned char)ds.labels[(std::size_t)i];
    }
    lbl_out.write(reinterpret_cast<char*>(raw.data()), (std::streamsize)raw.size());
    if (!lbl_out) throw IoError("write failed for '" + labels_path + "'");
}

Dataset synthetic_dataset(std::uint64_t seed, int count, const std::vector<int>& shape, int K,
                          real difficulty) {
    if (shape.size() != 3 || shape[0] < 1 || shape[1] < 1 || shape[2] < 1)
        throw std::invalid_argument("synthetic_dataset: shape must be {C, H, W}");
    if (K < 1 || count < K)
        throw std::invalid_argument("synthetic_dataset: need count >= K >= 1");
    const int C = shape[0], H = shape[1], W = shape[2];
    std::mt19937_64 gen(seed);
    std::normal_distribution<real> noise(0.0, 1.0);

    // One blob pattern per class, centered on a ring so the class means are
    // pairwise distinct.
    const real pi = 3.14159265358979323846;
    std::vector<std::vector<real>> pattern((std::size_t)K,
                                           std::vector<real>((std::size_t)C * H * W, 0.0));
    for (int k = 0; k < K; ++k) {
        const real angle = 2.0 * pi * k / K;
        const real cy = (H - 1) / 2.0 + (H / 3.0) * std::sin(angle);
        const real cx = (W - 1) / 2.0 + (W / 3.0) * std::cos(angle);
        const real sigma = std::max(1.0, H / 6.0);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const real d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    pattern[(std::size_t)k][(std::size_t)(c * H + y) * W + x] =
                        std::exp(-d2 / (2.0 * sigma * sigma));
                }
    }

    Dataset ds;
    ds.images = Tensor({count, C, H, W});
    ds.labels.resize((std::size_t)count);
    ds.num_classes = K;
    const long long per_image = (long long)C * H * W;
    for (int i = 0; i < count; ++i) {
        const int label = i % K;
        ds.labels[(std::size_t)i] = label;
        real* dst = ds.images.data() + i * per_image;
        const auto& pat = pattern[(std::size_t)label];
        for (long long j = 0; j < per_image; ++j) {
            const real v = pat[(std::size_t)j] + difficulty * 0.5 * noise(gen);
            dst[j] = std::min(std::max(v, 0.0), 1.0);
        }
    }
    return ds;
}

Tensor augment(const Tensor& image, int crop_size, bool flip, std::mt19937_64& rng) {
    if (image.rank() != 3)
        throw std::invalid_argument("augment: image must be C x H x W, got " + image.shape_str());
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (crop_size < 1 || crop_size > H || crop_size > W)
        throw std::invalid_argument("augment: crop size " + std::to_string(crop_size) +
                                    " does not fit image " + image.shape_str());
    const int max_y = H - crop_size, max_x = W - crop_size;
    const int off_y = max_y == 0 ? 0 : (int)(rng() % (std::uint64_t)(max_y + 1));
    const int off_x = max_x == 0 ? 0 : (int)(rng() % (std::uint64_t)(max_x + 1));
    Tensor out({C, crop_size, crop_size});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < crop_size; ++y)
            for (int x = 0; x < crop_size; ++x) {
                const int sx = flip ? off_x + crop_size - 1 - x : off_x + x;
                out.raw()[(std::size_t)(c * crop_size + y) * crop_size + x] =
                    image.data()[((long long)c * H + off_y + y) * W + sx];
            }
    return out;
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, int epoch)
    : ds_(&ds), batch_size_(batch_size) {
    if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
    if (ds.count() < 1) throw std::invalid_argument("batches: dataset is empty");
    perm_.resize((std::size_t)ds.count());
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = (int)i;
    // Explicit Fisher-Yates so the permutation depends only on (seed, epoch),
    // not on the standard library's shuffle implementation.
    std::seed_seq seq{(std::uint64_t)seed, (std::uint64_t)epoch};
    std::mt19937_64 gen(seq);
    for (std::size_t i = perm_.size() - 1; i > 0; --i) {
        const std::size_t j = (std::size_t)(gen() % (std::uint64_t)(i + 1));
        std::swap(perm_[i], perm_[j]);
    }
}

bool BatchIterator::next(Tensor& images, std::vector<int>& labels) {
    const long long total = ds_->count();
    if (pos_ >= total) return false;
    const long long n = std::min<long long>(batch_size_, total - pos_);
    const int C = ds_->images.dim(1), H = ds_->images.dim(2), W = ds_->images.dim(3);
    images = Tensor({(int)n, C, H, W});
    labels.resize((std::size_t)n);
    const long long per_image = (long long)C * H * W;
    for (long long i = 0; i < n; ++i) {
        const int src = perm_[(std::size_t)(pos_ + i)];
        const real* s = ds_->images.data() + src * per_image;
        real* d = images.data() + i * per_image;
        std::copy(s, s + per_image, d);
        labels[(std::size_t)i] = ds_->labels[(std::size_t)src];
    }
    pos_ += n;
    return true;
}

} // namespace cnds
