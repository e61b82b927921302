#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cnds/tensor.hpp"

namespace cnds {

struct Dataset {
    Tensor images; // count x C x H x W, values in [0,1]
    std::vector<int> labels;
    int num_classes = 0;

    long long count() const { return images.empty() ? 0 : images.dim(0); }
    // Per-example shape {C, H, W}.
    std::vector<int> example_shape() const;
};

// Reads an IDX u8 image tensor (big-endian magic 0x00000803, extents
// count x H x W) plus an IDX u8 label vector (magic 0x00000801). Pixels are
// normalized to [0,1]; counts are cross-checked. Throws IoError on
// filesystem problems and FormatError on malformed contents.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the dataset in the same layout, quantizing pixels to bytes
// (round(v * 255)). Labels must fit in a byte.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Class-conditional blob images: each class gets a fixed spatial pattern,
// noise is scaled by difficulty, labels cycle 0..K-1 so classes stay
// balanced. Deterministic in seed. shape is {C, H, W}.
Dataset synthetic_dataset(std::uint64_t seed, int count, const std::vector<int>& shape, int K,
                          real difficulty);

// Random crop to crop_size x crop_size (offsets drawn from rng) plus
// optional horizontal flip. image is C x H x W.
Tensor augment(const Tensor& image, int crop_size, bool flip, std::mt19937_64& rng);

// Deterministic shuffled mini-batches; the permutation depends only on
// (seed, epoch). The final partial batch is emitted as-is.
class BatchIterator {
public:
    BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, int epoch);
    // Fills the next batch; returns false once the epoch is exhausted.
    bool next(Tensor& images, std::vector<int>& labels);
    const std::vector<int>& permutation() const { return perm_; }

private:
    const Dataset* ds_;
    std::vector<int> perm_;
    long long pos_ = 0;
    int batch_size_;
};

} // namespace cnds
