#include "cnds/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cnds {

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return os.str();
}

long long shape_product(const std::vector<int>& shape) {
    long long p = 1;
    for (int d : shape) p *= d;
    return p;
}

namespace {
void validate_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw std::invalid_argument("tensor rank must be 1..4, got shape " + shape_to_string(shape));
    }
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("tensor extents must be positive, got shape " + shape_to_string(shape));
        }
    }
}
} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape(shape_);
    if (shape_product(shape_) != static_cast<long long>(data_.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_to_string(shape_));
    }
}

bool Tensor::all_finite() const {
    for (real v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t Tensor::idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(j);
}

std::size_t Tensor::idx4(int n, int c, int h, int w) const {
    std::size_t s1 = static_cast<std::size_t>(shape_[1]);
    std::size_t s2 = static_cast<std::size_t>(shape_[2]);
    std::size_t s3 = static_cast<std::size_t>(shape_[3]);
    return ((static_cast<std::size_t>(n) * s1 + static_cast<std::size_t>(c)) * s2 +
            static_cast<std::size_t>(h)) * s3 + static_cast<std::size_t>(w);
}

} // namespace cnds
