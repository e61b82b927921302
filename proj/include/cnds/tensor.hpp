#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cnds {

using real = double;

std::string shape_to_string(const std::vector<int>& shape);
long long shape_product(const std::vector<int>& shape);

// Dense row-major tensor of rank 1..4. Activations use batch x channel x
// height x width; convolution kernels use outC x inC x kH x kW; linear
// weights use out x in.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<real> values);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::string shape_str() const { return shape_to_string(shape_); }
    long long size() const { return static_cast<long long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& raw() { return data_; }
    const std::vector<real>& raw() const { return data_; }

    real& operator[](long long i) { return data_[static_cast<std::size_t>(i)]; }
    real operator[](long long i) const { return data_[static_cast<std::size_t>(i)]; }

    real& at(int i, int j) { return data_[idx2(i, j)]; }
    real at(int i, int j) const { return data_[idx2(i, j)]; }
    real& at(int n, int c, int h, int w) { return data_[idx4(n, c, h, w)]; }
    real at(int n, int c, int h, int w) const { return data_[idx4(n, c, h, w)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    std::size_t idx2(int i, int j) const;
    std::size_t idx4(int n, int c, int h, int w) const;

    std::vector<int> shape_;
    std::vector<real> data_;
};

} // namespace cnds
