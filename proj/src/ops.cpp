#include "cnds/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cnds/kernels.hpp"

namespace cnds {

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride, int pad) {
    Tensor out;
    kernels::conv2d_forward(input, kernels, bias, stride, pad, out);
    return out;
}

std::pair<Tensor, std::vector<int>> maxpool(const Tensor& input, int window, int stride) {
    Tensor out;
    std::vector<int> argmax;
    kernels::maxpool_forward(input, window, stride, out, argmax);
    return {std::move(out), std::move(argmax)};
}

Tensor relu(const Tensor& input) {
    Tensor out;
    kernels::relu_forward(input, out);
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    Tensor out;
    kernels::linear_forward(input, weights, bias, out);
    return out;
}

Tensor softmax(const Tensor& logits) {
    Tensor probs;
    kernels::softmax_rows(logits.rank() == 2 ? logits : flatten_rows(logits), probs);
    return probs;
}

real cross_entropy(const Tensor& probs, int label) {
    long long k = probs.size();
    if (probs.rank() == 2) {
        if (probs.dim(0) != 1)
            throw std::invalid_argument("cross_entropy: single-label form needs one row, got " +
                                        probs.shape_str());
        k = probs.dim(1);
    }
    if (label < 0 || label >= k)
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(k) + " classes");
    return -std::log(probs.data()[label]);
}

real cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2)
        throw std::invalid_argument("cross_entropy: batch probs must be rank 2, got " +
                                    probs.shape_str());
    const int n = probs.dim(0), k = probs.dim(1);
    if ((size_t)n != labels.size())
        throw std::invalid_argument("cross_entropy: batch size " + std::to_string(n) +
                                    " != label count " + std::to_string(labels.size()));
    real sum = 0.0;
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                        " out of range for " + std::to_string(k) + " classes");
        sum += -std::log(probs.at(i, labels[i]));
    }
    return sum / n;
}

Tensor softmax_ce_grad(const Tensor& probs, const std::vector<int>& labels) {
    const int n = probs.dim(0), k = probs.dim(1);
    if ((size_t)n != labels.size())
        throw std::invalid_argument("softmax_ce_grad: batch/label count mismatch");
    Tensor g({n, k});
    const real inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            g.at(i, j) = (probs.at(i, j) - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
    return g;
}

Tensor reshaped(Tensor t, std::vector<int> shape) {
    if (shape_product(shape) != t.size())
        throw std::invalid_argument("reshaped: size mismatch, " + t.shape_str() + " -> " +
                                    shape_to_string(shape));
    return Tensor(std::move(shape), std::move(t.raw()));
}

Tensor flatten_rows(const Tensor& t) {
    const int n = t.dim(0);
    return reshaped(t, {n, (int)(t.size() / n)});
}

} // namespace cnds
