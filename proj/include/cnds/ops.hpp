#pragma once

#include <utility>
#include <vector>

#include "cnds/tensor.hpp"

// Public tensor-engine operations: pure functions over Tensor values.
// Heavy lifting happens in cnds::kernels; these wrappers own shape policy
// and the loss definitions.

namespace cnds {

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride, int pad);
// Returns (pooled, argmax map); argmax holds the flat input index of each
// window maximum, ties going to the first element in row-major order.
std::pair<Tensor, std::vector<int>> maxpool(const Tensor& input, int window, int stride);
Tensor relu(const Tensor& input);
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
// Row-wise softmax; input is batch x K (higher-rank input is flattened per row).
Tensor softmax(const Tensor& logits);

// -ln p[label] for a single distribution (rank 1, or rank 2 with one row).
real cross_entropy(const Tensor& probs, int label);
// Mean of -ln p[i, labels[i]] over the batch.
real cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Gradient of the mean cross-entropy w.r.t. the logits feeding a softmax:
// (p - onehot(label)) / batch, shape batch x K.
Tensor softmax_ce_grad(const Tensor& probs, const std::vector<int>& labels);

// Same data, new shape (sizes must agree).
Tensor reshaped(Tensor t, std::vector<int> shape);
// Collapse to batch x D where batch = dim(0).
Tensor flatten_rows(const Tensor& t);

} // namespace cnds
