#pragma once

#include <vector>

#include "cnds/tensor.hpp"

// OpenMP-parallel compute kernels. Every kernel parallelizes over output
// (or gradient-destination) elements only, with a fixed inner reduction
// order, so results are bitwise identical for any thread count.
//
// cnds::serial (serial_ref.hpp) provides a plain-loop reference with the
// same signatures, kept for testing and benchmarking.

namespace cnds::kernels {

// input N x C x H x W, weights OC x C x kH x kW, bias OC -> out N x OC x OH x OW.
// Zero padding; out extents must be preallocated by the caller.
void conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    int stride, int pad, Tensor& out);
void conv2d_backward_input(const Tensor& grad_out, const Tensor& weights,
                           int stride, int pad, Tensor& grad_in);
void conv2d_backward_params(const Tensor& grad_out, const Tensor& input,
                            int stride, int pad, Tensor& grad_w, Tensor& grad_b);

// argmax records the flat input index of each window maximum (first in a
// row-major scan on ties).
void maxpool_forward(const Tensor& input, int window, int stride,
                     Tensor& out, std::vector<int>& argmax);
void maxpool_backward(const Tensor& grad_out, const std::vector<int>& argmax,
                      int window, int stride, Tensor& grad_in);

void relu_forward(const Tensor& input, Tensor& out);
// mask comes from the forward output: grad passes where out > 0.
void relu_backward(const Tensor& grad_out, const Tensor& out, Tensor& grad_in);

// input treated as N x D with D = size/N; weights OUT x D, bias OUT.
void linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    Tensor& out);
void linear_backward_input(const Tensor& grad_out, const Tensor& weights, Tensor& grad_in);
void linear_backward_params(const Tensor& grad_out, const Tensor& input,
                            Tensor& grad_w, Tensor& grad_b);

// Row-wise softmax with max subtraction, logits N x K.
void softmax_rows(const Tensor& logits, Tensor& probs);

} // namespace cnds::kernels
