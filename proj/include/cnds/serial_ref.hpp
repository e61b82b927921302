#pragma once

#include <vector>

#include "cnds/tensor.hpp"

// Straight-line serial reference kernels. Deliberately written in the most
// obvious form (backward passes scatter into the destination instead of
// gathering) so they serve as an independent oracle for the OpenMP kernels
// and as the baseline side of the benchmark.

namespace cnds::serial {

void conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    int stride, int pad, Tensor& out);
void conv2d_backward_input(const Tensor& grad_out, const Tensor& weights,
                           int stride, int pad, Tensor& grad_in);
void conv2d_backward_params(const Tensor& grad_out, const Tensor& input,
                            int stride, int pad, Tensor& grad_w, Tensor& grad_b);

void maxpool_forward(const Tensor& input, int window, int stride,
                     Tensor& out, std::vector<int>& argmax);
void maxpool_backward(const Tensor& grad_out, const std::vector<int>& argmax,
                      int window, int stride, Tensor& grad_in);

void relu_forward(const Tensor& input, Tensor& out);
void relu_backward(const Tensor& grad_out, const Tensor& out, Tensor& grad_in);

void linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    Tensor& out);
void linear_backward_input(const Tensor& grad_out, const Tensor& weights, Tensor& grad_in);
void linear_backward_params(const Tensor& grad_out, const Tensor& input,
                            Tensor& grad_w, Tensor& grad_b);

void softmax_rows(const Tensor& logits, Tensor& probs);

} // namespace cnds::serial
