#include "cnds/serial_ref.hpp"

#include <cmath>
#include <stdexcept>

// Plain nested loops, no pragmas, backward passes in scatter form. This file
// is intentionally naive; it is the oracle the parallel kernels are checked
// against, so it must stay easy to read and obviously correct.

namespace cnds::serial {

void conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    int stride, int pad, Tensor& out) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OC = weights.dim(0), KH = weights.dim(2), KW = weights.dim(3);
    if (C != weights.dim(1)) throw std::invalid_argument("serial conv2d: channel mismatch");
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (OH < 1 || OW < 1) throw std::invalid_argument("serial conv2d: nonpositive output extent");
    out = Tensor({N, OC, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    real acc = bias.data()[oc];
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += input.at(n, c, ih, iw) *
                                       weights.at(oc, c, kh, kw);
                            }
                    out.at(n, oc, oh, ow) = acc;
                }
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& weights,
                           int stride, int pad, Tensor& grad_in) {
    const int N = grad_in.dim(0), C = grad_in.dim(1), H = grad_in.dim(2), W = grad_in.dim(3);
    const int OC = weights.dim(0), KH = weights.dim(2), KW = weights.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    for (auto& v : grad_in.raw()) v = 0.0;
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow)
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                grad_in.at(n, c, ih, iw) +=
                                    grad_out.at(n, oc, oh, ow) * weights.at(oc, c, kh, kw);
                            }
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& input,
                            int stride, int pad, Tensor& grad_w, Tensor& grad_b) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OC = grad_w.dim(0), KH = grad_w.dim(2), KW = grad_w.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    for (auto& v : grad_w.raw()) v = 0.0;
    for (auto& v : grad_b.raw()) v = 0.0;
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    const real g = grad_out.at(n, oc, oh, ow);
                    grad_b.data()[oc] += g;
                    for (int c = 0; c < C; ++c)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = oh * stride - pad + kh;
                                const int iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                grad_w.at(oc, c, kh, kw) += g * input.at(n, c, ih, iw);
                            }
                }
}

void maxpool_forward(const Tensor& input, int window, int stride,
                     Tensor& out, std::vector<int>& argmax) {
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (window > H || window > W)
        throw std::invalid_argument("serial maxpool: window larger than input");
    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;
    out = Tensor({N, C, OH, OW});
    argmax.assign((size_t)N * C * OH * OW, -1);
    long long oidx = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow, ++oidx) {
                    real best = 0.0;
                    int best_idx = -1;
                    for (int kh = 0; kh < window; ++kh)
                        for (int kw = 0; kw < window; ++kw) {
                            const int ih = oh * stride + kh;
                            const int iw = ow * stride + kw;
                            const long long flat = ((long long)(n * C + c) * H + ih) * W + iw;
                            if (best_idx < 0 || input.data()[flat] > best) {
                                best = input.data()[flat];
                                best_idx = (int)flat;
                            }
                        }
                    out.data()[oidx] = best;
                    argmax[(size_t)oidx] = best_idx;
                }
}

void maxpool_backward(const Tensor& grad_out, const std::vector<int>& argmax,
                      int window, int stride, Tensor& grad_in) {
    (void)window;
    (void)stride;
    for (auto& v : grad_in.raw()) v = 0.0;
    for (long long oidx = 0; oidx < grad_out.size(); ++oidx)
        grad_in.data()[argmax[(size_t)oidx]] += grad_out.data()[oidx];
}

void relu_forward(const Tensor& input, Tensor& out) {
    out = Tensor(input.shape());
    for (long long i = 0; i < input.size(); ++i)
        out.raw()[i] = input.data()[i] > 0.0 ? input.data()[i] : 0.0;
}

void relu_backward(const Tensor& grad_out, const Tensor& out, Tensor& grad_in) {
    grad_in = Tensor(grad_out.shape());
    for (long long i = 0; i < grad_out.size(); ++i)
        grad_in.raw()[i] = out.data()[i] > 0.0 ? grad_out.data()[i] : 0.0;
}

void linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    Tensor& out) {
    const int N = input.dim(0), OUT = weights.dim(0);
    const long long D = input.size() / N;
    if (D != weights.dim(1)) throw std::invalid_argument("serial linear: dimension mismatch");
    out = Tensor({N, OUT});
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < OUT; ++j) {
            real acc = bias.data()[j];
            for (long long d = 0; d < D; ++d)
                acc += input.data()[n * D + d] * weights.data()[(long long)j * D + d];
            out.at(n, j) = acc;
        }
}

void linear_backward_input(const Tensor& grad_out, const Tensor& weights, Tensor& grad_in) {
    const int N = grad_out.dim(0), OUT = weights.dim(0);
    const long long D = weights.dim(1);
    for (auto& v : grad_in.raw()) v = 0.0;
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < OUT; ++j)
            for (long long d = 0; d < D; ++d)
                grad_in.data()[n * D + d] +=
                    grad_out.at(n, j) * weights.data()[(long long)j * D + d];
}

void linear_backward_params(const Tensor& grad_out, const Tensor& input,
                            Tensor& grad_w, Tensor& grad_b) {
    const int N = grad_out.dim(0), OUT = grad_out.dim(1);
    const long long D = input.size() / input.dim(0);
    for (auto& v : grad_w.raw()) v = 0.0;
    for (auto& v : grad_b.raw()) v = 0.0;
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < OUT; ++j) {
            const real g = grad_out.at(n, j);
            grad_b.data()[j] += g;
            for (long long d = 0; d < D; ++d)
                grad_w.data()[(long long)j * D + d] += g * input.data()[n * D + d];
        }
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
    const int N = logits.dim(0), K = logits.dim(1);
    probs = Tensor({N, K});
    for (int n = 0; n < N; ++n) {
        real m = logits.at(n, 0);
        for (int k = 1; k < K; ++k) m = std::max(m, logits.at(n, k));
        real sum = 0.0;
        for (int k = 0; k < K; ++k) {
            probs.at(n, k) = std::exp(logits.at(n, k) - m);
            sum += probs.at(n, k);
        }
        for (int k = 0; k < K; ++k) probs.at(n, k) /= sum;
    }
}

} // namespace cnds::serial
