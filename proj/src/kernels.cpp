#include "cnds/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cnds::kernels {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias,
                       int stride, int pad) {
    require(input.rank() == 4, "conv2d: input must be rank 4, got shape " + input.shape_str());
    require(weights.rank() == 4, "conv2d: weights must be rank 4, got shape " + weights.shape_str());
    require(bias.rank() == 1, "conv2d: bias must be rank 1, got shape " + bias.shape_str());
    require(stride >= 1, "conv2d: stride must be positive");
    require(pad >= 0, "conv2d: pad must be nonnegative");
    require(input.dim(1) == weights.dim(1),
            "conv2d: input channels != kernel in-channels (input " + input.shape_str() +
            " vs weights " + weights.shape_str() + ")");
    require(bias.dim(0) == weights.dim(0),
            "conv2d: bias length != kernel out-channels (bias " + bias.shape_str() +
            " vs weights " + weights.shape_str() + ")");
    const int oh = (input.dim(2) + 2 * pad - weights.dim(2)) / stride + 1;
    const int ow = (input.dim(3) + 2 * pad - weights.dim(3)) / stride + 1;
    require(input.dim(2) + 2 * pad >= weights.dim(2) && oh >= 1 &&
            input.dim(3) + 2 * pad >= weights.dim(3) && ow >= 1,
            "conv2d: nonpositive output extent for input " + input.shape_str() +
            ", weights " + weights.shape_str());
}

} // namespace

void conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    int stride, int pad, Tensor& out) {
    check_conv_shapes(input, weights, bias, stride, pad);
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OC = weights.dim(0), KH = weights.dim(2), KW = weights.dim(3);
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    out = Tensor({N, OC, OH, OW});
    const real* in = input.data();
    const real* w = weights.data();
    const real* b = bias.data();
    real* o = out.data();
    const long long total = (long long)N * OC * OH * OW;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const int ow = (int)(idx % OW);
        const int oh = (int)(idx / OW % OH);
        const int oc = (int)(idx / OW / OH % OC);
        const int n = (int)(idx / OW / OH / OC);
        real acc = b[oc];
        for (int c = 0; c < C; ++c) {
            for (int kh = 0; kh < KH; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int kw = 0; kw < KW; ++kw) {
                    const int iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= W) continue;
                    acc += in[((long long)(n * C + c) * H + ih) * W + iw] *
                           w[((long long)(oc * C + c) * KH + kh) * KW + kw];
                }
            }
        }
        o[idx] = acc;
    }
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& weights,
                           int stride, int pad, Tensor& grad_in) {
    require(grad_out.rank() == 4 && weights.rank() == 4 && grad_in.rank() == 4,
            "conv2d backward: all tensors must be rank 4");
    require(grad_out.dim(1) == weights.dim(0),
            "conv2d backward: grad_out channels != kernel out-channels");
    require(grad_in.dim(1) == weights.dim(1),
            "conv2d backward: grad_in channels != kernel in-channels");
    const int N = grad_in.dim(0), C = grad_in.dim(1), H = grad_in.dim(2), W = grad_in.dim(3);
    const int OC = weights.dim(0), KH = weights.dim(2), KW = weights.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    const real* go = grad_out.data();
    const real* w = weights.data();
    real* gi = grad_in.data();
    const long long total = (long long)N * C * H * W;
    // Gather form: each input element sums the output positions whose window
    // covers it. Fixed oc/kh/kw order keeps the result thread-count invariant.
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const int iw = (int)(idx % W);
        const int ih = (int)(idx / W % H);
        const int c = (int)(idx / W / H % C);
        const int n = (int)(idx / W / H / C);
        real acc = 0.0;
        for (int oc = 0; oc < OC; ++oc) {
            for (int kh = 0; kh < KH; ++kh) {
                const int num_h = ih + pad - kh;
                if (num_h < 0 || num_h % stride != 0) continue;
                const int oh = num_h / stride;
                if (oh >= OH) continue;
                for (int kw = 0; kw < KW; ++kw) {
                    const int num_w = iw + pad - kw;
                    if (num_w < 0 || num_w % stride != 0) continue;
                    const int ow = num_w / stride;
                    if (ow >= OW) continue;
                    acc += go[((long long)(n * OC + oc) * OH + oh) * OW + ow] *
                           w[((long long)(oc * C + c) * KH + kh) * KW + kw];
                }
            }
        }
        gi[idx] = acc;
    }
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& input,
                            int stride, int pad, Tensor& grad_w, Tensor& grad_b) {
    require(grad_out.rank() == 4 && input.rank() == 4 && grad_w.rank() == 4 && grad_b.rank() == 1,
            "conv2d backward: bad tensor ranks");
    require(grad_out.dim(0) == input.dim(0), "conv2d backward: batch mismatch");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OC = grad_w.dim(0), KH = grad_w.dim(2), KW = grad_w.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    const real* go = grad_out.data();
    const real* in = input.data();
    real* gw = grad_w.data();
    real* gb = grad_b.data();
    const long long wtotal = (long long)OC * C * KH * KW;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < wtotal; ++idx) {
        const int kw = (int)(idx % KW);
        const int kh = (int)(idx / KW % KH);
        const int c = (int)(idx / KW / KH % C);
        const int oc = (int)(idx / KW / KH / C);
        real acc = 0.0;
        for (int n = 0; n < N; ++n) {
            for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= W) continue;
                    acc += go[((long long)(n * OC + oc) * OH + oh) * OW + ow] *
                           in[((long long)(n * C + c) * H + ih) * W + iw];
                }
            }
        }
        gw[idx] = acc;
    }
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < OC; ++oc) {
        real acc = 0.0;
        for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow)
                    acc += go[((long long)(n * OC + oc) * OH + oh) * OW + ow];
        gb[oc] = acc;
    }
}

void maxpool_forward(const Tensor& input, int window, int stride,
                     Tensor& out, std::vector<int>& argmax) {
    require(input.rank() == 4, "maxpool: input must be rank 4, got " + input.shape_str());
    require(window >= 1 && stride >= 1, "maxpool: window and stride must be positive");
    require(window <= input.dim(2) && window <= input.dim(3),
            "maxpool: window " + std::to_string(window) + " larger than input " + input.shape_str());
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int OH = (H - window) / stride + 1;
    const int OW = (W - window) / stride + 1;
    out = Tensor({N, C, OH, OW});
    argmax.assign((size_t)N * C * OH * OW, -1);
    const real* in = input.data();
    real* o = out.data();
    int* am = argmax.data();
    const long long total = (long long)N * C * OH * OW;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const int ow = (int)(idx % OW);
        const int oh = (int)(idx / OW % OH);
        const int c = (int)(idx / OW / OH % C);
        const int n = (int)(idx / OW / OH / C);
        real best = 0.0;
        int best_idx = -1;
        for (int kh = 0; kh < window; ++kh) {
            const int ih = oh * stride + kh;
            for (int kw = 0; kw < window; ++kw) {
                const int iw = ow * stride + kw;
                const long long flat = ((long long)(n * C + c) * H + ih) * W + iw;
                const real v = in[flat];
                if (best_idx < 0 || v > best) { // strict > keeps the first max in scan order
                    best = v;
                    best_idx = (int)flat;
                }
            }
        }
        o[idx] = best;
        am[idx] = best_idx;
    }
}

void maxpool_backward(const Tensor& grad_out, const std::vector<int>& argmax,
                      int window, int stride, Tensor& grad_in) {
    require(grad_out.rank() == 4 && grad_in.rank() == 4, "maxpool backward: tensors must be rank 4");
    require(argmax.size() == (size_t)grad_out.size(), "maxpool backward: argmax size mismatch");
    const int N = grad_in.dim(0), C = grad_in.dim(1), H = grad_in.dim(2), W = grad_in.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    const real* go = grad_out.data();
    const int* am = argmax.data();
    real* gi = grad_in.data();
    const long long total = (long long)N * C * H * W;
    // Gather form: each input element scans the (few) windows that cover it
    // and claims the gradient where it won the argmax.
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const int iw = (int)(idx % W);
        const int ih = (int)(idx / W % H);
        const int c = (int)(idx / W / H % C);
        const int n = (int)(idx / W / H / C);
        real acc = 0.0;
        const int oh_lo = ih >= window ? (ih - window) / stride + 1 : 0;
        const int ow_lo = iw >= window ? (iw - window) / stride + 1 : 0;
        for (int oh = oh_lo; oh <= ih / stride && oh < OH; ++oh) {
            for (int ow = ow_lo; ow <= iw / stride && ow < OW; ++ow) {
                const long long oidx = ((long long)(n * C + c) * OH + oh) * OW + ow;
                if (am[oidx] == (int)idx) acc += go[oidx];
            }
        }
        gi[idx] = acc;
    }
}

void relu_forward(const Tensor& input, Tensor& out) {
    out = Tensor(input.shape());
    const real* in = input.data();
    real* o = out.data();
    const long long total = input.size();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const Tensor& grad_out, const Tensor& out, Tensor& grad_in) {
    require(grad_out.size() == out.size(), "relu backward: size mismatch");
    grad_in = Tensor(grad_out.shape());
    const real* go = grad_out.data();
    const real* o = out.data();
    real* gi = grad_in.data();
    const long long total = grad_out.size();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) gi[i] = o[i] > 0.0 ? go[i] : 0.0;
}

void linear_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                    Tensor& out) {
    require(weights.rank() == 2, "linear: weights must be rank 2, got " + weights.shape_str());
    require(bias.rank() == 1 && bias.dim(0) == weights.dim(0),
            "linear: bias length != weight out-dimension");
    const int N = input.dim(0);
    const long long D = input.size() / N;
    require(D == weights.dim(1),
            "linear: flattened input length " + std::to_string(D) +
            " != weight input dimension " + std::to_string(weights.dim(1)) +
            " (input " + input.shape_str() + ", weights " + weights.shape_str() + ")");
    const int OUT = weights.dim(0);
    out = Tensor({N, OUT});
    const real* in = input.data();
    const real* w = weights.data();
    const real* b = bias.data();
    real* o = out.data();
    const long long total = (long long)N * OUT;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const int j = (int)(idx % OUT);
        const int n = (int)(idx / OUT);
        real acc = b[j];
        const real* xrow = in + n * D;
        const real* wrow = w + (long long)j * D;
        for (long long d = 0; d < D; ++d) acc += xrow[d] * wrow[d];
        o[idx] = acc;
    }
}

void linear_backward_input(const Tensor& grad_out, const Tensor& weights, Tensor& grad_in) {
    require(grad_out.rank() == 2 && weights.rank() == 2, "linear backward: bad ranks");
    require(grad_out.dim(1) == weights.dim(0), "linear backward: out-dimension mismatch");
    const int N = grad_out.dim(0), OUT = weights.dim(0);
    const long long D = weights.dim(1);
    require(grad_in.size() == (long long)N * D, "linear backward: grad_in size mismatch");
    const real* go = grad_out.data();
    const real* w = weights.data();
    real* gi = grad_in.data();
    const long long total = (long long)N * D;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const long long d = idx % D;
        const int n = (int)(idx / D);
        real acc = 0.0;
        for (int j = 0; j < OUT; ++j) acc += go[(long long)n * OUT + j] * w[(long long)j * D + d];
        gi[idx] = acc;
    }
}

void linear_backward_params(const Tensor& grad_out, const Tensor& input,
                            Tensor& grad_w, Tensor& grad_b) {
    const int N = grad_out.dim(0), OUT = grad_out.dim(1);
    const long long D = input.size() / input.dim(0);
    require(grad_w.rank() == 2 && grad_w.dim(0) == OUT && grad_w.dim(1) == D,
            "linear backward: grad_w shape mismatch");
    require(grad_b.rank() == 1 && grad_b.dim(0) == OUT, "linear backward: grad_b shape mismatch");
    const real* go = grad_out.data();
    const real* in = input.data();
    real* gw = grad_w.data();
    real* gb = grad_b.data();
    const long long total = (long long)OUT * D;
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < total; ++idx) {
        const long long d = idx % D;
        const int j = (int)(idx / D);
        real acc = 0.0;
        for (int n = 0; n < N; ++n) acc += go[(long long)n * OUT + j] * in[(long long)n * D + d];
        gw[idx] = acc;
    }
#pragma omp parallel for schedule(static)
    for (int j = 0; j < OUT; ++j) {
        real acc = 0.0;
        for (int n = 0; n < N; ++n) acc += go[(long long)n * OUT + j];
        gb[j] = acc;
    }
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
    require(logits.rank() == 2, "softmax: logits must be rank 2, got " + logits.shape_str());
    require(logits.dim(1) >= 1, "softmax: need at least one class");
    const int N = logits.dim(0), K = logits.dim(1);
    probs = Tensor({N, K});
    const real* x = logits.data();
    real* p = probs.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        const real* row = x + (long long)n * K;
        real* prow = p + (long long)n * K;
        real m = row[0];
        for (int k = 1; k < K; ++k)
            if (row[k] > m) m = row[k];
        real sum = 0.0;
        for (int k = 0; k < K; ++k) {
            prow[k] = std::exp(row[k] - m);
            sum += prow[k];
        }
        for (int k = 0; k < K; ++k) prow[k] /= sum;
    }
}

} // namespace cnds::kernels
