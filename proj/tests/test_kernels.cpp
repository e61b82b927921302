#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "cnds/kernels.hpp"
#include "cnds/serial_ref.hpp"
#include "cnds/tensor.hpp"

// The parallel kernels must agree bitwise with the serial reference on
// every operation, including the scatter-vs-gather backward formulations.

using namespace cnds;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<real> dist(-1.0, 1.0);
    for (auto& v : t.raw()) v = dist(gen);
    return t;
}

int conv_out(int extent, int k, int stride, int pad) {
    return (extent + 2 * pad - k) / stride + 1;
}

// For ops whose parallel gather and serial scatter accumulate the same terms
// in a different order, bitwise equality cannot hold; agreement to a few ulps
// is the correctness statement instead.
void check_close(const Tensor& got, const Tensor& want, real tol = 1e-13) {
    REQUIRE(got.same_shape(want));
    for (long long i = 0; i < got.size(); ++i)
        CHECK(std::fabs(got[i] - want[i]) <=
              tol * (1.0 + std::fabs(got[i]) + std::fabs(want[i])));
}

struct ConvCase {
    int n, c, h, w, oc, k, stride, pad;
};

const ConvCase kConvCases[] = {
    {1, 1, 1, 1, 1, 1, 1, 0}, {1, 1, 5, 5, 2, 3, 1, 0},  {2, 3, 8, 8, 4, 3, 1, 1},
    {2, 2, 9, 7, 3, 3, 2, 1}, {1, 4, 11, 11, 2, 5, 3, 2}, {3, 1, 6, 6, 5, 2, 2, 0},
    {2, 3, 12, 10, 4, 7, 2, 3},
};

} // namespace

TEST_CASE("conv2d forward/backward: parallel equals serial bitwise") {
    std::uint64_t seed = 100;
    for (const auto& cc : kConvCases) {
        CAPTURE(cc.h);
        CAPTURE(cc.k);
        CAPTURE(cc.stride);
        CAPTURE(cc.pad);
        const Tensor in = random_tensor({cc.n, cc.c, cc.h, cc.w}, seed++);
        const Tensor w = random_tensor({cc.oc, cc.c, cc.k, cc.k}, seed++);
        const Tensor b = random_tensor({cc.oc}, seed++);
        const int oh = conv_out(cc.h, cc.k, cc.stride, cc.pad);
        const int ow = conv_out(cc.w, cc.k, cc.stride, cc.pad);
        REQUIRE(oh >= 1);
        REQUIRE(ow >= 1);

        Tensor out_p({cc.n, cc.oc, oh, ow}), out_s({cc.n, cc.oc, oh, ow});
        kernels::conv2d_forward(in, w, b, cc.stride, cc.pad, out_p);
        serial::conv2d_forward(in, w, b, cc.stride, cc.pad, out_s);
        CHECK(out_p.raw() == out_s.raw());

        const Tensor gout = random_tensor(out_p.shape(), seed++);
        Tensor gin_p(in.shape()), gin_s(in.shape());
        kernels::conv2d_backward_input(gout, w, cc.stride, cc.pad, gin_p);
        serial::conv2d_backward_input(gout, w, cc.stride, cc.pad, gin_s);
        // The gather sums kernel taps in a different order than the scatter,
        // so this one is ulp-close rather than bitwise.
        check_close(gin_p, gin_s);

        Tensor gw_p(w.shape()), gb_p(b.shape()), gw_s(w.shape()), gb_s(b.shape());
        kernels::conv2d_backward_params(gout, in, cc.stride, cc.pad, gw_p, gb_p);
        serial::conv2d_backward_params(gout, in, cc.stride, cc.pad, gw_s, gb_s);
        CHECK(gw_p.raw() == gw_s.raw());
        CHECK(gb_p.raw() == gb_s.raw());
    }
}

TEST_CASE("maxpool forward/backward: parallel equals serial bitwise") {
    struct PoolCase {
        int n, c, h, w, window, stride;
    };
    const PoolCase cases[] = {
        {1, 1, 2, 2, 2, 2}, {2, 3, 8, 8, 2, 2}, {1, 2, 9, 9, 3, 2},
        {2, 1, 7, 5, 2, 1}, {1, 4, 6, 6, 3, 3},
    };
    std::uint64_t seed = 200;
    for (const auto& pc : cases) {
        CAPTURE(pc.h);
        CAPTURE(pc.window);
        CAPTURE(pc.stride);
        const Tensor in = random_tensor({pc.n, pc.c, pc.h, pc.w}, seed++);
        const int oh = (pc.h - pc.window) / pc.stride + 1;
        const int ow = (pc.w - pc.window) / pc.stride + 1;

        Tensor out_p({pc.n, pc.c, oh, ow}), out_s({pc.n, pc.c, oh, ow});
        std::vector<int> am_p, am_s;
        kernels::maxpool_forward(in, pc.window, pc.stride, out_p, am_p);
        serial::maxpool_forward(in, pc.window, pc.stride, out_s, am_s);
        CHECK(out_p.raw() == out_s.raw());
        CHECK(am_p == am_s);

        const Tensor gout = random_tensor(out_p.shape(), seed++);
        Tensor gin_p(in.shape()), gin_s(in.shape());
        kernels::maxpool_backward(gout, am_p, pc.window, pc.stride, gin_p);
        serial::maxpool_backward(gout, am_s, pc.window, pc.stride, gin_s);
        CHECK(gin_p.raw() == gin_s.raw());
    }
}

TEST_CASE("maxpool backward with ties: every overlapping claim resolves identically") {
    // Constant input makes every window a tie; overlapping windows (stride <
    // window) force the gather formulation to reproduce first-scan ownership.
    Tensor in({1, 1, 6, 6});
    for (auto& v : in.raw()) v = 1.0;
    Tensor out({1, 1, 5, 5}), out_s({1, 1, 5, 5});
    std::vector<int> am, am_s;
    kernels::maxpool_forward(in, 2, 1, out, am);
    serial::maxpool_forward(in, 2, 1, out_s, am_s);
    CHECK(am == am_s);

    const Tensor gout = random_tensor(out.shape(), 300);
    Tensor gin_p(in.shape()), gin_s(in.shape());
    kernels::maxpool_backward(gout, am, 2, 1, gin_p);
    serial::maxpool_backward(gout, am_s, 2, 1, gin_s);
    CHECK(gin_p.raw() == gin_s.raw());
}

TEST_CASE("relu forward/backward: parallel equals serial bitwise") {
    const Tensor in = random_tensor({3, 2, 5, 5}, 400);
    Tensor out_p(in.shape()), out_s(in.shape());
    kernels::relu_forward(in, out_p);
    serial::relu_forward(in, out_s);
    CHECK(out_p.raw() == out_s.raw());

    const Tensor gout = random_tensor(in.shape(), 401);
    Tensor gin_p(in.shape()), gin_s(in.shape());
    kernels::relu_backward(gout, out_p, gin_p);
    serial::relu_backward(gout, out_s, gin_s);
    CHECK(gin_p.raw() == gin_s.raw());
}

TEST_CASE("linear forward/backward: parallel equals serial bitwise") {
    struct LinCase {
        int n, d, out;
    };
    const LinCase cases[] = {{1, 1, 1}, {4, 10, 7}, {8, 64, 32}, {3, 17, 29}};
    std::uint64_t seed = 500;
    for (const auto& lc : cases) {
        CAPTURE(lc.n);
        CAPTURE(lc.d);
        const Tensor in = random_tensor({lc.n, lc.d}, seed++);
        const Tensor w = random_tensor({lc.out, lc.d}, seed++);
        const Tensor b = random_tensor({lc.out}, seed++);

        Tensor out_p({lc.n, lc.out}), out_s({lc.n, lc.out});
        kernels::linear_forward(in, w, b, out_p);
        serial::linear_forward(in, w, b, out_s);
        CHECK(out_p.raw() == out_s.raw());

        const Tensor gout = random_tensor(out_p.shape(), seed++);
        Tensor gin_p(in.shape()), gin_s(in.shape());
        kernels::linear_backward_input(gout, w, gin_p);
        serial::linear_backward_input(gout, w, gin_s);
        CHECK(gin_p.raw() == gin_s.raw());

        Tensor gw_p(w.shape()), gb_p(b.shape()), gw_s(w.shape()), gb_s(b.shape());
        kernels::linear_backward_params(gout, in, gw_p, gb_p);
        serial::linear_backward_params(gout, in, gw_s, gb_s);
        CHECK(gw_p.raw() == gw_s.raw());
        CHECK(gb_p.raw() == gb_s.raw());
    }
}

TEST_CASE("softmax rows: parallel equals serial bitwise") {
    const Tensor logits = random_tensor({6, 11}, 600);
    Tensor p_p(logits.shape()), p_s(logits.shape());
    kernels::softmax_rows(logits, p_p);
    serial::softmax_rows(logits, p_s);
    CHECK(p_p.raw() == p_s.raw());
}

TEST_CASE("kernels are deterministic across repeated invocations") {
    const Tensor in = random_tensor({2, 3, 9, 9}, 700);
    const Tensor w = random_tensor({4, 3, 3, 3}, 701);
    const Tensor b = random_tensor({4}, 702);
    Tensor first({2, 4, 9, 9});
    kernels::conv2d_forward(in, w, b, 1, 1, first);
    for (int rep = 0; rep < 3; ++rep) {
        Tensor again({2, 4, 9, 9});
        kernels::conv2d_forward(in, w, b, 1, 1, again);
        CHECK(again.raw() == first.raw());
    }
}
