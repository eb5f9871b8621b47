#include "doctest.h"

#include <vector>

#include "stroke/kernels.hpp"
#include "stroke/rng.hpp"

using namespace stroke;

namespace {

std::vector<double> rand_vec(int64_t n, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul family: parallel driver is bit-identical to serial") {
    Rng rng(101);
    for (int it = 0; it < 12; ++it) {
        const int64_t M = 1 + rng.uniform_int(23);
        const int64_t K = 1 + rng.uniform_int(23);
        const int64_t N = 1 + rng.uniform_int(23);
        auto a = rand_vec(M * K, rng);
        auto b = rand_vec(K * N, rng);
        auto bt = rand_vec(N * K, rng);
        auto bm = rand_vec(M * N, rng);
        const bool acc = (it % 2) == 1;

        auto seed_c = rand_vec(M * N, rng);
        auto c0 = seed_c, c1 = seed_c;
        kernels::matmul(a.data(), b.data(), c0.data(), M, K, N, acc);
        kernels::ref::matmul(a.data(), b.data(), c1.data(), M, K, N, acc);
        CHECK(bits_equal(c0, c1));

        c0 = seed_c, c1 = seed_c;
        kernels::matmul_nt(a.data(), bt.data(), c0.data(), M, K, N, acc);
        kernels::ref::matmul_nt(a.data(), bt.data(), c1.data(), M, K, N, acc);
        CHECK(bits_equal(c0, c1));

        auto d0 = rand_vec(K * N, rng);
        auto d1 = d0;
        kernels::matmul_tn(a.data(), bm.data(), d0.data(), M, K, N, acc);
        kernels::ref::matmul_tn(a.data(), bm.data(), d1.data(), M, K, N, acc);
        CHECK(bits_equal(d0, d1));
    }
}

TEST_CASE("matmul: 2x2 hand example") {
    // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4, 0.0);
    kernels::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c[0] == doctest::Approx(19));
    CHECK(c[1] == doctest::Approx(22));
    CHECK(c[2] == doctest::Approx(43));
    CHECK(c[3] == doctest::Approx(50));
}

TEST_CASE("bmm family: parallel driver is bit-identical to serial") {
    Rng rng(202);
    for (int it = 0; it < 10; ++it) {
        const int64_t B = 1 + rng.uniform_int(5);
        const int64_t n = 1 + rng.uniform_int(12);
        const int64_t k = 1 + rng.uniform_int(12);
        const int64_t m = 1 + rng.uniform_int(12);
        auto a = rand_vec(B * n * k, rng);   // [B,n,k]
        auto b = rand_vec(B * k * m, rng);   // [B,k,m]
        auto bt = rand_vec(B * m * k, rng);  // [B,m,k]
        auto bn = rand_vec(B * n * m, rng);  // [B,n,m]

        std::vector<double> c0(B * n * m), c1(B * n * m);
        kernels::bmm(a.data(), b.data(), c0.data(), B, n, k, m);
        kernels::ref::bmm(a.data(), b.data(), c1.data(), B, n, k, m);
        CHECK(bits_equal(c0, c1));

        kernels::bmm_nt(a.data(), bt.data(), c0.data(), B, n, k, m);
        kernels::ref::bmm_nt(a.data(), bt.data(), c1.data(), B, n, k, m);
        CHECK(bits_equal(c0, c1));

        std::vector<double> d0(B * k * m), d1(B * k * m);
        kernels::bmm_tn(a.data(), bn.data(), d0.data(), B, n, k, m);
        kernels::ref::bmm_tn(a.data(), bn.data(), d1.data(), B, n, k, m);
        CHECK(bits_equal(d0, d1));
    }
}

TEST_CASE("conv2d family: parallel driver is bit-identical to serial") {
    Rng rng(303);
    for (int it = 0; it < 8; ++it) {
        const int64_t groups = (it % 3 == 0) ? 2 : 1;
        const int64_t B = 1 + rng.uniform_int(3);
        const int64_t Cin = groups * (1 + rng.uniform_int(4));
        const int64_t Cout = groups * (1 + rng.uniform_int(4));
        const int64_t H = 4 + rng.uniform_int(9);
        const int64_t W = 4 + rng.uniform_int(9);
        const int64_t kh = 1 + rng.uniform_int(3);
        const int64_t kw = 1 + rng.uniform_int(3);
        const int64_t stride = 1 + rng.uniform_int(2);
        const int64_t pad = rng.uniform_int(2);
        const int64_t Ho = kernels::conv_out_side(H, kh, stride, pad);
        const int64_t Wo = kernels::conv_out_side(W, kw, stride, pad);
        REQUIRE(Ho >= 1);
        REQUIRE(Wo >= 1);

        auto x = rand_vec(B * Cin * H * W, rng);
        auto w = rand_vec(Cout * (Cin / groups) * kh * kw, rng);
        auto gy = rand_vec(B * Cout * Ho * Wo, rng);

        std::vector<double> y0(B * Cout * Ho * Wo), y1(y0.size());
        kernels::conv2d(x.data(), w.data(), y0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad, groups);
        kernels::ref::conv2d(x.data(), w.data(), y1.data(), B, Cin, H, W, Cout, kh, kw, stride, pad, groups);
        CHECK(bits_equal(y0, y1));

        std::vector<double> gx0(x.size()), gx1(x.size());
        kernels::conv2d_grad_input(gy.data(), w.data(), gx0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad, groups);
        kernels::ref::conv2d_grad_input(gy.data(), w.data(), gx1.data(), B, Cin, H, W, Cout, kh, kw, stride, pad,
                                        groups);
        CHECK(bits_equal(gx0, gx1));

        std::vector<double> gw0(w.size()), gw1(w.size());
        kernels::conv2d_grad_weight(x.data(), gy.data(), gw0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad, groups);
        kernels::ref::conv2d_grad_weight(x.data(), gy.data(), gw1.data(), B, Cin, H, W, Cout, kh, kw, stride, pad,
                                         groups);
        CHECK(bits_equal(gw0, gw1));
    }
}

TEST_CASE("conv_transpose2d family: parallel driver is bit-identical to serial") {
    Rng rng(404);
    for (int it = 0; it < 8; ++it) {
        const int64_t B = 1 + rng.uniform_int(3);
        const int64_t Cin = 1 + rng.uniform_int(5);
        const int64_t Cout = 1 + rng.uniform_int(5);
        const int64_t H = 3 + rng.uniform_int(7);
        const int64_t W = 3 + rng.uniform_int(7);
        const int64_t kh = 2 + rng.uniform_int(3);
        const int64_t kw = 2 + rng.uniform_int(3);
        const int64_t stride = 1 + rng.uniform_int(2);
        const int64_t pad = rng.uniform_int(2);
        const int64_t Ho = kernels::conv_transpose_out_side(H, kh, stride, pad);
        const int64_t Wo = kernels::conv_transpose_out_side(W, kw, stride, pad);
        if (Ho < 1 || Wo < 1) continue;

        auto x = rand_vec(B * Cin * H * W, rng);
        auto w = rand_vec(Cin * Cout * kh * kw, rng);
        auto gy = rand_vec(B * Cout * Ho * Wo, rng);

        std::vector<double> y0(B * Cout * Ho * Wo), y1(y0.size());
        kernels::conv_transpose2d(x.data(), w.data(), y0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad);
        kernels::ref::conv_transpose2d(x.data(), w.data(), y1.data(), B, Cin, H, W, Cout, kh, kw, stride, pad);
        CHECK(bits_equal(y0, y1));

        std::vector<double> gx0(x.size()), gx1(x.size());
        kernels::conv_transpose2d_grad_input(gy.data(), w.data(), gx0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad);
        kernels::ref::conv_transpose2d_grad_input(gy.data(), w.data(), gx1.data(), B, Cin, H, W, Cout, kh, kw, stride,
                                                  pad);
        CHECK(bits_equal(gx0, gx1));

        std::vector<double> gw0(w.size()), gw1(w.size());
        kernels::conv_transpose2d_grad_weight(x.data(), gy.data(), gw0.data(), B, Cin, H, W, Cout, kh, kw, stride, pad);
        kernels::ref::conv_transpose2d_grad_weight(x.data(), gy.data(), gw1.data(), B, Cin, H, W, Cout, kh, kw, stride,
                                                   pad);
        CHECK(bits_equal(gw0, gw1));
    }
}

TEST_CASE("conv_transpose2d upsamples 2x with the GAN kernel geometry") {
    // k=4, s=2, p=1 doubles the side: (H-1)*2 - 2 + 4 = 2H
    CHECK(kernels::conv_transpose_out_side(4, 4, 2, 1) == 8);
    CHECK(kernels::conv_transpose_out_side(16, 4, 2, 1) == 32);
    CHECK(kernels::conv_out_side(224, 16, 16, 0) == 14);
    CHECK(kernels::conv_out_side(32, 3, 1, 1) == 32);
    CHECK(kernels::conv_out_side(64, 4, 2, 1) == 32);
}

TEST_CASE("softmax_rows: parallel matches serial and rows sum to one") {
    Rng rng(505);
    for (int it = 0; it < 6; ++it) {
        const int64_t rows = 1 + rng.uniform_int(40);
        const int64_t n = 1 + rng.uniform_int(17);
        auto x = rand_vec(rows * n, rng);
        std::vector<double> y0(x.size()), y1(x.size());
        kernels::softmax_rows(x.data(), y0.data(), rows, n);
        kernels::ref::softmax_rows(x.data(), y1.data(), rows, n);
        CHECK(bits_equal(y0, y1));
        for (int64_t r = 0; r < rows; ++r) {
            double s = 0;
            for (int64_t j = 0; j < n; ++j) s += y0[r * n + j];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax_rows survives large magnitudes") {
    std::vector<double> x{1000.0, 0.0, 0.0}, y(3);
    kernels::softmax_rows(x.data(), y.data(), 1, 3);
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(y[0]));
}

}  // TEST_SUITE
