#include "stroke/kernels.hpp"

#include <cmath>

namespace stroke::kernels {

namespace {

template <typename F>
void drive(int64_t n, bool parallel, F&& f) {
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
    } else {
        for (int64_t i = 0; i < n; ++i) f(i);
    }
}

inline void matmul_row(const double* a, const double* b, double* c, int64_t K, int64_t N, int64_t i, bool accumulate) {
    const double* ai = a + i * K;
    double* ci = c + i * N;
    if (!accumulate)
        for (int64_t j = 0; j < N; ++j) ci[j] = 0.0;
    for (int64_t k = 0; k < K; ++k) {
        double av = ai[k];
        const double* bk = b + k * N;
        for (int64_t j = 0; j < N; ++j) ci[j] += av * bk[j];
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int64_t K, int64_t N, int64_t i, bool accumulate) {
    const double* ai = a + i * K;
    double* ci = c + i * N;
    for (int64_t j = 0; j < N; ++j) {
        const double* bj = b + j * K;
        double s = 0.0;
        for (int64_t k = 0; k < K; ++k) s += ai[k] * bj[k];
        ci[j] = accumulate ? ci[j] + s : s;
    }
}

// One row of c[K,N] = a[M,K]^T b[M,N].
inline void matmul_tn_row(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, int64_t k,
                          bool accumulate) {
    double* ck = c + k * N;
    if (!accumulate)
        for (int64_t j = 0; j < N; ++j) ck[j] = 0.0;
    for (int64_t m = 0; m < M; ++m) {
        double av = a[m * K + k];
        const double* bm = b + m * N;
        for (int64_t j = 0; j < N; ++j) ck[j] += av * bm[j];
    }
}

void matmul_impl(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool acc, bool par) {
    drive(M, par, [&](int64_t i) { matmul_row(a, b, c, K, N, i, acc); });
}
void matmul_nt_impl(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool acc, bool par) {
    drive(M, par, [&](int64_t i) { matmul_nt_row(a, b, c, K, N, i, acc); });
}
void matmul_tn_impl(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool acc, bool par) {
    drive(K, par, [&](int64_t k) { matmul_tn_row(a, b, c, M, K, N, k, acc); });
}

void bmm_impl(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool acc, bool par) {
    drive(B * n, par, [&](int64_t idx) {
        int64_t bi = idx / n, i = idx % n;
        matmul_row(a + bi * n * k, b + bi * k * m, c + bi * n * m, k, m, i, acc);
    });
}
void bmm_nt_impl(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool acc,
                 bool par) {
    drive(B * n, par, [&](int64_t idx) {
        int64_t bi = idx / n, i = idx % n;
        matmul_nt_row(a + bi * n * k, b + bi * m * k, c + bi * n * m, k, m, i, acc);
    });
}
void bmm_tn_impl(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool acc,
                 bool par) {
    // c[B,k,m] = a[B,n,k]^T b[B,n,m]
    drive(B * k, par, [&](int64_t idx) {
        int64_t bi = idx / k, kk = idx % k;
        matmul_tn_row(a + bi * n * k, b + bi * n * m, c + bi * k * m, n, k, m, kk, acc);
    });
}

void conv2d_impl(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t Cout,
                 int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups, bool par) {
    const int64_t Ho = conv_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_out_side(W, kw, stride, pad);
    const int64_t cg = Cin / groups;   // input channels per group
    const int64_t og = Cout / groups;  // output channels per group
    drive(B * Cout, par, [&](int64_t idx) {
        const int64_t b = idx / Cout, co = idx % Cout;
        const int64_t g = co / og;
        double* yp = y + ((b * Cout + co) * Ho) * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double s = 0.0;
                for (int64_t ci = 0; ci < cg; ++ci) {
                    const double* xp = x + ((b * Cin + g * cg + ci) * H) * W;
                    const double* wp = w + ((co * cg + ci) * kh) * kw;
                    for (int64_t u = 0; u < kh; ++u) {
                        const int64_t ih = oh * stride - pad + u;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t v = 0; v < kw; ++v) {
                            const int64_t iw = ow * stride - pad + v;
                            if (iw < 0 || iw >= W) continue;
                            s += xp[ih * W + iw] * wp[u * kw + v];
                        }
                    }
                }
                yp[oh * Wo + ow] = s;
            }
        }
    });
}

void conv2d_grad_input_impl(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H, int64_t W,
                            int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups, bool par) {
    const int64_t Ho = conv_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_out_side(W, kw, stride, pad);
    const int64_t cg = Cin / groups;
    const int64_t og = Cout / groups;
    drive(B * Cin, par, [&](int64_t idx) {
        const int64_t b = idx / Cin, ci = idx % Cin;
        const int64_t g = ci / cg, cig = ci % cg;
        double* gxp = gx + ((b * Cin + ci) * H) * W;
        for (int64_t ih = 0; ih < H; ++ih) {
            for (int64_t iw = 0; iw < W; ++iw) {
                double s = 0.0;
                for (int64_t oc = 0; oc < og; ++oc) {
                    const int64_t co = g * og + oc;
                    const double* gyp = gy + ((b * Cout + co) * Ho) * Wo;
                    const double* wp = w + ((co * cg + cig) * kh) * kw;
                    for (int64_t u = 0; u < kh; ++u) {
                        const int64_t t = ih + pad - u;
                        if (t < 0 || t % stride != 0) continue;
                        const int64_t oh = t / stride;
                        if (oh >= Ho) continue;
                        for (int64_t v = 0; v < kw; ++v) {
                            const int64_t q = iw + pad - v;
                            if (q < 0 || q % stride != 0) continue;
                            const int64_t ow = q / stride;
                            if (ow >= Wo) continue;
                            s += gyp[oh * Wo + ow] * wp[u * kw + v];
                        }
                    }
                }
                gxp[ih * W + iw] = s;
            }
        }
    });
}

void conv2d_grad_weight_impl(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H, int64_t W,
                             int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups, bool par) {
    const int64_t Ho = conv_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_out_side(W, kw, stride, pad);
    const int64_t cg = Cin / groups;
    const int64_t og = Cout / groups;
    drive(Cout * cg, par, [&](int64_t idx) {
        const int64_t co = idx / cg, cig = idx % cg;
        const int64_t g = co / og;
        const int64_t ci = g * cg + cig;
        double* gwp = gw + ((co * cg + cig) * kh) * kw;
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                double s = 0.0;
                for (int64_t b = 0; b < B; ++b) {
                    const double* xp = x + ((b * Cin + ci) * H) * W;
                    const double* gyp = gy + ((b * Cout + co) * Ho) * Wo;
                    for (int64_t oh = 0; oh < Ho; ++oh) {
                        const int64_t ih = oh * stride - pad + u;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            const int64_t iw = ow * stride - pad + v;
                            if (iw < 0 || iw >= W) continue;
                            s += xp[ih * W + iw] * gyp[oh * Wo + ow];
                        }
                    }
                }
                gwp[u * kw + v] = s;
            }
    });
}

void conv_transpose2d_impl(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W,
                           int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, bool par) {
    const int64_t Ho = conv_transpose_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_transpose_out_side(W, kw, stride, pad);
    drive(B * Cout, par, [&](int64_t idx) {
        const int64_t b = idx / Cout, co = idx % Cout;
        double* yp = y + ((b * Cout + co) * Ho) * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double s = 0.0;
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const double* xp = x + ((b * Cin + ci) * H) * W;
                    const double* wp = w + ((ci * Cout + co) * kh) * kw;
                    for (int64_t u = 0; u < kh; ++u) {
                        const int64_t t = oh + pad - u;
                        if (t < 0 || t % stride != 0) continue;
                        const int64_t ih = t / stride;
                        if (ih >= H) continue;
                        for (int64_t v = 0; v < kw; ++v) {
                            const int64_t q = ow + pad - v;
                            if (q < 0 || q % stride != 0) continue;
                            const int64_t iw = q / stride;
                            if (iw >= W) continue;
                            s += xp[ih * W + iw] * wp[u * kw + v];
                        }
                    }
                }
                yp[oh * Wo + ow] = s;
            }
        }
    });
}

void conv_transpose2d_grad_input_impl(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H,
                                      int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                                      bool par) {
    const int64_t Ho = conv_transpose_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_transpose_out_side(W, kw, stride, pad);
    drive(B * Cin, par, [&](int64_t idx) {
        const int64_t b = idx / Cin, ci = idx % Cin;
        double* gxp = gx + ((b * Cin + ci) * H) * W;
        for (int64_t ih = 0; ih < H; ++ih) {
            for (int64_t iw = 0; iw < W; ++iw) {
                double s = 0.0;
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* gyp = gy + ((b * Cout + co) * Ho) * Wo;
                    const double* wp = w + ((ci * Cout + co) * kh) * kw;
                    for (int64_t u = 0; u < kh; ++u) {
                        const int64_t oh = ih * stride - pad + u;
                        if (oh < 0 || oh >= Ho) continue;
                        for (int64_t v = 0; v < kw; ++v) {
                            const int64_t ow = iw * stride - pad + v;
                            if (ow < 0 || ow >= Wo) continue;
                            s += gyp[oh * Wo + ow] * wp[u * kw + v];
                        }
                    }
                }
                gxp[ih * W + iw] = s;
            }
        }
    });
}

void conv_transpose2d_grad_weight_impl(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H,
                                       int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                                       bool par) {
    const int64_t Ho = conv_transpose_out_side(H, kh, stride, pad);
    const int64_t Wo = conv_transpose_out_side(W, kw, stride, pad);
    drive(Cin * Cout, par, [&](int64_t idx) {
        const int64_t ci = idx / Cout, co = idx % Cout;
        double* gwp = gw + ((ci * Cout + co) * kh) * kw;
        for (int64_t u = 0; u < kh; ++u)
            for (int64_t v = 0; v < kw; ++v) {
                double s = 0.0;
                for (int64_t b = 0; b < B; ++b) {
                    const double* xp = x + ((b * Cin + ci) * H) * W;
                    const double* gyp = gy + ((b * Cout + co) * Ho) * Wo;
                    for (int64_t ih = 0; ih < H; ++ih) {
                        const int64_t oh = ih * stride - pad + u;
                        if (oh < 0 || oh >= Ho) continue;
                        for (int64_t iw = 0; iw < W; ++iw) {
                            const int64_t ow = iw * stride - pad + v;
                            if (ow < 0 || ow >= Wo) continue;
                            s += xp[ih * W + iw] * gyp[oh * Wo + ow];
                        }
                    }
                }
                gwp[u * kw + v] = s;
            }
    });
}

inline void softmax_row(const double* x, double* y, int64_t n, int64_t i) {
    const double* xi = x + i * n;
    double* yi = y + i * n;
    double m = xi[0];
    for (int64_t j = 1; j < n; ++j) m = xi[j] > m ? xi[j] : m;
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        yi[j] = std::exp(xi[j] - m);
        s += yi[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < n; ++j) yi[j] *= inv;
}

void softmax_rows_impl(const double* x, double* y, int64_t rows, int64_t n, bool par) {
    drive(rows, par, [&](int64_t i) { softmax_row(x, y, n, i); });
}

}  // namespace

int64_t conv_out_side(int64_t in, int64_t k, int64_t stride, int64_t pad) { return (in + 2 * pad - k) / stride + 1; }
int64_t conv_transpose_out_side(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in - 1) * stride - 2 * pad + k;
}

void matmul(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_impl(a, b, c, M, K, N, accumulate, true);
}
void matmul_nt(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_nt_impl(a, b, c, M, K, N, accumulate, true);
}
void matmul_tn(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_tn_impl(a, b, c, M, K, N, accumulate, true);
}
void bmm(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_impl(a, b, c, B, n, k, m, accumulate, true);
}
void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_nt_impl(a, b, c, B, n, k, m, accumulate, true);
}
void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_tn_impl(a, b, c, B, n, k, m, accumulate, true);
}
void conv2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t Cout,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_impl(x, w, y, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, true);
}
void conv2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H, int64_t W,
                       int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_grad_input_impl(gy, w, gx, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, true);
}
void conv2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H, int64_t W,
                        int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_grad_weight_impl(x, gy, gw, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, true);
}
void conv_transpose2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W,
                      int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_impl(x, w, y, B, Cin, H, W, Cout, kh, kw, stride, pad, true);
}
void conv_transpose2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H,
                                 int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_grad_input_impl(gy, w, gx, B, Cin, H, W, Cout, kh, kw, stride, pad, true);
}
void conv_transpose2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H,
                                  int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_grad_weight_impl(x, gy, gw, B, Cin, H, W, Cout, kh, kw, stride, pad, true);
}
void softmax_rows(const double* x, double* y, int64_t rows, int64_t n) { softmax_rows_impl(x, y, rows, n, true); }

namespace ref {
void matmul(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_impl(a, b, c, M, K, N, accumulate, false);
}
void matmul_nt(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_nt_impl(a, b, c, M, K, N, accumulate, false);
}
void matmul_tn(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate) {
    matmul_tn_impl(a, b, c, M, K, N, accumulate, false);
}
void bmm(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_impl(a, b, c, B, n, k, m, accumulate, false);
}
void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_nt_impl(a, b, c, B, n, k, m, accumulate, false);
}
void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate) {
    bmm_tn_impl(a, b, c, B, n, k, m, accumulate, false);
}
void conv2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t Cout,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_impl(x, w, y, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, false);
}
void conv2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H, int64_t W,
                       int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_grad_input_impl(gy, w, gx, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, false);
}
void conv2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H, int64_t W,
                        int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups) {
    conv2d_grad_weight_impl(x, gy, gw, B, Cin, H, W, Cout, kh, kw, stride, pad, groups, false);
}
void conv_transpose2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W,
                      int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_impl(x, w, y, B, Cin, H, W, Cout, kh, kw, stride, pad, false);
}
void conv_transpose2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H,
                                 int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_grad_input_impl(gy, w, gx, B, Cin, H, W, Cout, kh, kw, stride, pad, false);
}
void conv_transpose2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H,
                                  int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    conv_transpose2d_grad_weight_impl(x, gy, gw, B, Cin, H, W, Cout, kh, kw, stride, pad, false);
}
void softmax_rows(const double* x, double* y, int64_t rows, int64_t n) { softmax_rows_impl(x, y, rows, n, false); }
}  // namespace ref

}  // namespace stroke::kernels
