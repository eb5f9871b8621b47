#pragma once

#include <cstdint>

namespace stroke::kernels {

// Hot numeric kernels. Every kernel is written as a per-output-element worker
// driven either serially (ref::) or by an OpenMP parallel-for over independent
// output indices. Both drivers run the identical per-element code, so the
// parallel results are bit-identical to the serial reference regardless of
// thread count; tests assert exact equality and tools/bench_kernels compares
// throughput.

// c[M,N] = a[M,K] * b[K,N]   (+= when accumulate)
void matmul(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);
// c[M,N] = a[M,K] * b[N,K]^T
void matmul_nt(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);
// c[K,N] = a[M,K]^T * b[M,N]
void matmul_tn(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);

// Batched over leading dimension B.
void bmm(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);
void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);
void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);

// x[B,Cin,H,W], w[Cout,Cin/groups,kh,kw], y[B,Cout,Ho,Wo]; Ho=(H+2p-kh)/s+1.
void conv2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t Cout,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);
void conv2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H, int64_t W,
                       int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);
void conv2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H, int64_t W,
                        int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);

// Transposed convolution: x[B,Cin,H,W], w[Cin,Cout,kh,kw], y[B,Cout,Ho,Wo];
// Ho=(H-1)*s-2p+kh.
void conv_transpose2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W,
                      int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H,
                                 int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H,
                                  int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);

// Row-wise stable softmax: x,y are [rows,n].
void softmax_rows(const double* x, double* y, int64_t rows, int64_t n);

int64_t conv_out_side(int64_t in, int64_t k, int64_t stride, int64_t pad);
int64_t conv_transpose_out_side(int64_t in, int64_t k, int64_t stride, int64_t pad);

// Serial reference implementations (same per-element workers, serial driver).
namespace ref {
void matmul(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N, bool accumulate = false);
void bmm(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);
void bmm_nt(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);
void bmm_tn(const double* a, const double* b, double* c, int64_t B, int64_t n, int64_t k, int64_t m, bool accumulate = false);
void conv2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W, int64_t Cout,
            int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);
void conv2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H, int64_t W,
                       int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);
void conv2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H, int64_t W,
                        int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t groups);
void conv_transpose2d(const double* x, const double* w, double* y, int64_t B, int64_t Cin, int64_t H, int64_t W,
                      int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_grad_input(const double* gy, const double* w, double* gx, int64_t B, int64_t Cin, int64_t H,
                                 int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void conv_transpose2d_grad_weight(const double* x, const double* gy, double* gw, int64_t B, int64_t Cin, int64_t H,
                                  int64_t W, int64_t Cout, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t n);
}  // namespace ref

}  // namespace stroke::kernels
