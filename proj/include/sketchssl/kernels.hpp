#pragma once

#include <cstddef>

// Dense compute kernels used by the autodiff layers, retrieval evaluation
// and t-SNE. Each kernel exists twice: the OpenMP-parallel default in
// kernels:: and a serial reference in kernels::ref::. Both variants use the
// same per-output-element summation order, so their results are bitwise
// identical; tests assert this and tools/bench compares their throughput.
//
// Parallel loops always split over independent output elements (rows of C,
// samples of a batch, query points), never over a shared accumulator, which
// keeps results independent of the thread count.

namespace sketchssl::kernels {

// C[n,m] = A[n,k] * B[k,m]            (accumulate: C += ...)
void matmul_nn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);

// C[n,m] = A^T * B with A[k,n], B[k,m]
void matmul_tn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);

// C[n,m] = A * B^T with A[n,k], B[m,k]
void matmul_nt(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);

// Unfold one CHW image into a [C*kh*kw, oh*ow] patch matrix (zero padding).
void im2col(const double* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* col);

// Fold a patch matrix back into a CHW image, accumulating overlaps.
// The output buffer must be zeroed (or hold a partial sum) by the caller.
void col2im(const double* col, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* img);

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// out[i,j] = squared euclidean distance between X row i and Y row j.
void pairwise_sqdist(const float* X, int n, const float* Y, int m, int d,
                     double* out);
void pairwise_sqdist_d(const double* X, int n, const double* Y, int m, int d,
                       double* out);

namespace ref {

void matmul_nn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate = false);
void im2col(const double* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* col);
void col2im(const double* col, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* img);
void pairwise_sqdist(const float* X, int n, const float* Y, int m, int d,
                     double* out);
void pairwise_sqdist_d(const double* X, int n, const double* Y, int m, int d,
                       double* out);

}  // namespace ref

}  // namespace sketchssl::kernels
