#include "sketchssl/kernels.hpp"

#include <cstring>

namespace sketchssl::kernels {

// The i-k-j loop order walks B and C rows contiguously. For a fixed output
// element C[i][j] the additions happen in increasing k order in every
// variant below, which is what makes ref:: and the OpenMP version agree
// bitwise.

void matmul_nn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * m;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(m));
        const double* ai = A + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double a = ai[kk];
            if (a == 0.0) continue;
            const double* bk = B + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) ci[j] += a * bk[j];
        }
    }
}

void matmul_tn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
    // A is [k,n]; C[i,j] = sum_kk A[kk,i] * B[kk,j]
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * m;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(m));
        for (int kk = 0; kk < k; ++kk) {
            const double a = A[static_cast<std::size_t>(kk) * n + i];
            if (a == 0.0) continue;
            const double* bk = B + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) ci[j] += a * bk[j];
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
    // B is [m,k]; C[i,j] = dot(A row i, B row j)
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* ai = A + static_cast<std::size_t>(i) * k;
        double* ci = C + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* bj = B + static_cast<std::size_t>(j) * k;
            double acc = accumulate ? ci[j] : 0.0;
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] = acc;
        }
    }
}

void im2col(const double* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* col) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int span = oh * ow;
#pragma omp parallel for schedule(static)
    for (int row = 0; row < c * kh * kw; ++row) {
        const int ci = row / (kh * kw);
        const int ki = (row / kw) % kh;
        const int kj = row % kw;
        const double* src = img + static_cast<std::size_t>(ci) * h * w;
        double* dst = col + static_cast<std::size_t>(row) * span;
        for (int oi = 0; oi < oh; ++oi) {
            const int ii = oi * stride - pad + ki;
            if (ii < 0 || ii >= h) {
                std::memset(dst + static_cast<std::size_t>(oi) * ow, 0,
                            sizeof(double) * static_cast<std::size_t>(ow));
                continue;
            }
            for (int oj = 0; oj < ow; ++oj) {
                const int jj = oj * stride - pad + kj;
                dst[static_cast<std::size_t>(oi) * ow + oj] =
                    (jj >= 0 && jj < w) ? src[static_cast<std::size_t>(ii) * w + jj] : 0.0;
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* img) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int span = oh * ow;
    // Parallel over channels: every output pixel belongs to one channel,
    // so threads never write the same element.
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
        double* dst = img + static_cast<std::size_t>(ci) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const int row = (ci * kh + ki) * kw + kj;
                const double* src = col + static_cast<std::size_t>(row) * span;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        dst[static_cast<std::size_t>(ii) * w + jj] +=
                            src[static_cast<std::size_t>(oi) * ow + oj];
                    }
                }
            }
        }
    }
}

void pairwise_sqdist(const float* X, int n, const float* Y, int m, int d,
                     double* out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const float* xi = X + static_cast<std::size_t>(i) * d;
        double* oi = out + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const float* yj = Y + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = static_cast<double>(xi[t]) - static_cast<double>(yj[t]);
                acc += diff * diff;
            }
            oi[j] = acc;
        }
    }
}

void pairwise_sqdist_d(const double* X, int n, const double* Y, int m, int d,
                       double* out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double* xi = X + static_cast<std::size_t>(i) * d;
        double* oi = out + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* yj = Y + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = xi[t] - yj[t];
                acc += diff * diff;
            }
            oi[j] = acc;
        }
    }
}

// ------------------------------------------------------------ serial refs

namespace ref {

void matmul_nn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
    for (int i = 0; i < n; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * m;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(m));
        const double* ai = A + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double a = ai[kk];
            if (a == 0.0) continue;
            const double* bk = B + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) ci[j] += a * bk[j];
        }
    }
}

void matmul_tn(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
    for (int i = 0; i < n; ++i) {
        double* ci = C + static_cast<std::size_t>(i) * m;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * static_cast<std::size_t>(m));
        for (int kk = 0; kk < k; ++kk) {
            const double a = A[static_cast<std::size_t>(kk) * n + i];
            if (a == 0.0) continue;
            const double* bk = B + static_cast<std::size_t>(kk) * m;
            for (int j = 0; j < m; ++j) ci[j] += a * bk[j];
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C,
               int n, int k, int m, bool accumulate) {
    for (int i = 0; i < n; ++i) {
        const double* ai = A + static_cast<std::size_t>(i) * k;
        double* ci = C + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* bj = B + static_cast<std::size_t>(j) * k;
            double acc = accumulate ? ci[j] : 0.0;
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] = acc;
        }
    }
}

void im2col(const double* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* col) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int span = oh * ow;
    for (int row = 0; row < c * kh * kw; ++row) {
        const int ci = row / (kh * kw);
        const int ki = (row / kw) % kh;
        const int kj = row % kw;
        const double* src = img + static_cast<std::size_t>(ci) * h * w;
        double* dst = col + static_cast<std::size_t>(row) * span;
        for (int oi = 0; oi < oh; ++oi) {
            const int ii = oi * stride - pad + ki;
            if (ii < 0 || ii >= h) {
                std::memset(dst + static_cast<std::size_t>(oi) * ow, 0,
                            sizeof(double) * static_cast<std::size_t>(ow));
                continue;
            }
            for (int oj = 0; oj < ow; ++oj) {
                const int jj = oj * stride - pad + kj;
                dst[static_cast<std::size_t>(oi) * ow + oj] =
                    (jj >= 0 && jj < w) ? src[static_cast<std::size_t>(ii) * w + jj] : 0.0;
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w,
            int kh, int kw, int stride, int pad, double* img) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int span = oh * ow;
    for (int ci = 0; ci < c; ++ci) {
        double* dst = img + static_cast<std::size_t>(ci) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const int row = (ci * kh + ki) * kw + kj;
                const double* src = col + static_cast<std::size_t>(row) * span;
                for (int oi = 0; oi < oh; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj < 0 || jj >= w) continue;
                        dst[static_cast<std::size_t>(ii) * w + jj] +=
                            src[static_cast<std::size_t>(oi) * ow + oj];
                    }
                }
            }
        }
    }
}

void pairwise_sqdist(const float* X, int n, const float* Y, int m, int d,
                     double* out) {
    for (int i = 0; i < n; ++i) {
        const float* xi = X + static_cast<std::size_t>(i) * d;
        double* oi = out + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const float* yj = Y + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = static_cast<double>(xi[t]) - static_cast<double>(yj[t]);
                acc += diff * diff;
            }
            oi[j] = acc;
        }
    }
}

void pairwise_sqdist_d(const double* X, int n, const double* Y, int m, int d,
                       double* out) {
    for (int i = 0; i < n; ++i) {
        const double* xi = X + static_cast<std::size_t>(i) * d;
        double* oi = out + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* yj = Y + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = xi[t] - yj[t];
                acc += diff * diff;
            }
            oi[j] = acc;
        }
    }
}

}  // namespace ref

}  // namespace sketchssl::kernels
