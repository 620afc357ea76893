// Compares the OpenMP kernels against their serial references: checks
// bitwise agreement, then reports throughput and speedup per kernel.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sketchssl/common.hpp"
#include "sketchssl/kernels.hpp"

using namespace sketchssl;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class F>
double time_best_of(F&& fn, int reps = 3) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

void fill_random(std::vector<double>& v, Rng& rng) {
    for (auto& x : v) x = rng.normal();
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double flops, double t_ref, double t_omp, bool match) {
    std::printf("%-28s %9.1f ms serial  %9.1f ms omp  %5.2fx  %7.2f GFLOP/s  %s\n", name,
                t_ref * 1e3, t_omp * 1e3, t_ref / t_omp, flops / t_omp / 1e9,
                match ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif
    Rng rng(42);

    {  // matmul 512^3
        const int n = 512, k = 512, m = 512;
        std::vector<double> A(static_cast<std::size_t>(n) * k), B(static_cast<std::size_t>(k) * m);
        std::vector<double> C1(static_cast<std::size_t>(n) * m), C2(C1.size());
        fill_random(A, rng);
        fill_random(B, rng);
        const double t1 = time_best_of([&] { kernels::ref::matmul_nn(A.data(), B.data(), C1.data(), n, k, m); });
        const double t2 = time_best_of([&] { kernels::matmul_nn(A.data(), B.data(), C2.data(), n, k, m); });
        report("matmul_nn 512x512x512", 2.0 * n * k * m, t1, t2, bitwise_equal(C1, C2));
    }
    {  // im2col + conv-style matmul, 64ch 64x64 3x3
        const int c = 64, h = 64, w = 64, kk = 3, stride = 1, pad = 1, oc = 64;
        const int oh = kernels::conv_out_dim(h, kk, stride, pad);
        const int ow = kernels::conv_out_dim(w, kk, stride, pad);
        std::vector<double> img(static_cast<std::size_t>(c) * h * w);
        std::vector<double> col1(static_cast<std::size_t>(c) * kk * kk * oh * ow), col2(col1.size());
        std::vector<double> W(static_cast<std::size_t>(oc) * c * kk * kk);
        std::vector<double> out1(static_cast<std::size_t>(oc) * oh * ow), out2(out1.size());
        fill_random(img, rng);
        fill_random(W, rng);
        const double flops = 2.0 * oc * c * kk * kk * oh * ow;
        const double t1 = time_best_of([&] {
            kernels::ref::im2col(img.data(), c, h, w, kk, kk, stride, pad, col1.data());
            kernels::ref::matmul_nn(W.data(), col1.data(), out1.data(), oc, c * kk * kk, oh * ow);
        });
        const double t2 = time_best_of([&] {
            kernels::im2col(img.data(), c, h, w, kk, kk, stride, pad, col2.data());
            kernels::matmul_nn(W.data(), col2.data(), out2.data(), oc, c * kk * kk, oh * ow);
        });
        report("conv im2col 64ch 64x64 3x3", flops, t1, t2,
               bitwise_equal(col1, col2) && bitwise_equal(out1, out2));
    }
    {  // pairwise distances 4096 x 4096 x 64
        const int n = 4096, d = 64;
        std::vector<float> X(static_cast<std::size_t>(n) * d);
        for (auto& x : X) x = static_cast<float>(rng.normal());
        std::vector<double> D1(static_cast<std::size_t>(n) * n), D2(D1.size());
        const double t1 = time_best_of(
            [&] { kernels::ref::pairwise_sqdist(X.data(), n, X.data(), n, d, D1.data()); });
        const double t2 = time_best_of(
            [&] { kernels::pairwise_sqdist(X.data(), n, X.data(), n, d, D2.data()); });
        report("pairwise_sqdist 4096x4096", 3.0 * n * n * d, t1, t2, bitwise_equal(D1, D2));
    }
    {  // col2im 64ch
        const int c = 64, h = 64, w = 64, kk = 3, stride = 1, pad = 1;
        const int oh = kernels::conv_out_dim(h, kk, stride, pad);
        const int ow = kernels::conv_out_dim(w, kk, stride, pad);
        std::vector<double> col(static_cast<std::size_t>(c) * kk * kk * oh * ow);
        std::vector<double> img1(static_cast<std::size_t>(c) * h * w, 0.0), img2(img1.size(), 0.0);
        fill_random(col, rng);
        const double t1 = time_best_of([&] {
            std::fill(img1.begin(), img1.end(), 0.0);
            kernels::ref::col2im(col.data(), c, h, w, kk, kk, stride, pad, img1.data());
        });
        const double t2 = time_best_of([&] {
            std::fill(img2.begin(), img2.end(), 0.0);
            kernels::col2im(col.data(), c, h, w, kk, kk, stride, pad, img2.data());
        });
        report("col2im 64ch 64x64 3x3", 1.0 * c * kk * kk * oh * ow, t1, t2,
               bitwise_equal(img1, img2));
    }
    return 0;
}
