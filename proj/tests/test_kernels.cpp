#include <doctest.h>

#include <cstring>

#include "helpers.hpp"
#include "sketchssl/kernels.hpp"

using namespace sketchssl;
using test_helpers::random_tensor;

namespace {
bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul variants match the serial reference bitwise") {
    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(40));
        const int k = 1 + static_cast<int>(rng.uniform_int(40));
        const int m = 1 + static_cast<int>(rng.uniform_int(40));
        auto A = random_tensor({n, k}, rng);
        auto B = random_tensor({k, m}, rng);
        std::vector<double> C1(static_cast<std::size_t>(n) * m), C2(C1.size());
        kernels::ref::matmul_nn(A.v.data(), B.v.data(), C1.data(), n, k, m);
        kernels::matmul_nn(A.v.data(), B.v.data(), C2.data(), n, k, m);
        CHECK(bitwise_equal(C1, C2));

        auto At = random_tensor({k, n}, rng);
        kernels::ref::matmul_tn(At.v.data(), B.v.data(), C1.data(), n, k, m);
        kernels::matmul_tn(At.v.data(), B.v.data(), C2.data(), n, k, m);
        CHECK(bitwise_equal(C1, C2));

        auto Bt = random_tensor({m, k}, rng);
        kernels::ref::matmul_nt(A.v.data(), Bt.v.data(), C1.data(), n, k, m);
        kernels::matmul_nt(A.v.data(), Bt.v.data(), C2.data(), n, k, m);
        CHECK(bitwise_equal(C1, C2));
    }
}

TEST_CASE("matmul accumulate adds into the output") {
    Rng rng(12);
    const int n = 7, k = 5, m = 9;
    auto A = random_tensor({n, k}, rng);
    auto B = random_tensor({k, m}, rng);
    std::vector<double> base(static_cast<std::size_t>(n) * m, 1.5);
    std::vector<double> acc = base, fresh(base.size());
    kernels::matmul_nn(A.v.data(), B.v.data(), fresh.data(), n, k, m);
    kernels::matmul_nn(A.v.data(), B.v.data(), acc.data(), n, k, m, /*accumulate=*/true);
    for (std::size_t i = 0; i < acc.size(); ++i)
        CHECK(acc[i] == doctest::Approx(base[i] + fresh[i]).epsilon(1e-12));
}

TEST_CASE("matmul against a tiny hand example") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<double> A{1, 2, 3, 4}, B{5, 6, 7, 8}, C(4);
    kernels::matmul_nn(A.data(), B.data(), C.data(), 2, 2, 2);
    CHECK(C == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("im2col/col2im match serial and are adjoint") {
    Rng rng(13);
    const int c = 3, h = 11, w = 9, k = 3, stride = 2, pad = 1;
    const int oh = kernels::conv_out_dim(h, k, stride, pad);
    const int ow = kernels::conv_out_dim(w, k, stride, pad);
    auto img = random_tensor({c, h, w}, rng);
    std::vector<double> col1(static_cast<std::size_t>(c) * k * k * oh * ow), col2(col1.size());
    kernels::ref::im2col(img.v.data(), c, h, w, k, k, stride, pad, col1.data());
    kernels::im2col(img.v.data(), c, h, w, k, k, stride, pad, col2.data());
    CHECK(bitwise_equal(col1, col2));

    auto colr = random_tensor({c * k * k, oh * ow}, rng);
    std::vector<double> img1(static_cast<std::size_t>(c) * h * w, 0.0), img2(img1.size(), 0.0);
    kernels::ref::col2im(colr.v.data(), c, h, w, k, k, stride, pad, img1.data());
    kernels::col2im(colr.v.data(), c, h, w, k, k, stride, pad, img2.data());
    CHECK(bitwise_equal(img1, img2));

    // adjointness: <col(img), colr> == <img, col2im(colr)>
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < col1.size(); ++i) lhs += col1[i] * colr.v[i];
    for (std::size_t i = 0; i < img1.size(); ++i) rhs += img1[i] * img.v[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("pairwise_sqdist matches serial bitwise and hand values") {
    Rng rng(14);
    const int n = 17, m = 13, d = 6;
    std::vector<float> X(static_cast<std::size_t>(n) * d), Y(static_cast<std::size_t>(m) * d);
    for (auto& x : X) x = static_cast<float>(rng.normal());
    for (auto& y : Y) y = static_cast<float>(rng.normal());
    std::vector<double> D1(static_cast<std::size_t>(n) * m), D2(D1.size());
    kernels::ref::pairwise_sqdist(X.data(), n, Y.data(), m, d, D1.data());
    kernels::pairwise_sqdist(X.data(), n, Y.data(), m, d, D2.data());
    CHECK(bitwise_equal(D1, D2));

    std::vector<float> a{0, 0}, b{3, 4};
    double out;
    kernels::pairwise_sqdist(a.data(), 1, b.data(), 1, 2, &out);
    CHECK(out == doctest::Approx(25.0));
}

TEST_CASE("conv_out_dim") {
    CHECK(kernels::conv_out_dim(256, 7, 2, 3) == 128);
    CHECK(kernels::conv_out_dim(224, 11, 4, 2) == 55);
    CHECK(kernels::conv_out_dim(64, 3, 2, 1) == 32);
}

}  // TEST_SUITE
