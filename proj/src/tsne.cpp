#include <algorithm>
#include <cmath>
#include <vector>

#include "sketchssl/common.hpp"
#include "sketchssl/eval.hpp"
#include "sketchssl/kernels.hpp"

// Exact (O(n^2)) t-SNE with the reference settings: perplexity binary
// search, symmetrized affinities, early exaggeration x12 for 250 iterations,
// momentum 0.5 -> 0.8, adaptive gains, learning rate 200.

namespace sketchssl {

namespace {

// Gaussian row affinities at the precision that hits the target perplexity.
void row_affinities(const double* dists, int n, int self, double perplexity,
                    double* p_row) {
    const double log_perp = std::log(perplexity);
    double beta = 1.0, beta_min = -1e300, beta_max = 1e300;
    for (int iter = 0; iter < 64; ++iter) {
        double sum = 0.0, sum_dp = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == self) {
                p_row[j] = 0.0;
                continue;
            }
            const double p = std::exp(-beta * dists[j]);
            p_row[j] = p;
            sum += p;
            sum_dp += beta * dists[j] * p;
        }
        if (sum <= 0.0) sum = 1e-300;
        const double entropy = std::log(sum) + sum_dp / sum;
        const double diff = entropy - log_perp;
        if (std::abs(diff) < 1e-5) break;
        if (diff > 0) {
            beta_min = beta;
            beta = beta_max > 1e299 ? beta * 2.0 : (beta + beta_max) / 2.0;
        } else {
            beta_max = beta;
            beta = beta_min < -1e299 ? beta / 2.0 : (beta + beta_min) / 2.0;
        }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += p_row[j];
    if (sum <= 0.0) sum = 1e-300;
    for (int j = 0; j < n; ++j) p_row[j] /= sum;
}

}  // namespace

std::vector<double> tsne_embed(const std::vector<double>& X, int n, int d,
                               double perplexity, int iterations, std::uint64_t seed) {
    if (n < 4) throw ConfigError("tsne: need at least 4 points");
    if (perplexity >= (n - 1) / 3.0 + 1.0)
        perplexity = std::max(2.0, (n - 1) / 3.0);

    std::vector<double> dists(static_cast<std::size_t>(n) * n);
    kernels::pairwise_sqdist_d(X.data(), n, X.data(), n, d, dists.data());

    std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        row_affinities(dists.data() + static_cast<std::size_t>(i) * n, n, i, perplexity,
                       P.data() + static_cast<std::size_t>(i) * n);
    // symmetrize and normalize to sum 1
    double psum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const std::size_t ij = static_cast<std::size_t>(i) * n + j;
            const std::size_t ji = static_cast<std::size_t>(j) * n + i;
            const double p = (P[ij] + P[ji]);
            P[ij] = p;
            P[ji] = p;
            psum += 2.0 * p;
        }
    if (psum <= 0) psum = 1e-300;
    for (auto& p : P) p = std::max(p / psum, 1e-12);

    Rng rng(seed ^ 0x7473656eULL);
    std::vector<double> Y(static_cast<std::size_t>(n) * 2);
    for (auto& y : Y) y = rng.normal() * 1e-4;

    std::vector<double> dY(Y.size(), 0.0), inc(Y.size(), 0.0), gains(Y.size(), 1.0);
    std::vector<double> Q(static_cast<std::size_t>(n) * n);
    std::vector<double> qrow(static_cast<std::size_t>(n));
    const int exaggeration_end = std::min(250, iterations / 2);
    const double lr = 200.0;

    for (int iter = 0; iter < iterations; ++iter) {
        const double exaggeration = iter < exaggeration_end ? 12.0 : 1.0;
        // student-t affinities in the embedding; per-row partial sums keep
        // the total independent of the thread count
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            const double yi0 = Y[static_cast<std::size_t>(i) * 2];
            const double yi1 = Y[static_cast<std::size_t>(i) * 2 + 1];
            double rs = 0.0;
            for (int j = 0; j < n; ++j) {
                if (i == j) {
                    Q[static_cast<std::size_t>(i) * n + j] = 0.0;
                    continue;
                }
                const double d0 = yi0 - Y[static_cast<std::size_t>(j) * 2];
                const double d1 = yi1 - Y[static_cast<std::size_t>(j) * 2 + 1];
                const double q = 1.0 / (1.0 + d0 * d0 + d1 * d1);
                Q[static_cast<std::size_t>(i) * n + j] = q;
                rs += q;
            }
            qrow[static_cast<std::size_t>(i)] = rs;
        }
        double qsum = 0.0;
        for (int i = 0; i < n; ++i) qsum += qrow[static_cast<std::size_t>(i)];
        if (qsum <= 0) qsum = 1e-300;

#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            double g0 = 0.0, g1 = 0.0;
            const double yi0 = Y[static_cast<std::size_t>(i) * 2];
            const double yi1 = Y[static_cast<std::size_t>(i) * 2 + 1];
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const std::size_t ij = static_cast<std::size_t>(i) * n + j;
                const double qn = std::max(Q[ij] / qsum, 1e-12);
                const double mult = (exaggeration * P[ij] - qn) * Q[ij];
                g0 += mult * (yi0 - Y[static_cast<std::size_t>(j) * 2]);
                g1 += mult * (yi1 - Y[static_cast<std::size_t>(j) * 2 + 1]);
            }
            dY[static_cast<std::size_t>(i) * 2] = 4.0 * g0;
            dY[static_cast<std::size_t>(i) * 2 + 1] = 4.0 * g1;
        }

        const double momentum = iter < 250 ? 0.5 : 0.8;
        for (std::size_t t = 0; t < Y.size(); ++t) {
            gains[t] = (dY[t] > 0) != (inc[t] > 0) ? gains[t] + 0.2
                                                   : std::max(gains[t] * 0.8, 0.01);
            inc[t] = momentum * inc[t] - lr * gains[t] * dY[t];
            Y[t] += inc[t];
        }
        // recenter
        double m0 = 0.0, m1 = 0.0;
        for (int i = 0; i < n; ++i) {
            m0 += Y[static_cast<std::size_t>(i) * 2];
            m1 += Y[static_cast<std::size_t>(i) * 2 + 1];
        }
        m0 /= n;
        m1 /= n;
        for (int i = 0; i < n; ++i) {
            Y[static_cast<std::size_t>(i) * 2] -= m0;
            Y[static_cast<std::size_t>(i) * 2 + 1] -= m1;
        }
    }
    return Y;
}

}  // namespace sketchssl
