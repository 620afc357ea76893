#pragma once

#include <span>

#include "sketchssl/autodiff.hpp"
#include "sketchssl/tensor.hpp"

namespace sketchssl::losses {

using ad::Var;

struct LossWeights {
    double beta = 0.1;         // KLD weight
    double alpha = 0.1;        // SSVAE classifier weight
    double m2_ce_scale = 0.1;  // coefficient of the N*CE term
    std::int64_t n_train = 1;  // N, bound to the labeled-training-set size
    double m2_entropy_sign = 1.0;  // literal published form; -1 flips H
};

// Pixel-wise binary cross-entropy: SUM over pixels per sample, MEAN over
// batch. Predictions are clamped to [1e-7, 1 - 1e-7].
Var bce_reconstruction(const Var& pred, const TensorData& target);

// -0.5 * sum_d(1 + logvar - mu^2 - exp(logvar)), mean over batch.
Var kld(const Var& mu, const Var& logvar);

// bce + beta * kld
Var vae_loss(const Var& pred, const TensorData& target, const Var& mu,
             const Var& logvar, const LossWeights& w);

// Per-sample variant (-> [n]) used by the M2 class marginalization.
Var vae_loss_rows(const Var& pred, const TensorData& target, const Var& mu,
                  const Var& logvar, const LossWeights& w);

// -ln probs[y], mean over batch, probs clamped at 1e-7.
Var cross_entropy(const Var& probs, std::span<const int> labels);

// -sum_c p ln p with 0 ln 0 = 0, mean over batch.
Var entropy(const Var& probs);

// Eq-style labeled objective: generative + scale * N * CE.
Var m2_labeled_loss(const Var& generative, std::span<const int> labels,
                    const Var& probs, const LossWeights& w);

// Exact marginalization over the class variable:
//   mean_n( sum_c probs[n,c] * per_class_generative[n,c] + sign * H(probs[n]) )
Var m2_unlabeled_loss(const Var& per_class_generative, const Var& probs,
                      const LossWeights& w);

// Labeled sample: bce + beta*kld + alpha*CE; unlabeled: bce + beta*kld.
Var ssvae_loss(const Var& pred, const TensorData& target, const Var& mu,
               const Var& logvar, std::span<const int> labels_or_empty,
               const Var& probs, const LossWeights& w);

// Symmetrized normalized-L2 regression loss; targets are detached inside,
// so no gradient ever reaches them.
Var byol_loss(const Var& pred_a, const Var& targ_b, const Var& pred_b,
              const Var& targ_a);

}  // namespace sketchssl::losses
