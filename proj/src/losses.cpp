#include "sketchssl/losses.hpp"

#include "sketchssl/common.hpp"

namespace sketchssl::losses {

Var bce_reconstruction(const Var& pred, const TensorData& target) {
    return ad::mean_over_rows(ad::bce_rows(pred, target));
}

Var kld(const Var& mu, const Var& logvar) {
    return ad::mean_over_rows(ad::kld_rows(mu, logvar));
}

Var vae_loss(const Var& pred, const TensorData& target, const Var& mu,
             const Var& logvar, const LossWeights& w) {
    return ad::mean_over_rows(vae_loss_rows(pred, target, mu, logvar, w));
}

Var vae_loss_rows(const Var& pred, const TensorData& target, const Var& mu,
                  const Var& logvar, const LossWeights& w) {
    return ad::add(ad::bce_rows(pred, target), ad::scale(ad::kld_rows(mu, logvar), w.beta));
}

Var cross_entropy(const Var& probs, std::span<const int> labels) {
    return ad::mean_over_rows(ad::ce_rows(probs, labels));
}

Var entropy(const Var& probs) {
    return ad::mean_over_rows(ad::entropy_rows(probs));
}

Var m2_labeled_loss(const Var& generative, std::span<const int> labels,
                    const Var& probs, const LossWeights& w) {
    if (w.n_train < 1) throw ConfigError("m2_labeled_loss: n_train must be >= 1");
    Var ce = cross_entropy(probs, labels);
    return ad::add(generative,
                   ad::scale(ce, w.m2_ce_scale * static_cast<double>(w.n_train)));
}

Var m2_unlabeled_loss(const Var& per_class_generative, const Var& probs,
                      const LossWeights& w) {
    if (!per_class_generative.val().same_shape(probs.val()))
        throw ConfigError("m2_unlabeled_loss: [n,c] shapes differ");
    Var expected = ad::sum_per_row(ad::mul(probs, per_class_generative));
    Var h = ad::entropy_rows(probs);
    return ad::mean_over_rows(ad::add(expected, ad::scale(h, w.m2_entropy_sign)));
}

Var ssvae_loss(const Var& pred, const TensorData& target, const Var& mu,
               const Var& logvar, std::span<const int> labels_or_empty,
               const Var& probs, const LossWeights& w) {
    Var base = vae_loss(pred, target, mu, logvar, w);
    if (labels_or_empty.empty()) return base;
    return ad::add(base, ad::scale(cross_entropy(probs, labels_or_empty), w.alpha));
}

Var byol_loss(const Var& pred_a, const Var& targ_b, const Var& pred_b,
              const Var& targ_a) {
    auto term = [](const Var& pred, const Var& targ) {
        Var p = ad::row_l2_normalize(pred);
        Var t = ad::row_l2_normalize(ad::detach(targ));
        Var diff = ad::sub(p, t);
        return ad::sum_per_row(ad::mul(diff, diff));
    };
    return ad::mean_over_rows(ad::add(term(pred_a, targ_b), term(pred_b, targ_a)));
}

}  // namespace sketchssl::losses
