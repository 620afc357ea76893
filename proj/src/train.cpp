#include "sketchssl/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchssl {

int TrainConfig::effective_resolution() const {
    if (resolution > 0) return resolution;
    switch (model_kind) {
        case ModelKind::Vae:
        case ModelKind::M2:
        case ModelKind::Ssvae: return 256;
        case ModelKind::Byol:
        case ModelKind::Supervised: return 224;
    }
    return 256;
}

Polarity TrainConfig::effective_polarity() const {
    switch (model_kind) {
        case ModelKind::Vae:
        case ModelKind::M2:
        case ModelKind::Ssvae: return Polarity::BinaryStroke0;
        case ModelKind::Byol:
        case ModelKind::Supervised: return Polarity::Gray0To255;
    }
    return Polarity::BinaryStroke0;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1 || labeled_batch_size < 1)
        throw ConfigError("batch sizes must be >= 1");
    if (optimizer.kind != "adam") throw ConfigError("unsupported optimizer: " + optimizer.kind);
    if (tau < 0.0 || tau >= 1.0 + 1e-12) throw ConfigError("tau must be in [0,1]");
    augmentation.validate();
}

ModelConfig model_config_from_train(const TrainConfig& cfg, int n_classes) {
    ModelConfig mc;
    mc.kind = cfg.model_kind;
    mc.backbone = cfg.backbone;
    mc.small_cnn_width = cfg.small_cnn_width;
    mc.alexnet_fc_dim = cfg.alexnet_fc_dim;
    mc.latent_dim = cfg.latent_dim;
    mc.n_classes = n_classes;
    mc.byol_proj_hidden = cfg.byol_proj_hidden;
    mc.byol_proj_dim = cfg.byol_proj_dim;
    mc.tau = cfg.tau;
    mc.resolution = cfg.effective_resolution();
    mc.polarity = cfg.effective_polarity();
    mc.init_seed = cfg.seed * 0x9E3779B97F4A7C15ULL + 1;
    mc.seed = cfg.seed;
    return mc;
}

namespace {

void check_compatibility(ModelKind kind, const DatasetSplit& split) {
    int visible = 0;
    for (const auto& r : split.train)
        if (r.label_visible) ++visible;
    const bool all_visible = visible == static_cast<int>(split.train.size());
    switch (kind) {
        case ModelKind::Vae:
        case ModelKind::Byol:
            return;  // labels ignored
        case ModelKind::M2:
        case ModelKind::Ssvae:
            if (visible == 0)
                throw ConfigError("m2/ssvae need label_fraction > 0 (no visible labels)");
            return;
        case ModelKind::Supervised:
            if (!all_visible)
                throw ConfigError("supervised training needs label_fraction = 1.0 (" +
                                  std::to_string(visible) + "/" +
                                  std::to_string(split.train.size()) + " labeled)");
            return;
    }
}

TensorData raster_batch(const TrainView& view, const std::vector<std::size_t>& idx,
                        int res, Polarity pol) {
    std::vector<RasterSketch> rasters(idx.size());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < static_cast<int>(idx.size()); ++i)
        rasters[static_cast<std::size_t>(i)] =
            rasterize(view.sketch(idx[static_cast<std::size_t>(i)]), res, res, pol);
    return to_input_tensor(rasters);
}

double finite_or_throw(double loss, int epoch, int step) {
    if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step) + " (" +
                            std::to_string(loss) + ")");
    return loss;
}

struct MetricsWriter {
    std::ofstream out;
    explicit MetricsWriter(const std::string& dir) {
        if (dir.empty()) return;
        fs::create_directories(dir);
        out.open(fs::path(dir) / "metrics.jsonl");
        if (!out) throw IoError("cannot write metrics log in " + dir);
    }
    void write(const StepRecord& r) {
        if (!out.is_open()) return;
        json j;
        j["epoch"] = r.epoch;
        j["step"] = r.step;
        j["loss"] = r.loss;
        json comp = json::object();
        for (const auto& [k, v] : r.components) comp[k] = v;
        j["components"] = std::move(comp);
        out << j.dump() << "\n";
    }
};

}  // namespace

// ------------------------------------------------------------------- steps

double byol_step(ByolModel& model, nn::Adam& opt,
                 const std::vector<const StrokeSketch*>& batch,
                 const AugmentationConfig& aug, int resolution, Rng& view_rng) {
    std::vector<RasterSketch> va(batch.size()), vb(batch.size());
    std::vector<Rng> rngs;
    rngs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        rngs.push_back(view_rng.split(i));
    view_rng.next_u64();  // advance the parent stream once per batch
#pragma omp parallel for schedule(static)
    for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
        auto [a, b] = make_view_pair(*batch[static_cast<std::size_t>(i)], aug, resolution,
                                     resolution, rngs[static_cast<std::size_t>(i)]);
        va[static_cast<std::size_t>(i)] = std::move(a);
        vb[static_cast<std::size_t>(i)] = std::move(b);
    }
    Var xa = Var::constant(to_input_tensor(va));
    Var xb = Var::constant(to_input_tensor(vb));
    auto vecs = model.forward(xa, xb, /*training=*/true);
    Var loss = losses::byol_loss(vecs.pred_a, vecs.targ_b, vecs.pred_b, vecs.targ_a);
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
    model.ema_update();
    return loss.val().v[0];
}

SemiStepOut semi_batch_step(SketchModel& model, nn::Adam& opt,
                            const TensorData& labeled_images,
                            const std::vector<int>& labels,
                            const TensorData& unlabeled_images,
                            const losses::LossWeights& w, Rng& rng) {
    SemiStepOut out;
    const bool has_labeled = labeled_images.numel() > 0;
    const bool has_unlabeled = unlabeled_images.numel() > 0;
    if (!has_labeled && !has_unlabeled)
        throw ConfigError("semi_batch_step: both batches empty");

    Var total;
    auto add_to_total = [&](const Var& v) {
        total = total.defined() ? ad::add(total, v) : v;
    };

    if (auto* m2 = dynamic_cast<M2Model*>(&model)) {
        const int c = m2->cfg.n_classes;
        if (has_labeled) {
            Var x = Var::constant(labeled_images);
            auto lp = m2->encode(x, true);
            Var probs = m2->classify(x, true);
            Var z = reparameterize(lp, draw_standard_normal(lp.mu.shape(), rng));
            Var recon = m2->decode(z, Var::constant(one_hot(labels, c)), true);
            Var gen = losses::vae_loss(recon, labeled_images, lp.mu, lp.logvar, w);
            Var lab_loss = losses::m2_labeled_loss(gen, labels, probs, w);
            out.components.emplace_back("labeled", lab_loss.val().v[0]);
            add_to_total(lab_loss);
        }
        if (has_unlabeled) {
            const int n = unlabeled_images.dim(0);
            Var x = Var::constant(unlabeled_images);
            auto lp = m2->encode(x, true);
            Var probs = m2->classify(x, true);
            Var z = reparameterize(lp, draw_standard_normal(lp.mu.shape(), rng));
            Var kld_part = ad::kld_rows(lp.mu, lp.logvar);  // class-independent
            // exact marginalization: decode once per class
            std::vector<Var> per_class;
            per_class.reserve(static_cast<std::size_t>(c));
            for (int cls = 0; cls < c; ++cls) {
                std::vector<int> ycol(static_cast<std::size_t>(n), cls);
                Var recon = m2->decode(z, Var::constant(one_hot(ycol, c)), true);
                Var bce = ad::bce_rows(recon, unlabeled_images);
                per_class.push_back(ad::add(bce, ad::scale(kld_part, w.beta)));
            }
            // stack columns [n, c]
            Var gen_matrix;
            for (int cls = 0; cls < c; ++cls) {
                Var col = ad::reshape(per_class[static_cast<std::size_t>(cls)], {n, 1});
                gen_matrix = cls == 0 ? col : ad::concat_cols(gen_matrix, col);
            }
            Var unl_loss = losses::m2_unlabeled_loss(gen_matrix, probs, w);
            out.components.emplace_back("unlabeled", unl_loss.val().v[0]);
            add_to_total(unl_loss);
        }
    } else if (auto* ssvae = dynamic_cast<SsvaeModel*>(&model)) {
        if (has_labeled) {
            Var x = Var::constant(labeled_images);
            auto o = ssvae->forward(x, true, &rng);
            Var lab_loss = losses::ssvae_loss(o.recon, labeled_images, o.lp.mu,
                                              o.lp.logvar, labels, o.probs, w);
            out.components.emplace_back("labeled", lab_loss.val().v[0]);
            add_to_total(lab_loss);
        }
        if (has_unlabeled) {
            Var x = Var::constant(unlabeled_images);
            auto o = ssvae->forward(x, true, &rng);
            Var unl_loss = losses::ssvae_loss(o.recon, unlabeled_images, o.lp.mu,
                                              o.lp.logvar, {}, o.probs, w);
            out.components.emplace_back("unlabeled", unl_loss.val().v[0]);
            add_to_total(unl_loss);
        }
    } else {
        throw ConfigError("semi_batch_step: model is not M2 or SSVAE");
    }

    opt.zero_grad();
    ad::backward(total);
    opt.step();
    out.total = total.val().v[0];
    return out;
}

// ------------------------------------------------------------------ driver

TrainResult train(const DatasetSplit& split, const TrainConfig& cfg, const RunMeta& meta) {
    cfg.validate();
    check_compatibility(cfg.model_kind, split);
    if (split.train.empty()) throw ConfigError("train: empty training set");

    const int n_known = [&] {
        int mx = -1;
        for (const auto& r : split.train) mx = std::max(mx, r.category_id);
        return mx + 1;
    }();

    ModelConfig mc = model_config_from_train(cfg, n_known);
    mc.config_hash = meta.config_hash;
    mc.manifest_hash = meta.manifest_hash;
    auto model = make_model(mc);
    if (!cfg.pretrained_path.empty()) {
        const int copied = load_pretrained_into(*model, cfg.pretrained_path);
        std::cerr << "[train] loaded " << copied << " pretrained tensors from "
                  << cfg.pretrained_path << "\n";
    }

    nn::AdamConfig ac;
    ac.lr = cfg.optimizer.lr;
    ac.weight_decay = cfg.optimizer.weight_decay;
    nn::Adam opt(model->store.trainable(), ac);

    TrainView view(split);
    const int res = cfg.effective_resolution();
    const Polarity pol = cfg.effective_polarity();

    // labeled/unlabeled index pools
    std::vector<std::size_t> all_idx(view.size());
    for (std::size_t i = 0; i < view.size(); ++i) all_idx[i] = i;
    std::vector<std::size_t> labeled_idx, unlabeled_idx;
    for (std::size_t i = 0; i < view.size(); ++i)
        (view.has_label(i) ? labeled_idx : unlabeled_idx).push_back(i);

    losses::LossWeights w = cfg.loss_weights;
    w.n_train = cfg.n_train_mode == "full"
                    ? static_cast<std::int64_t>(view.size())
                    : std::max<std::int64_t>(1, static_cast<std::int64_t>(labeled_idx.size()));

    MetricsWriter metrics(meta.out_dir);
    TrainResult result;
    Rng order_rng(cfg.seed ^ 0x0DDE55AA12345678ULL);
    Rng sample_rng(cfg.seed ^ 0x5EEDull);
    Rng view_rng_root(cfg.seed ^ 0xA06A06ull);

    double best_epoch_loss = std::numeric_limits<double>::infinity();
    const std::string final_path =
        meta.out_dir.empty() ? "" : (fs::path(meta.out_dir) / "checkpoint_final.ckpt").string();
    const std::string best_path =
        meta.out_dir.empty() ? "" : (fs::path(meta.out_dir) / "checkpoint_best.ckpt").string();

    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_sum = 0.0;
        int epoch_steps = 0;

        auto log_step = [&](double loss,
                            std::vector<std::pair<std::string, double>> comps) {
            StepRecord rec{epoch, epoch_steps, loss, std::move(comps)};
            metrics.write(rec);
            if (meta.keep_step_records) result.steps.push_back(rec);
            epoch_sum += loss;
            ++epoch_steps;
            ++global_step;
        };

        switch (cfg.model_kind) {
            case ModelKind::Vae: {
                auto* vae = static_cast<VaeModel*>(model.get());
                std::vector<std::size_t> order = all_idx;
                order_rng.shuffle(order);
                for (std::size_t start = 0; start < order.size();
                     start += static_cast<std::size_t>(cfg.batch_size)) {
                    const std::size_t end =
                        std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
                    TensorData images = raster_batch(view, idx, res, pol);
                    Var x = Var::constant(images);
                    auto o = vae->forward(x, true, &sample_rng);
                    Var bce = losses::bce_reconstruction(o.recon, images);
                    Var kl = losses::kld(o.lp.mu, o.lp.logvar);
                    Var loss = ad::add(bce, ad::scale(kl, w.beta));
                    opt.zero_grad();
                    ad::backward(loss);
                    opt.step();
                    const double lv = finite_or_throw(loss.val().v[0], epoch, epoch_steps);
                    log_step(lv, {{"bce", bce.val().v[0]}, {"kld", kl.val().v[0]}});
                }
                break;
            }
            case ModelKind::Supervised: {
                auto* sup = static_cast<SupervisedModel*>(model.get());
                std::vector<std::size_t> order = all_idx;
                order_rng.shuffle(order);
                for (std::size_t start = 0; start < order.size();
                     start += static_cast<std::size_t>(cfg.batch_size)) {
                    const std::size_t end =
                        std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
                    TensorData images = raster_batch(view, idx, res, pol);
                    std::vector<int> labels;
                    labels.reserve(idx.size());
                    for (std::size_t i : idx) labels.push_back(view.visible_label(i));
                    auto o = sup->forward(Var::constant(images), true);
                    Var probs = ad::softmax_rows(o.logits);
                    Var loss = losses::cross_entropy(probs, labels);
                    opt.zero_grad();
                    ad::backward(loss);
                    opt.step();
                    const double lv = finite_or_throw(loss.val().v[0], epoch, epoch_steps);
                    log_step(lv, {{"ce", lv}});
                }
                break;
            }
            case ModelKind::Byol: {
                auto* byol = static_cast<ByolModel*>(model.get());
                std::vector<std::size_t> order = all_idx;
                order_rng.shuffle(order);
                for (std::size_t start = 0; start < order.size();
                     start += static_cast<std::size_t>(cfg.batch_size)) {
                    const std::size_t end =
                        std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                    std::vector<const StrokeSketch*> batch;
                    for (std::size_t i = start; i < end; ++i)
                        batch.push_back(&view.sketch(order[i]));
                    Rng step_rng = view_rng_root.split(global_step);
                    const double lv = finite_or_throw(
                        byol_step(*byol, opt, batch, cfg.augmentation, res, step_rng),
                        epoch, epoch_steps);
                    log_step(lv, {{"byol", lv}});
                }
                break;
            }
            case ModelKind::M2:
            case ModelKind::Ssvae: {
                std::vector<std::size_t> lab_order = labeled_idx;
                std::vector<std::size_t> unl_order = unlabeled_idx;
                order_rng.shuffle(lab_order);
                order_rng.shuffle(unl_order);
                const std::size_t steps =
                    unl_order.empty()
                        ? (lab_order.size() + cfg.labeled_batch_size - 1) /
                              static_cast<std::size_t>(cfg.labeled_batch_size)
                        : (unl_order.size() + cfg.batch_size - 1) /
                              static_cast<std::size_t>(cfg.batch_size);
                std::size_t lab_pos = 0;
                for (std::size_t s = 0; s < steps; ++s) {
                    // labeled batch cycles through the labeled pool
                    std::vector<std::size_t> lidx;
                    std::vector<int> labels;
                    for (int i = 0; i < cfg.labeled_batch_size && !lab_order.empty(); ++i) {
                        if (lab_pos == lab_order.size()) {
                            lab_pos = 0;
                            order_rng.shuffle(lab_order);
                        }
                        lidx.push_back(lab_order[lab_pos++]);
                    }
                    TensorData limg =
                        lidx.empty() ? TensorData() : raster_batch(view, lidx, res, pol);
                    for (std::size_t i : lidx) labels.push_back(view.visible_label(i));

                    std::vector<std::size_t> uidx;
                    if (!unl_order.empty()) {
                        const std::size_t ustart = s * static_cast<std::size_t>(cfg.batch_size);
                        const std::size_t uend =
                            std::min(unl_order.size(), ustart + static_cast<std::size_t>(cfg.batch_size));
                        uidx.assign(unl_order.begin() + static_cast<std::ptrdiff_t>(ustart),
                                    unl_order.begin() + static_cast<std::ptrdiff_t>(uend));
                    }
                    TensorData uimg =
                        uidx.empty() ? TensorData() : raster_batch(view, uidx, res, pol);

                    auto so = semi_batch_step(*model, opt, limg, labels, uimg, w, sample_rng);
                    const double lv = finite_or_throw(so.total, epoch, epoch_steps);
                    log_step(lv, std::move(so.components));
                }
                break;
            }
        }

        const double epoch_mean = epoch_steps > 0 ? epoch_sum / epoch_steps : 0.0;
        result.epoch_mean_loss.push_back(epoch_mean);
        std::cerr << "[train] epoch " << epoch << " mean loss " << epoch_mean << "\n";
        if (!best_path.empty() && epoch_mean < best_epoch_loss) {
            best_epoch_loss = epoch_mean;
            save_checkpoint(*model, best_path);
        }
    }

    if (!final_path.empty()) save_checkpoint(*model, final_path);
    result.final_checkpoint = final_path;
    result.best_checkpoint = best_path;
    result.hidden_label_reads = view.hidden_label_reads();
    return result;
}

}  // namespace sketchssl
