#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sketchssl/data.hpp"
#include "sketchssl/nn.hpp"

namespace sketchssl {

using ad::Var;
using nn::ParamStore;

enum class BackboneKind { ResNet50, AlexNet, SmallCnn };
enum class ModelKind { Vae, M2, Ssvae, Byol, Supervised };

std::string backbone_name(BackboneKind k);
BackboneKind backbone_from_name(const std::string& s);
std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& s);

// Posterior mean and log-variance of the variational encoder.
struct LatentPair {
    Var mu;
    Var logvar;
};

// z = mu + exp(0.5 * logvar) * eps
Var reparameterize(const LatentPair& lp, const TensorData& eps);
TensorData draw_standard_normal(const std::vector<int>& shape, Rng& rng);

// ----------------------------------------------------------------- backbone

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual Var features(const Var& images, bool training) = 0;  // [n, feat_dim]
    virtual int feat_dim() const = 0;
    // channel width and stride of each downsampling stage, encoder order;
    // the reconstruction decoder mirrors these
    virtual const std::vector<int>& stage_widths() const = 0;
    virtual const std::vector<int>& stage_strides() const = 0;
};

struct BackboneOptions {
    BackboneKind kind = BackboneKind::SmallCnn;
    int in_channels = 1;
    int small_cnn_width = 32;   // final feature dim of the toy backbone
    int alexnet_fc_dim = 4096;  // trunk FC width
};

std::unique_ptr<Backbone> make_backbone(ParamStore& store, const std::string& prefix,
                                        const BackboneOptions& opt, Rng& rng,
                                        bool trainable = true);

// Transposed-convolution decoder mirroring the encoder's stage widths, one
// upsampling block per encoder downsampling stage, sigmoid output.
class ConvDecoder {
public:
    ConvDecoder(ParamStore& store, const std::string& prefix, int input_dim,
                std::vector<int> stage_widths, std::vector<int> stage_strides,
                int out_res, int out_channels, Rng& rng);
    Var forward(const Var& z, bool training) const;
    int bottom_res() const { return bottom_res_; }

private:
    nn::Linear fc_;
    std::vector<nn::ConvTranspose2d> ups_;
    std::vector<nn::BatchNorm> bns_;
    nn::BatchNorm fc_bn_;
    std::vector<int> widths_;
    int bottom_res_ = 0;
    int out_channels_ = 1;
};

// ------------------------------------------------------------------- models

struct ModelConfig {
    ModelKind kind = ModelKind::Vae;
    BackboneKind backbone = BackboneKind::ResNet50;
    int in_channels = 1;
    int small_cnn_width = 32;
    int alexnet_fc_dim = 4096;
    int latent_dim = 32;
    int n_classes = 128;
    int byol_proj_hidden = 4096;
    int byol_proj_dim = 256;
    double tau = 0.996;
    int resolution = 256;
    Polarity polarity = Polarity::BinaryStroke0;
    std::uint64_t init_seed = 0;
    bool pretrained = false;
    std::string config_hash;    // experiment config fingerprint
    std::string manifest_hash;  // split manifest fingerprint
    std::uint64_t seed = 0;     // training seed, recorded in checkpoints

    BackboneOptions backbone_options() const {
        return {backbone, in_channels, small_cnn_width, alexnet_fc_dim};
    }
};

class SketchModel {
public:
    explicit SketchModel(ModelConfig cfg) : cfg(std::move(cfg)) {}
    virtual ~SketchModel() = default;

    // Eval-mode retrieval embedding; caller wraps in NoGradGuard.
    virtual Var embed(const Var& images) = 0;
    virtual int embed_dim() const = 0;

    ModelConfig cfg;
    ParamStore store;
};

class VaeModel : public SketchModel {
public:
    explicit VaeModel(const ModelConfig& cfg);

    LatentPair encode(const Var& images, bool training);
    Var decode(const Var& z, bool training);
    // training: z sampled via reparameterization (rng required); eval: z = mu
    struct Output {
        LatentPair lp;
        Var z;
        Var recon;
    };
    Output forward(const Var& images, bool training, Rng* rng);

    Var embed(const Var& images) override;  // mu
    int embed_dim() const override { return cfg.latent_dim; }

private:
    std::unique_ptr<Backbone> enc_;
    nn::Linear fc_mu_, fc_logvar_;
    std::unique_ptr<ConvDecoder> dec_;
};

class M2Model : public SketchModel {
public:
    explicit M2Model(const ModelConfig& cfg);

    LatentPair encode(const Var& images, bool training);
    Var classify(const Var& images, bool training);              // softmax probs
    Var decode(const Var& z, const Var& class_vec, bool training);  // concat(z, y)

    struct Output {
        LatentPair lp;
        Var probs;
        Var recon;  // conditioned on the class vector passed in
    };
    Output forward(const Var& images, const Var& class_vec, bool training, Rng* rng);

    Var embed(const Var& images) override;  // [mu | probs], dim latent+classes
    int embed_dim() const override { return cfg.latent_dim + cfg.n_classes; }

private:
    std::unique_ptr<Backbone> enc_;
    std::unique_ptr<Backbone> cls_backbone_;
    nn::Linear fc_mu_, fc_logvar_, fc_cls_;
    std::unique_ptr<ConvDecoder> dec_;
};

class SsvaeModel : public SketchModel {
public:
    explicit SsvaeModel(const ModelConfig& cfg);

    struct Output {
        LatentPair lp;
        Var probs;
        Var recon;
    };
    Output forward(const Var& images, bool training, Rng* rng);

    Var embed(const Var& images) override;  // mu only
    int embed_dim() const override { return cfg.latent_dim; }

private:
    std::unique_ptr<Backbone> enc_;
    nn::Linear fc_mu_, fc_logvar_, fc_cls_;  // classifier: single FC + softmax
    std::unique_ptr<ConvDecoder> dec_;
};

// Projector/predictor head: fully-connected -> batch norm -> ReLU -> fully-connected.
struct MlpHead {
    nn::Linear fc1, fc2;
    nn::BatchNorm bn;
    MlpHead() = default;
    MlpHead(ParamStore& store, const std::string& prefix, int in_dim, int hidden,
            int out_dim, Rng& rng, bool trainable);
    Var forward(const Var& x, bool training) const;
};

class ByolModel : public SketchModel {
public:
    explicit ByolModel(const ModelConfig& cfg);

    struct Vectors {
        Var pred_a, targ_b, pred_b, targ_a;  // targets carry no gradient
    };
    // online path tracks gradients; target path runs under NoGrad
    Vectors forward(const Var& view_a, const Var& view_b, bool training);

    // target <- tau * target + (1 - tau) * online, elementwise
    void ema_update();
    double tau() const { return cfg.tau; }

    Var embed(const Var& images) override;  // online encoder features
    int embed_dim() const override;

    const std::vector<std::pair<Var, Var>>& ema_pairs() const { return ema_pairs_; }

private:
    std::unique_ptr<Backbone> online_enc_, target_enc_;
    MlpHead online_proj_, online_pred_, target_proj_;
    std::vector<std::pair<Var, Var>> ema_pairs_;  // (online, target)
};

class SupervisedModel : public SketchModel {
public:
    explicit SupervisedModel(const ModelConfig& cfg);

    struct Output {
        Var logits;
        Var features;  // penultimate pooled features
    };
    Output forward(const Var& images, bool training);

    Var embed(const Var& images) override;
    int embed_dim() const override;

private:
    std::unique_ptr<Backbone> backbone_;
    nn::Linear fc_;
};

std::unique_ptr<SketchModel> make_model(const ModelConfig& cfg);

// --------------------------------------------------------------- batches

// Stack rasters into an input tensor [n, 1, h, w]; gray rasters are scaled
// to [0,1], binary rasters pass through as {0,1}.
TensorData to_input_tensor(std::span<const RasterSketch> batch);

// One-hot matrix [n, n_classes].
TensorData one_hot(std::span<const int> labels, int n_classes);

// ------------------------------------------------------------- checkpoints

void save_checkpoint(const SketchModel& model, const std::string& path);
std::unique_ptr<SketchModel> load_checkpoint(const std::string& path);

// Copy parameters whose names exist in both stores (used for optional
// externally supplied pretrained backbones).
int load_pretrained_into(SketchModel& model, const std::string& checkpoint_path,
                         const std::string& prefix_filter = "");

}  // namespace sketchssl
