#include "sketchssl/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace sketchssl {

std::string backbone_name(BackboneKind k) {
    switch (k) {
        case BackboneKind::ResNet50: return "resnet50";
        case BackboneKind::AlexNet: return "alexnet";
        case BackboneKind::SmallCnn: return "small_cnn";
    }
    return "?";
}

BackboneKind backbone_from_name(const std::string& s) {
    if (s == "resnet50") return BackboneKind::ResNet50;
    if (s == "alexnet") return BackboneKind::AlexNet;
    if (s == "small_cnn") return BackboneKind::SmallCnn;
    throw ConfigError("unknown backbone: " + s);
}

std::string model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::Vae: return "vae";
        case ModelKind::M2: return "m2";
        case ModelKind::Ssvae: return "ssvae";
        case ModelKind::Byol: return "byol";
        case ModelKind::Supervised: return "supervised";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& s) {
    if (s == "vae") return ModelKind::Vae;
    if (s == "m2") return ModelKind::M2;
    if (s == "ssvae") return ModelKind::Ssvae;
    if (s == "byol") return ModelKind::Byol;
    if (s == "supervised") return ModelKind::Supervised;
    throw ConfigError("unknown model kind: " + s);
}

Var reparameterize(const LatentPair& lp, const TensorData& eps) {
    if (!lp.mu.val().same_shape(eps))
        throw ConfigError("reparameterize: eps shape mismatch");
    Var sigma = ad::exp(ad::scale(lp.logvar, 0.5));
    return ad::add(lp.mu, ad::mul(sigma, Var::constant(eps)));
}

TensorData draw_standard_normal(const std::vector<int>& shape, Rng& rng) {
    TensorData t(shape);
    for (auto& x : t.v) x = rng.normal();
    return t;
}

// ----------------------------------------------------------------- backbones

namespace {

struct ConvBnBlock {
    nn::Conv2d conv;
    nn::BatchNorm bn;
    ConvBnBlock() = default;
    ConvBnBlock(ParamStore& s, const std::string& p, int in_ch, int out_ch, int k,
                int stride, int pad, Rng& rng, bool trainable)
        : conv(s, p + ".conv", in_ch, out_ch, k, stride, pad, rng, trainable,
               /*with_bias=*/false),
          bn(s, p + ".bn", out_ch, trainable) {}
    Var forward(const Var& x, bool training) const {
        return ad::relu(bn.forward(conv.forward(x), training));
    }
};

class SmallCnn : public Backbone {
public:
    SmallCnn(ParamStore& store, const std::string& prefix, int in_ch, int width,
             Rng& rng, bool trainable) {
        if (width < 1) throw ConfigError("small_cnn width must be >= 1");
        widths_ = {std::max(1, width / 8), std::max(1, width / 4),
                   std::max(1, width / 2), width};
        strides_ = {2, 2, 2, 2};
        int c = in_ch;
        for (std::size_t i = 0; i < widths_.size(); ++i) {
            blocks_.emplace_back(store, prefix + ".block" + std::to_string(i + 1), c,
                                 widths_[i], 3, 2, 1, rng, trainable);
            c = widths_[i];
        }
        feat_dim_ = width;
    }
    Var features(const Var& images, bool training) override {
        Var x = images;
        for (const auto& b : blocks_) x = b.forward(x, training);
        return ad::global_avg_pool(x);
    }
    int feat_dim() const override { return feat_dim_; }
    const std::vector<int>& stage_widths() const override { return widths_; }
    const std::vector<int>& stage_strides() const override { return strides_; }

private:
    std::vector<ConvBnBlock> blocks_;
    std::vector<int> widths_, strides_;
    int feat_dim_ = 0;
};

class AlexNet : public Backbone {
public:
    AlexNet(ParamStore& store, const std::string& prefix, int in_ch, int fc_dim,
            Rng& rng, bool trainable)
        : conv1_(store, prefix + ".conv1", in_ch, 64, 11, 4, 2, rng, trainable),
          conv2_(store, prefix + ".conv2", 64, 192, 5, 1, 2, rng, trainable),
          conv3_(store, prefix + ".conv3", 192, 384, 3, 1, 1, rng, trainable),
          conv4_(store, prefix + ".conv4", 384, 256, 3, 1, 1, rng, trainable),
          conv5_(store, prefix + ".conv5", 256, 256, 3, 1, 1, rng, trainable),
          fc_(store, prefix + ".fc6", 256 * 6 * 6, fc_dim, rng, trainable),
          fc_dim_(fc_dim) {
        widths_ = {64, 192, 256, 256};
        strides_ = {4, 2, 2, 2};
    }
    Var features(const Var& images, bool training) override {
        (void)training;
        Var x = ad::relu(conv1_.forward(images));
        x = ad::max_pool2d(x, 3, 2);
        x = ad::relu(conv2_.forward(x));
        x = ad::max_pool2d(x, 3, 2);
        x = ad::relu(conv3_.forward(x));
        x = ad::relu(conv4_.forward(x));
        x = ad::relu(conv5_.forward(x));
        x = ad::max_pool2d(x, 3, 2);
        x = ad::adaptive_avg_pool2d(x, 6, 6);
        x = ad::reshape(x, {x.val().dim(0), 256 * 6 * 6});
        return ad::relu(fc_.forward(x));
    }
    int feat_dim() const override { return fc_dim_; }
    const std::vector<int>& stage_widths() const override { return widths_; }
    const std::vector<int>& stage_strides() const override { return strides_; }

private:
    nn::Conv2d conv1_, conv2_, conv3_, conv4_, conv5_;
    nn::Linear fc_;
    std::vector<int> widths_, strides_;
    int fc_dim_;
};

struct Bottleneck {
    ConvBnBlock reduce, mid;
    nn::Conv2d expand;
    nn::BatchNorm expand_bn;
    nn::Conv2d proj;
    nn::BatchNorm proj_bn;
    bool has_proj = false;

    Bottleneck(ParamStore& s, const std::string& p, int in_ch, int mid_ch, int out_ch,
               int stride, Rng& rng, bool trainable)
        : reduce(s, p + ".reduce", in_ch, mid_ch, 1, 1, 0, rng, trainable),
          mid(s, p + ".mid", mid_ch, mid_ch, 3, stride, 1, rng, trainable),
          expand(s, p + ".expand.conv", mid_ch, out_ch, 1, 1, 0, rng, trainable,
                 /*with_bias=*/false),
          expand_bn(s, p + ".expand.bn", out_ch, trainable) {
        has_proj = stride != 1 || in_ch != out_ch;
        if (has_proj) {
            proj = nn::Conv2d(s, p + ".proj.conv", in_ch, out_ch, 1, stride, 0, rng,
                              trainable, /*with_bias=*/false);
            proj_bn = nn::BatchNorm(s, p + ".proj.bn", out_ch, trainable);
        }
    }
    Var forward(const Var& x, bool training) const {
        Var y = reduce.forward(x, training);
        y = mid.forward(y, training);
        y = expand_bn.forward(expand.forward(y), training);
        Var skip = has_proj ? proj_bn.forward(proj.forward(x), training) : x;
        return ad::relu(ad::add(y, skip));
    }
};

class ResNet50 : public Backbone {
public:
    ResNet50(ParamStore& store, const std::string& prefix, int in_ch, Rng& rng,
             bool trainable)
        : stem_(store, prefix + ".stem", in_ch, 64, 7, 2, 3, rng, trainable) {
        widths_ = {64, 256, 512, 1024, 2048};
        strides_ = {2, 2, 2, 2, 2};
        const int counts[4] = {3, 4, 6, 3};
        const int mids[4] = {64, 128, 256, 512};
        const int outs[4] = {256, 512, 1024, 2048};
        int in = 64;
        for (int s = 0; s < 4; ++s) {
            for (int b = 0; b < counts[s]; ++b) {
                const int stride = (s > 0 && b == 0) ? 2 : 1;
                blocks_.emplace_back(store,
                                     prefix + ".stage" + std::to_string(s + 1) + ".block" +
                                         std::to_string(b + 1),
                                     in, mids[s], outs[s], stride, rng, trainable);
                in = outs[s];
            }
        }
    }
    Var features(const Var& images, bool training) override {
        Var x = stem_.forward(images, training);
        x = ad::max_pool2d(x, 3, 2);
        for (const auto& b : blocks_) x = b.forward(x, training);
        return ad::global_avg_pool(x);
    }
    int feat_dim() const override { return 2048; }
    const std::vector<int>& stage_widths() const override { return widths_; }
    const std::vector<int>& stage_strides() const override { return strides_; }

private:
    ConvBnBlock stem_;
    std::vector<Bottleneck> blocks_;
    std::vector<int> widths_, strides_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(ParamStore& store, const std::string& prefix,
                                        const BackboneOptions& opt, Rng& rng,
                                        bool trainable) {
    switch (opt.kind) {
        case BackboneKind::SmallCnn:
            return std::make_unique<SmallCnn>(store, prefix, opt.in_channels,
                                              opt.small_cnn_width, rng, trainable);
        case BackboneKind::AlexNet:
            return std::make_unique<AlexNet>(store, prefix, opt.in_channels,
                                             opt.alexnet_fc_dim, rng, trainable);
        case BackboneKind::ResNet50:
            return std::make_unique<ResNet50>(store, prefix, opt.in_channels, rng,
                                              trainable);
    }
    throw ConfigError("unknown backbone kind");
}

// ------------------------------------------------------------------- decoder

ConvDecoder::ConvDecoder(ParamStore& store, const std::string& prefix, int input_dim,
                         std::vector<int> stage_widths, std::vector<int> stage_strides,
                         int out_res, int out_channels, Rng& rng)
    : widths_(std::move(stage_widths)), out_channels_(out_channels) {
    if (widths_.empty() || widths_.size() != stage_strides.size())
        throw ConfigError("decoder: stage widths/strides mismatch");
    int total = 1;
    for (int s : stage_strides) total *= s;
    if (out_res % total != 0)
        throw ConfigError("decoder: resolution " + std::to_string(out_res) +
                          " not divisible by stride product " + std::to_string(total));
    bottom_res_ = out_res / total;
    if (bottom_res_ < 1) throw ConfigError("decoder: bottom resolution collapsed");

    const int k = static_cast<int>(widths_.size());
    // the fc bias survives the following 2-D batch norm (it varies within a
    // channel), so it stays
    fc_ = nn::Linear(store, prefix + ".fc", input_dim,
                     widths_.back() * bottom_res_ * bottom_res_, rng);
    fc_bn_ = nn::BatchNorm(store, prefix + ".fc_bn", widths_.back());
    for (int i = k - 1; i >= 1; --i) {
        ups_.emplace_back(store, prefix + ".up" + std::to_string(k - i), widths_[static_cast<std::size_t>(i)],
                          widths_[static_cast<std::size_t>(i - 1)],
                          stage_strides[static_cast<std::size_t>(i)], rng,
                          /*trainable=*/true, /*with_bias=*/false);
        bns_.emplace_back(store, prefix + ".up" + std::to_string(k - i) + ".bn",
                          widths_[static_cast<std::size_t>(i - 1)]);
    }
    ups_.emplace_back(store, prefix + ".up" + std::to_string(k), widths_.front(),
                      out_channels, stage_strides.front(), rng);
}

Var ConvDecoder::forward(const Var& z, bool training) const {
    const int n = z.val().dim(0);
    Var x = fc_.forward(z);
    x = ad::reshape(x, {n, widths_.back(), bottom_res_, bottom_res_});
    x = ad::relu(fc_bn_.forward(x, training));
    for (std::size_t i = 0; i + 1 < ups_.size(); ++i) {
        x = ups_[i].forward(x);
        x = ad::relu(bns_[i].forward(x, training));
    }
    x = ups_.back().forward(x);
    return ad::sigmoid(x);
}

// ----------------------------------------------------------------------- VAE

VaeModel::VaeModel(const ModelConfig& c) : SketchModel(c) {
    Rng rng(cfg.init_seed);
    enc_ = make_backbone(store, "encoder", cfg.backbone_options(), rng);
    fc_mu_ = nn::Linear(store, "fc_mu", enc_->feat_dim(), cfg.latent_dim, rng);
    fc_logvar_ = nn::Linear(store, "fc_logvar", enc_->feat_dim(), cfg.latent_dim, rng);
    dec_ = std::make_unique<ConvDecoder>(store, "decoder", cfg.latent_dim,
                                         enc_->stage_widths(), enc_->stage_strides(),
                                         cfg.resolution, cfg.in_channels, rng);
}

LatentPair VaeModel::encode(const Var& images, bool training) {
    Var f = enc_->features(images, training);
    return {fc_mu_.forward(f), fc_logvar_.forward(f)};
}

Var VaeModel::decode(const Var& z, bool training) { return dec_->forward(z, training); }

VaeModel::Output VaeModel::forward(const Var& images, bool training, Rng* rng) {
    LatentPair lp = encode(images, training);
    Var z;
    if (training) {
        if (!rng) throw ConfigError("vae training forward needs a random source");
        z = reparameterize(lp, draw_standard_normal(lp.mu.shape(), *rng));
    } else {
        z = lp.mu;
    }
    return {lp, z, decode(z, training)};
}

Var VaeModel::embed(const Var& images) {
    return encode(images, /*training=*/false).mu;
}

// ------------------------------------------------------------------------ M2

M2Model::M2Model(const ModelConfig& c) : SketchModel(c) {
    Rng rng(cfg.init_seed);
    enc_ = make_backbone(store, "encoder", cfg.backbone_options(), rng);
    cls_backbone_ = make_backbone(store, "classifier", cfg.backbone_options(), rng);
    fc_mu_ = nn::Linear(store, "fc_mu", enc_->feat_dim(), cfg.latent_dim, rng);
    fc_logvar_ = nn::Linear(store, "fc_logvar", enc_->feat_dim(), cfg.latent_dim, rng);
    fc_cls_ = nn::Linear(store, "fc_cls", cls_backbone_->feat_dim(), cfg.n_classes, rng);
    dec_ = std::make_unique<ConvDecoder>(store, "decoder",
                                         cfg.latent_dim + cfg.n_classes,
                                         enc_->stage_widths(), enc_->stage_strides(),
                                         cfg.resolution, cfg.in_channels, rng);
}

LatentPair M2Model::encode(const Var& images, bool training) {
    Var f = enc_->features(images, training);
    return {fc_mu_.forward(f), fc_logvar_.forward(f)};
}

Var M2Model::classify(const Var& images, bool training) {
    Var f = cls_backbone_->features(images, training);
    return ad::softmax_rows(fc_cls_.forward(f));
}

Var M2Model::decode(const Var& z, const Var& class_vec, bool training) {
    if (class_vec.val().dim(1) != cfg.n_classes)
        throw ConfigError("m2 decode: class vector dim " +
                          std::to_string(class_vec.val().dim(1)) + " != " +
                          std::to_string(cfg.n_classes));
    return dec_->forward(ad::concat_cols(z, class_vec), training);
}

M2Model::Output M2Model::forward(const Var& images, const Var& class_vec,
                                 bool training, Rng* rng) {
    LatentPair lp = encode(images, training);
    Var probs = classify(images, training);
    Var z;
    if (training) {
        if (!rng) throw ConfigError("m2 training forward needs a random source");
        z = reparameterize(lp, draw_standard_normal(lp.mu.shape(), *rng));
    } else {
        z = lp.mu;
    }
    return {lp, probs, decode(z, class_vec, training)};
}

Var M2Model::embed(const Var& images) {
    // first latent_dim entries from the mu path, remaining n_classes from the
    // classifier path
    Var mu = encode(images, false).mu;
    Var probs = classify(images, false);
    return ad::concat_cols(mu, probs);
}

// --------------------------------------------------------------------- SSVAE

SsvaeModel::SsvaeModel(const ModelConfig& c) : SketchModel(c) {
    Rng rng(cfg.init_seed);
    enc_ = make_backbone(store, "encoder", cfg.backbone_options(), rng);
    fc_mu_ = nn::Linear(store, "fc_mu", enc_->feat_dim(), cfg.latent_dim, rng);
    fc_logvar_ = nn::Linear(store, "fc_logvar", enc_->feat_dim(), cfg.latent_dim, rng);
    fc_cls_ = nn::Linear(store, "fc_cls", enc_->feat_dim(), cfg.n_classes, rng);
    dec_ = std::make_unique<ConvDecoder>(store, "decoder", cfg.latent_dim,
                                         enc_->stage_widths(), enc_->stage_strides(),
                                         cfg.resolution, cfg.in_channels, rng);
}

SsvaeModel::Output SsvaeModel::forward(const Var& images, bool training, Rng* rng) {
    Var f = enc_->features(images, training);
    LatentPair lp{fc_mu_.forward(f), fc_logvar_.forward(f)};
    Var probs = ad::softmax_rows(fc_cls_.forward(f));
    Var z;
    if (training) {
        if (!rng) throw ConfigError("ssvae training forward needs a random source");
        z = reparameterize(lp, draw_standard_normal(lp.mu.shape(), *rng));
    } else {
        z = lp.mu;
    }
    return {lp, probs, dec_->forward(z, training)};
}

Var SsvaeModel::embed(const Var& images) {
    Var f = enc_->features(images, false);
    return fc_mu_.forward(f);
}

// ---------------------------------------------------------------------- BYOL

MlpHead::MlpHead(ParamStore& store, const std::string& prefix, int in_dim, int hidden,
                 int out_dim, Rng& rng, bool trainable)
    : fc1(store, prefix + ".fc1", in_dim, hidden, rng, trainable, /*with_bias=*/false),
      fc2(store, prefix + ".fc2", hidden, out_dim, rng, trainable),
      bn(store, prefix + ".bn", hidden, trainable) {}

Var MlpHead::forward(const Var& x, bool training) const {
    return fc2.forward(ad::relu(bn.forward(fc1.forward(x), training)));
}

ByolModel::ByolModel(const ModelConfig& c) : SketchModel(c) {
    Rng rng(cfg.init_seed);
    online_enc_ = make_backbone(store, "online.encoder", cfg.backbone_options(), rng);
    online_proj_ = MlpHead(store, "online.projector", online_enc_->feat_dim(),
                           cfg.byol_proj_hidden, cfg.byol_proj_dim, rng, true);
    online_pred_ = MlpHead(store, "online.predictor", cfg.byol_proj_dim,
                           cfg.byol_proj_hidden, cfg.byol_proj_dim, rng, true);
    // target starts as an exact copy of the online encoder/projector and is
    // never touched by the optimizer
    Rng rng_t(cfg.init_seed);  // same draw sequence as the online side
    target_enc_ = make_backbone(store, "target.encoder", cfg.backbone_options(), rng_t,
                                /*trainable=*/false);
    target_proj_ = MlpHead(store, "target.projector", target_enc_->feat_dim(),
                           cfg.byol_proj_hidden, cfg.byol_proj_dim, rng_t,
                           /*trainable=*/false);

    for (const auto& [name, target_param] : store.params()) {
        if (name.rfind("target.", 0) != 0) continue;
        const std::string online_name = "online." + name.substr(7);
        Var online_param = store.param(online_name);
        // enforce copy-init even if draw sequences ever diverge
        target_param.n->val.v = online_param.val().v;
        ema_pairs_.emplace_back(online_param, target_param);
    }
}

ByolModel::Vectors ByolModel::forward(const Var& view_a, const Var& view_b,
                                      bool training) {
    Var pred_a = online_pred_.forward(
        online_proj_.forward(online_enc_->features(view_a, training), training), training);
    Var pred_b = online_pred_.forward(
        online_proj_.forward(online_enc_->features(view_b, training), training), training);
    Var targ_a, targ_b;
    {
        ad::NoGradGuard ng;
        targ_a = target_proj_.forward(target_enc_->features(view_a, training), training);
        targ_b = target_proj_.forward(target_enc_->features(view_b, training), training);
    }
    return {pred_a, targ_b, pred_b, targ_a};
}

void ByolModel::ema_update() {
    const double tau = cfg.tau;
    for (auto& [online, target] : ema_pairs_) {
        auto& tv = target.n->val.v;
        const auto& ov = online.val().v;
        for (std::size_t i = 0; i < tv.size(); ++i)
            tv[i] = tau * tv[i] + (1.0 - tau) * ov[i];
    }
}

Var ByolModel::embed(const Var& images) {
    return online_enc_->features(images, false);
}

int ByolModel::embed_dim() const { return online_enc_->feat_dim(); }

// ---------------------------------------------------------------- supervised

SupervisedModel::SupervisedModel(const ModelConfig& c) : SketchModel(c) {
    Rng rng(cfg.init_seed);
    backbone_ = make_backbone(store, "backbone", cfg.backbone_options(), rng);
    fc_ = nn::Linear(store, "fc", backbone_->feat_dim(), cfg.n_classes, rng);
}

SupervisedModel::Output SupervisedModel::forward(const Var& images, bool training) {
    Var f = backbone_->features(images, training);
    return {fc_.forward(f), f};
}

Var SupervisedModel::embed(const Var& images) {
    return backbone_->features(images, false);
}

int SupervisedModel::embed_dim() const { return backbone_->feat_dim(); }

std::unique_ptr<SketchModel> make_model(const ModelConfig& cfg) {
    switch (cfg.kind) {
        case ModelKind::Vae: return std::make_unique<VaeModel>(cfg);
        case ModelKind::M2: return std::make_unique<M2Model>(cfg);
        case ModelKind::Ssvae: return std::make_unique<SsvaeModel>(cfg);
        case ModelKind::Byol: return std::make_unique<ByolModel>(cfg);
        case ModelKind::Supervised: return std::make_unique<SupervisedModel>(cfg);
    }
    throw ConfigError("unknown model kind");
}

// ------------------------------------------------------------------- batches

TensorData to_input_tensor(std::span<const RasterSketch> batch) {
    if (batch.empty()) throw ConfigError("empty raster batch");
    const int h = batch[0].h, w = batch[0].w;
    const Polarity pol = batch[0].polarity;
    TensorData t({static_cast<int>(batch.size()), 1, h, w});
    const double scale = pol == Polarity::Gray0To255 ? 1.0 / 255.0 : 1.0;
    std::size_t off = 0;
    for (const auto& img : batch) {
        if (img.h != h || img.w != w || img.polarity != pol)
            throw ConfigError("raster batch is not homogeneous");
        for (float p : img.pixels) t.v[off++] = static_cast<double>(p) * scale;
    }
    return t;
}

TensorData one_hot(std::span<const int> labels, int n_classes) {
    TensorData t({static_cast<int>(labels.size()), n_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= n_classes) throw ConfigError("one_hot: label out of range");
        t.v[i * static_cast<std::size_t>(n_classes) + static_cast<std::size_t>(y)] = 1.0;
    }
    return t;
}

// --------------------------------------------------------------- checkpoints

namespace {
constexpr char kCkptMagic[] = "SKCKPT1\n";

void write_u64(std::ostream& out, std::uint64_t x) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw IoError("checkpoint truncated");
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return x;
}

void write_tensor(std::ostream& out, const std::string& name, const TensorData& t) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, t.shape.size());
    for (int d : t.shape) write_u64(out, static_cast<std::uint64_t>(d));
    write_u64(out, t.v.size());
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

std::pair<std::string, TensorData> read_tensor(std::istream& in) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t ndim = read_u64(in);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u64(in));
    const std::uint64_t numel = read_u64(in);
    TensorData t(std::move(shape));
    if (static_cast<std::uint64_t>(t.numel()) != numel)
        throw IoError("checkpoint tensor size mismatch for " + name);
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw IoError("checkpoint truncated in tensor " + name);
    return {std::move(name), std::move(t)};
}

json model_config_to_json(const ModelConfig& c) {
    json j;
    j["model_kind"] = model_kind_name(c.kind);
    j["backbone"] = backbone_name(c.backbone);
    j["in_channels"] = c.in_channels;
    j["small_cnn_width"] = c.small_cnn_width;
    j["alexnet_fc_dim"] = c.alexnet_fc_dim;
    j["latent_dim"] = c.latent_dim;
    j["n_classes"] = c.n_classes;
    j["byol_proj_hidden"] = c.byol_proj_hidden;
    j["byol_proj_dim"] = c.byol_proj_dim;
    j["tau"] = c.tau;
    j["resolution"] = c.resolution;
    j["polarity"] = polarity_name(c.polarity);
    j["init_seed"] = c.init_seed;
    j["pretrained"] = c.pretrained;
    j["config_hash"] = c.config_hash;
    j["manifest_hash"] = c.manifest_hash;
    j["seed"] = c.seed;
    // embed_dim is derived but recorded for tooling convenience
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.kind = model_kind_from_name(j.at("model_kind").get<std::string>());
    c.backbone = backbone_from_name(j.at("backbone").get<std::string>());
    c.in_channels = j.value("in_channels", 1);
    c.small_cnn_width = j.value("small_cnn_width", 32);
    c.alexnet_fc_dim = j.value("alexnet_fc_dim", 4096);
    c.latent_dim = j.value("latent_dim", 32);
    c.n_classes = j.value("n_classes", 128);
    c.byol_proj_hidden = j.value("byol_proj_hidden", 4096);
    c.byol_proj_dim = j.value("byol_proj_dim", 256);
    c.tau = j.value("tau", 0.996);
    c.resolution = j.value("resolution", 256);
    c.polarity = polarity_from_name(j.value("polarity", "binary_stroke0"));
    c.init_seed = j.value("init_seed", std::uint64_t{0});
    c.pretrained = j.value("pretrained", false);
    c.config_hash = j.value("config_hash", "");
    c.manifest_hash = j.value("manifest_hash", "");
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
}

}  // namespace

void save_checkpoint(const SketchModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic) - 1);
    json header = model_config_to_json(model.cfg);
    header["embed_dim"] = const_cast<SketchModel&>(model).embed_dim();
    const std::string htext = header.dump();
    write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    write_u64(out, model.store.params().size());
    for (const auto& [name, v] : model.store.params()) write_tensor(out, name, v.val());
    write_u64(out, model.store.buffers().size());
    for (const auto& [name, b] : model.store.buffers()) write_tensor(out, name, *b);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

std::unique_ptr<SketchModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    char magic[sizeof(kCkptMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw ParseError("not a checkpoint file: " + path);
    const std::uint64_t hlen = read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad checkpoint header: ") + e.what());
    }
    auto model = make_model(model_config_from_json(header));

    const std::uint64_t n_params = read_u64(in);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        auto [name, t] = read_tensor(in);
        Var p = model->store.param(name);
        if (!p.val().same_shape(t))
            throw ConfigError("checkpoint parameter shape mismatch: " + name);
        p.n->val.v = std::move(t.v);
    }
    const std::uint64_t n_buffers = read_u64(in);
    for (std::uint64_t i = 0; i < n_buffers; ++i) {
        auto [name, t] = read_tensor(in);
        auto it = model->store.buffers().find(name);
        if (it == model->store.buffers().end())
            throw ConfigError("checkpoint buffer unknown: " + name);
        if (!it->second->same_shape(t))
            throw ConfigError("checkpoint buffer shape mismatch: " + name);
        it->second->v = std::move(t.v);
    }
    return model;
}

int load_pretrained_into(SketchModel& model, const std::string& checkpoint_path,
                         const std::string& prefix_filter) {
    auto source = load_checkpoint(checkpoint_path);
    int copied = 0;
    for (const auto& [name, sp] : source->store.params()) {
        if (!prefix_filter.empty() && name.rfind(prefix_filter, 0) != 0) continue;
        auto it = model.store.params().find(name);
        if (it == model.store.params().end()) continue;
        if (!it->second.val().same_shape(sp.val())) continue;
        it->second.n->val.v = sp.val().v;
        ++copied;
    }
    for (const auto& [name, sb] : source->store.buffers()) {
        if (!prefix_filter.empty() && name.rfind(prefix_filter, 0) != 0) continue;
        auto it = model.store.buffers().find(name);
        if (it == model.store.buffers().end()) continue;
        if (!it->second->same_shape(*sb)) continue;
        it->second->v = sb->v;
        ++copied;
    }
    model.cfg.pretrained = true;
    return copied;
}

}  // namespace sketchssl
