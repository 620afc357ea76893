#include "sketchssl/nn.hpp"

#include <cmath>

namespace sketchssl::nn {

TensorData he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    TensorData t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : t.v) x = rng.normal() * std;
    return t;
}

Linear::Linear(ParamStore& store, const std::string& prefix, int in_dim,
               int out_dim, Rng& rng, bool trainable, bool with_bias)
    : in(in_dim), out(out_dim) {
    w = store.add_param(prefix + ".w", he_normal({in_dim, out_dim}, in_dim, rng),
                        trainable);
    if (with_bias)
        b = store.add_param(prefix + ".b", TensorData::zeros({out_dim}), trainable);
}

Var Linear::forward(const Var& x) const {
    Var y = ad::matmul(x, w);
    return b.defined() ? ad::add_bias_rows(y, b) : y;
}

Conv2d::Conv2d(ParamStore& store, const std::string& prefix, int in_ch,
               int out_ch, int k, int stride_, int pad_, Rng& rng, bool trainable,
               bool with_bias)
    : stride(stride_), pad(pad_) {
    const int fan_in = in_ch * k * k;
    w = store.add_param(prefix + ".w", he_normal({out_ch, in_ch, k, k}, fan_in, rng),
                        trainable);
    if (with_bias)
        b = store.add_param(prefix + ".b", TensorData::zeros({out_ch}), trainable);
}

Var Conv2d::forward(const Var& x) const {
    return ad::conv2d(x, w, b, stride, pad);
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& prefix,
                                 int in_ch, int out_ch, int stride_, Rng& rng,
                                 bool trainable, bool with_bias)
    : stride(stride_), pad(stride_ / 2) {
    const int k = 2 * stride_;
    const int fan_in = in_ch * k * k;
    w = store.add_param(prefix + ".w", he_normal({in_ch, out_ch, k, k}, fan_in, rng),
                        trainable);
    if (with_bias)
        b = store.add_param(prefix + ".b", TensorData::zeros({out_ch}), trainable);
}

Var ConvTranspose2d::forward(const Var& x) const {
    return ad::conv_transpose2d(x, w, b, stride, pad);
}

BatchNorm::BatchNorm(ParamStore& store, const std::string& prefix, int channels,
                     bool trainable) {
    gamma = store.add_param(prefix + ".gamma", TensorData::full({channels}, 1.0),
                            trainable);
    beta = store.add_param(prefix + ".beta", TensorData::zeros({channels}), trainable);
    running_mean = store.add_buffer(prefix + ".running_mean", TensorData::zeros({channels}));
    running_var = store.add_buffer(prefix + ".running_var", TensorData::full({channels}, 1.0));
}

Var BatchNorm::forward(const Var& x, bool training) const {
    return ad::batch_norm(x, gamma, beta, *running_mean, *running_var, training,
                          momentum, eps);
}

Adam::Adam(std::vector<Var> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].val().v.size(), 0.0);
        v_[i].assign(params_[i].val().v.size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.n->zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& node = *params_[pi].n;
        if (node.grad.empty()) continue;  // parameter unused this step
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < node.val.v.size(); ++i) {
            double g = node.grad[i];
            if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * node.val.v[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            node.val.v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace sketchssl::nn
