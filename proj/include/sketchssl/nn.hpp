#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sketchssl/autodiff.hpp"
#include "sketchssl/common.hpp"
#include "sketchssl/tensor.hpp"

namespace sketchssl::nn {

using ad::Var;

// Registry of named parameters and buffers. Names are hierarchical
// ("encoder.block1.conv.w") and define the checkpoint layout. Iteration is
// in name order, so initialization and optimization are deterministic.
class ParamStore {
public:
    Var add_param(const std::string& name, TensorData init, bool trainable = true) {
        if (params_.count(name)) throw ConfigError("duplicate parameter: " + name);
        Var v = Var::leaf(std::move(init), trainable, name);
        params_.emplace(name, v);
        return v;
    }

    std::shared_ptr<TensorData> add_buffer(const std::string& name, TensorData init) {
        if (buffers_.count(name)) throw ConfigError("duplicate buffer: " + name);
        auto b = std::make_shared<TensorData>(std::move(init));
        buffers_.emplace(name, b);
        return b;
    }

    const std::map<std::string, Var>& params() const { return params_; }
    const std::map<std::string, std::shared_ptr<TensorData>>& buffers() const {
        return buffers_;
    }

    Var param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::vector<Var> trainable() const {
        std::vector<Var> out;
        for (const auto& [name, v] : params_)
            if (v.requires_grad()) out.push_back(v);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, v] : params_) n += v.val().numel();
        return n;
    }

private:
    std::map<std::string, Var> params_;
    std::map<std::string, std::shared_ptr<TensorData>> buffers_;
};

// ------------------------------------------------------------------ layers

// Layers feeding a batch norm drop their bias (with_bias = false): the
// normalization cancels any constant channel shift, leaving the parameter
// permanently gradient-free.

struct Linear {
    Var w, b;
    int in = 0, out = 0;

    Linear() = default;
    Linear(ParamStore& store, const std::string& prefix, int in_dim, int out_dim,
           Rng& rng, bool trainable = true, bool with_bias = true);
    Var forward(const Var& x) const;  // [n,in] -> [n,out]
};

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(ParamStore& store, const std::string& prefix, int in_ch, int out_ch,
           int k, int stride, int pad, Rng& rng, bool trainable = true,
           bool with_bias = true);
    Var forward(const Var& x) const;
};

struct ConvTranspose2d {
    Var w, b;
    int stride = 2, pad = 1;

    ConvTranspose2d() = default;
    // kernel = 2*stride, pad = stride/2: output is exactly stride * input
    ConvTranspose2d(ParamStore& store, const std::string& prefix, int in_ch,
                    int out_ch, int stride, Rng& rng, bool trainable = true,
                    bool with_bias = true);
    Var forward(const Var& x) const;
};

struct BatchNorm {
    Var gamma, beta;
    std::shared_ptr<TensorData> running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm() = default;
    BatchNorm(ParamStore& store, const std::string& prefix, int channels,
              bool trainable = true);
    Var forward(const Var& x, bool training) const;
};

// He-normal initialization used by all conv/linear weights.
TensorData he_normal(std::vector<int> shape, int fan_in, Rng& rng);

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig cfg);

    void zero_grad();
    void step();
    std::size_t param_tensor_count() const { return params_.size(); }

private:
    std::vector<Var> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

}  // namespace sketchssl::nn
