#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sketchssl/autodiff.hpp"
#include "sketchssl/common.hpp"
#include "sketchssl/data.hpp"
#include "sketchssl/nn.hpp"
#include "sketchssl/synth.hpp"

namespace test_helpers {

using namespace sketchssl;

inline double rel_err(double a, double b) {
    const double diff = std::abs(a - b);
    if (diff < 1e-9) return 0.0;
    return diff / std::max(1e-8, std::abs(a) + std::abs(b));
}

// Scratch directory under the build tree, fresh per call.
inline std::string scratch_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("sketchssl_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

// Random shape sketch with format-legal (integer 0..255) coordinates, the
// form every parsed record has.
inline StrokeSketch random_sketch(Rng& rng, int min_strokes = 2, int max_strokes = 8) {
    auto quantize = [](StrokeSketch s) {
        for (auto& st : s.strokes) {
            for (auto& x : st.x) x = std::clamp(std::round(x), 0.0, 255.0);
            for (auto& y : st.y) y = std::clamp(std::round(y), 0.0, 255.0);
        }
        return s;
    };
    const auto names = synth::shape_names();
    for (int attempt = 0; attempt < 64; ++attempt) {
        const auto& name = names[rng.uniform_int(names.size())];
        StrokeSketch s = synth::make_sketch(name, rng);
        const int n = static_cast<int>(s.stroke_count());
        if (n >= min_strokes && n <= max_strokes) return quantize(s);
    }
    return quantize(synth::make_sketch("house", rng));  // 3 strokes
}

inline TensorData random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    TensorData t(std::move(shape));
    for (auto& x : t.v) x = rng.normal() * scale;
    return t;
}

// Central-difference check of d(loss)/d(theta) for sampled parameter
// coordinates. loss_fn must rebuild the graph from current parameter values.
struct GradCheck {
    int checked = 0;
    double max_rel = 0.0;
    double worst_analytic = 0.0, worst_fd = 0.0;
    std::string worst_param;
};

inline GradCheck check_param_gradients(nn::ParamStore& store,
                                       const std::function<ad::Var()>& loss_fn,
                                       int n_coords, Rng& rng, double h = 1e-5) {
    // analytic gradients
    for (auto& [name, p] : store.params()) p.n->zero_grad();
    ad::Var loss = loss_fn();
    ad::backward(loss);
    // central differences cannot resolve derivatives below the rounding
    // noise of the loss itself (~1e-13 relative per evaluation, / 2h)
    const double noise_floor =
        1e-13 * std::max(1.0, std::abs(loss.val().v[0])) / (2.0 * h) * 10.0;

    std::vector<std::pair<std::string, std::size_t>> coords;
    {
        std::vector<std::string> names;
        for (const auto& [name, p] : store.params())
            if (p.requires_grad()) names.push_back(name);
        for (int i = 0; i < n_coords; ++i) {
            const auto& name = names[rng.uniform_int(names.size())];
            const auto& p = store.param(name);
            coords.emplace_back(name, rng.uniform_int(p.val().v.size()));
        }
    }

    GradCheck out;
    for (const auto& [name, idx] : coords) {
        ad::Var p = store.param(name);
        const double analytic = p.n->grad.empty() ? 0.0 : p.n->grad[idx];
        const double orig = p.n->val.v[idx];
        const double step = h * std::max(1.0, std::abs(orig));
        p.n->val.v[idx] = orig + step;
        const double fplus = loss_fn().val().v[0];
        p.n->val.v[idx] = orig - step;
        const double fminus = loss_fn().val().v[0];
        p.n->val.v[idx] = orig;
        const double fd = (fplus - fminus) / (2.0 * step);
        const double rel =
            std::abs(analytic) + std::abs(fd) < noise_floor ? 0.0 : rel_err(analytic, fd);
        ++out.checked;
        if (rel > out.max_rel) {
            out.max_rel = rel;
            out.worst_analytic = analytic;
            out.worst_fd = fd;
            out.worst_param = name;
        }
    }
    return out;
}

}  // namespace test_helpers
