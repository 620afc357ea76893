#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace sketchssl {

// Dense row-major tensor of doubles. Plain value type; the autodiff graph
// lives in autodiff.hpp.
struct TensorData {
    std::vector<int> shape;
    std::vector<double> v;

    TensorData() = default;
    explicit TensorData(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }
    TensorData(std::vector<int> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        assert(static_cast<std::int64_t>(v.size()) == numel_of(shape));
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static TensorData zeros(std::vector<int> s) { return TensorData(std::move(s)); }
    static TensorData full(std::vector<int> s, double x) {
        TensorData t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static TensorData scalar(double x) { return TensorData({1}, {x}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& at(std::size_t i) { return v[i]; }
    double at(std::size_t i) const { return v[i]; }

    bool same_shape(const TensorData& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace sketchssl
