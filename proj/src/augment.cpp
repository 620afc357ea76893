#include "sketchssl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace sketchssl {

void AugmentationConfig::validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(p_line_skip) || !prob(p_rotate) || !prob(p_hflip) || !prob(p_crop))
        throw ConfigError("augmentation probabilities must be in [0,1]");
    if (!(skip_fraction >= 0.0 && skip_fraction <= 1.0))
        throw ConfigError("skip_fraction must be in [0,1]");
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
        throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
    if (angle_min_deg > angle_max_deg)
        throw ConfigError("angle range inverted");
}

StrokeSketch line_skip(const StrokeSketch& sketch, double skip_fraction, Rng& rng) {
    const int s = static_cast<int>(sketch.stroke_count());
    if (s <= 1) return sketch;
    int d = std::max(1, static_cast<int>(std::floor(skip_fraction * s)));
    d = std::min(d, s - 1);  // never empty the sketch
    std::vector<int> doomed = rng.sample_indices(s, d);
    StrokeSketch out;
    out.canvas_w = sketch.canvas_w;
    out.canvas_h = sketch.canvas_h;
    std::size_t k = 0;
    for (int i = 0; i < s; ++i) {
        if (k < doomed.size() && doomed[k] == i) {
            ++k;
            continue;
        }
        out.strokes.push_back(sketch.strokes[static_cast<std::size_t>(i)]);
    }
    return out;
}

StrokeSketch rotate(const StrokeSketch& sketch, double angle_deg) {
    const double cx = (sketch.canvas_w - 1) / 2.0;
    const double cy = (sketch.canvas_h - 1) / 2.0;
    const double rad = angle_deg * M_PI / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    StrokeSketch out = sketch;
    for (auto& stroke : out.strokes)
        for (std::size_t i = 0; i < stroke.size(); ++i) {
            const double dx = stroke.x[i] - cx;
            const double dy = stroke.y[i] - cy;
            stroke.x[i] = cx + dx * c - dy * s;
            stroke.y[i] = cy + dx * s + dy * c;
        }
    return out;
}

StrokeSketch hflip(const StrokeSketch& sketch) {
    StrokeSketch out = sketch;
    const double wm1 = sketch.canvas_w - 1;
    for (auto& stroke : out.strokes)
        for (auto& x : stroke.x) x = wm1 - x;
    return out;
}

RasterSketch resize_raster(const RasterSketch& image, int out_h, int out_w) {
    RasterSketch out;
    out.h = out_h;
    out.w = out_w;
    out.polarity = image.polarity;
    out.pixels.resize(static_cast<std::size_t>(out_h) * out_w);
    if (image.polarity == Polarity::BinaryStroke0) {
        // nearest neighbor keeps the output binary
        for (int r = 0; r < out_h; ++r) {
            const int sr = std::min(image.h - 1,
                                    static_cast<int>(std::lround(
                                        out_h > 1 ? r * static_cast<double>(image.h - 1) / (out_h - 1)
                                                  : 0.0)));
            for (int c = 0; c < out_w; ++c) {
                const int sc = std::min(image.w - 1,
                                        static_cast<int>(std::lround(
                                            out_w > 1 ? c * static_cast<double>(image.w - 1) / (out_w - 1)
                                                      : 0.0)));
                out.at(r, c) = image.at(sr, sc);
            }
        }
    } else {
        for (int r = 0; r < out_h; ++r) {
            const double fr = out_h > 1 ? r * static_cast<double>(image.h - 1) / (out_h - 1) : 0.0;
            const int r0 = static_cast<int>(fr);
            const int r1 = std::min(r0 + 1, image.h - 1);
            const double ar = fr - r0;
            for (int c = 0; c < out_w; ++c) {
                const double fc = out_w > 1 ? c * static_cast<double>(image.w - 1) / (out_w - 1) : 0.0;
                const int c0 = static_cast<int>(fc);
                const int c1 = std::min(c0 + 1, image.w - 1);
                const double ac = fc - c0;
                const double top = image.at(r0, c0) * (1.0 - ac) + image.at(r0, c1) * ac;
                const double bot = image.at(r1, c0) * (1.0 - ac) + image.at(r1, c1) * ac;
                out.at(r, c) = static_cast<float>(top * (1.0 - ar) + bot * ar);
            }
        }
    }
    return out;
}

RasterSketch sized_crop(const RasterSketch& image, double scale, int top, int left,
                        int out_h, int out_w) {
    const int side = static_cast<int>(std::floor(scale * std::min(image.h, image.w)));
    if (side < 1) throw ConfigError("sized_crop: crop side collapsed to zero");
    if (top < 0 || left < 0 || top + side > image.h || left + side > image.w)
        throw ConfigError("sized_crop: crop rectangle out of bounds");
    RasterSketch crop;
    crop.h = side;
    crop.w = side;
    crop.polarity = image.polarity;
    crop.pixels.resize(static_cast<std::size_t>(side) * side);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) crop.at(r, c) = image.at(top + r, left + c);
    return resize_raster(crop, out_h, out_w);
}

StrokeSketch apply_vector_ops(const StrokeSketch& sketch, const AugmentationConfig& cfg,
                              Rng& rng, ViewTrace* trace) {
    StrokeSketch cur = sketch;
    if (rng.uniform() < cfg.p_line_skip) {
        cur = line_skip(cur, cfg.skip_fraction, rng);
        if (trace) trace->line_skip_applied = cur.stroke_count() < sketch.stroke_count();
    }
    if (rng.uniform() < cfg.p_rotate) {
        const double angle = rng.uniform(cfg.angle_min_deg, cfg.angle_max_deg);
        cur = rotate(cur, angle);
        if (trace) {
            trace->rotate_applied = true;
            trace->angle_deg = angle;
        }
    }
    if (rng.uniform() < cfg.p_hflip) {
        cur = hflip(cur);
        if (trace) trace->hflip_applied = true;
    }
    return cur;
}

RasterSketch make_view(const StrokeSketch& sketch, const AugmentationConfig& cfg,
                       int out_h, int out_w, Rng& rng, ViewTrace* trace) {
    const StrokeSketch transformed = apply_vector_ops(sketch, cfg, rng, trace);
    RasterSketch full = rasterize(transformed, 256, 256, Polarity::Gray0To255);
    if (rng.uniform() < cfg.p_crop) {
        const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
        const int side = std::max(1, static_cast<int>(std::floor(scale * std::min(full.h, full.w))));
        const int top = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(full.h - side + 1)));
        const int left = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(full.w - side + 1)));
        if (trace) {
            trace->crop_applied = true;
            trace->crop_scale = scale;
        }
        return sized_crop(full, scale, top, left, out_h, out_w);
    }
    return resize_raster(full, out_h, out_w);
}

std::pair<RasterSketch, RasterSketch> make_view_pair(const StrokeSketch& sketch,
                                                     const AugmentationConfig& cfg,
                                                     int out_h, int out_w, Rng& rng) {
    RasterSketch a = make_view(sketch, cfg, out_h, out_w, rng);
    RasterSketch b = make_view(sketch, cfg, out_h, out_w, rng);
    return {std::move(a), std::move(b)};
}

}  // namespace sketchssl
