#pragma once

#include "sketchssl/common.hpp"
#include "sketchssl/data.hpp"

namespace sketchssl {

// The four sketch transformations and the two-view composition. Strokes are
// the unit of line skip; line_skip/rotate/hflip act on stroke coordinates,
// the sized crop acts on the rendered raster.
struct AugmentationConfig {
    double p_line_skip = 0.5;
    double skip_fraction = 0.1;
    double p_rotate = 0.5;
    double angle_min_deg = -30.0;
    double angle_max_deg = 30.0;
    double p_hflip = 0.5;
    double p_crop = 1.0;
    double crop_scale_min = 0.3;
    double crop_scale_max = 1.0;

    void validate() const;
};

// Delete max(1, floor(skip_fraction * strokes)) strokes uniformly without
// replacement; a single-stroke sketch is returned unchanged.
StrokeSketch line_skip(const StrokeSketch& sketch, double skip_fraction, Rng& rng);

// Rotate every point about the canvas center ((w-1)/2, (h-1)/2). Points may
// leave the canvas; they are clamped later, at rasterization.
StrokeSketch rotate(const StrokeSketch& sketch, double angle_deg);

// Mirror horizontally: x -> (w-1) - x.
StrokeSketch hflip(const StrokeSketch& sketch);

// Square crop of side floor(scale * min(h,w)) at top_left, resized to
// (out_h, out_w). Nearest-neighbor for binary rasters, bilinear for gray.
RasterSketch sized_crop(const RasterSketch& image, double scale, int top, int left,
                        int out_h, int out_w);

// Raster resize helper shared by sized_crop and the query preprocessing.
RasterSketch resize_raster(const RasterSketch& image, int out_h, int out_w);

// Which transformations a single view draw actually applied (used by the
// Monte Carlo rate checks).
struct ViewTrace {
    bool line_skip_applied = false;
    bool rotate_applied = false;
    bool hflip_applied = false;
    bool crop_applied = false;
    double angle_deg = 0.0;
    double crop_scale = 1.0;
};

// Vector-space stage of one view: line_skip -> rotate -> hflip.
StrokeSketch apply_vector_ops(const StrokeSketch& sketch, const AugmentationConfig& cfg,
                              Rng& rng, ViewTrace* trace = nullptr);

// Full single-view pipeline: vector ops, rasterize at 256 (gray), sized crop,
// resize to out resolution.
RasterSketch make_view(const StrokeSketch& sketch, const AugmentationConfig& cfg,
                       int out_h, int out_w, Rng& rng, ViewTrace* trace = nullptr);

// Two independent views of the same sketch.
std::pair<RasterSketch, RasterSketch> make_view_pair(const StrokeSketch& sketch,
                                                     const AugmentationConfig& cfg,
                                                     int out_h, int out_w, Rng& rng);

}  // namespace sketchssl
