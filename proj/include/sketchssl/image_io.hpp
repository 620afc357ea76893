#pragma once

#include <string>

#include "sketchssl/data.hpp"

namespace sketchssl {

// Grayscale image as 0..255 values (RasterSketch with Gray0To255 polarity).
// PNG (via libpng; gray/RGB/RGBA collapse to luminance) and PGM (P2/P5).
RasterSketch read_gray_image(const std::string& path);

void write_pgm(const RasterSketch& img, const std::string& path);

// Normalize an external edge map for querying: invert if edges are light on
// dark (mean < 128), resize to the index resolution, convert to the model's
// polarity (binary threshold at 128 for BinaryStroke0).
RasterSketch normalize_edge_map(const RasterSketch& img, int resolution, Polarity target);

// Contact sheet: tile rasters (converted to gray) into one image, row major.
RasterSketch contact_sheet(const std::vector<RasterSketch>& tiles, int columns);

}  // namespace sketchssl
