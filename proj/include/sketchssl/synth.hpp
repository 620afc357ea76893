#pragma once

#include <string>
#include <vector>

#include "sketchssl/common.hpp"
#include "sketchssl/data.hpp"

namespace sketchssl {

// Parametric sketch generator for desk-scale experiments and tests. Twenty
// shape families with per-sample jitter in position, scale, rotation and
// stroke noise, emitted in the same NDJSON record format the loader parses.
namespace synth {

std::vector<std::string> shape_names();  // 20 entries

// One randomized instance of the named shape on a 256x256 canvas.
StrokeSketch make_sketch(const std::string& shape, Rng& rng);

std::string to_ndjson_line(const std::string& category, const StrokeSketch& sketch);

// Write <out_dir>/<shape>.ndjson for the first n_classes shapes.
void write_dataset(const std::string& out_dir, int n_classes, int per_class,
                   std::uint64_t seed);

}  // namespace synth

}  // namespace sketchssl
