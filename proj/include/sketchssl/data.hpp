#pragma once

#include <map>
#include <string>
#include <vector>

#include "sketchssl/common.hpp"

namespace sketchssl {

// --------------------------------------------------------------- sketches

// One continuous polyline. x/y are parallel arrays in canvas coordinates.
struct Stroke {
    std::vector<double> x, y;
    std::size_t size() const { return x.size(); }
};

// A sketch as an ordered sequence of strokes on a fixed canvas. Temporal
// stroke order is preserved but nothing downstream depends on it.
struct StrokeSketch {
    std::vector<Stroke> strokes;
    int canvas_w = 256;
    int canvas_h = 256;

    std::size_t stroke_count() const { return strokes.size(); }
    std::size_t point_count() const {
        std::size_t n = 0;
        for (const auto& s : strokes) n += s.size();
        return n;
    }
};

enum class Polarity {
    BinaryStroke0,  // strokes 0, background 1
    Gray0To255,     // strokes 0 (dark), background 255
};

std::string polarity_name(Polarity p);
Polarity polarity_from_name(const std::string& s);

struct RasterSketch {
    std::vector<float> pixels;  // row major, h*w
    int h = 0, w = 0;
    Polarity polarity = Polarity::BinaryStroke0;

    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * w + c]; }
    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * w + c]; }
};

struct SketchRecord {
    StrokeSketch sketch;
    std::string category;
    int category_id = -1;
    bool label_visible = true;
    std::string source_file;  // category file this record came from
    int line_index = -1;      // 0-based line within that file

    std::string id() const { return source_file + ":" + std::to_string(line_index); }
};

// --------------------------------------------------------------- parsing

// Parse one newline-delimited JSON record in the QuickDraw simplified
// drawing format: {"word": <category>, "drawing": [[[x...],[y...]], ...]}.
// Coordinates outside [0,255] are clamped.
SketchRecord parse_record(const std::string& line);

// ------------------------------------------------------------- rasterizer

// Render strokes as connected line segments scaled from canvas coordinates
// to the target resolution. line_width_px is specified at 256x256 and
// scales proportionally with resolution (minimum 1). Single-point strokes
// become dots.
RasterSketch rasterize(const StrokeSketch& sketch, int h, int w,
                       Polarity polarity, int line_width_px = 2);

// ----------------------------------------------------------------- splits

enum class SplitPart { Train, TestKnown, TestUnknown };
std::string split_part_name(SplitPart p);

struct ManifestRecord {
    std::string file;  // category file name
    int line_index = 0;
    int category_id = 0;
    bool label_visible = true;
    SplitPart split = SplitPart::Train;
};

// Everything needed to rebuild a DatasetSplit from the raw category files.
// category_id indexes the concatenation [train_categories, unknown_categories],
// so unknown-category ids start at train_categories.size().
struct SplitManifest {
    std::uint64_t seed = 0;
    double label_fraction = 0.0;
    std::string label_mode = "stratified";  // or "global"
    std::vector<std::string> train_categories;
    std::vector<std::string> unknown_categories;
    std::vector<ManifestRecord> records;
    std::string config_hash;

    std::string to_json() const;              // deterministic serialization
    static SplitManifest from_json(const std::string& text);
    void save(const std::string& path) const;
    static SplitManifest load(const std::string& path);
};

struct DatasetSplit {
    std::vector<SketchRecord> train;
    std::vector<SketchRecord> test_known;
    std::vector<SketchRecord> test_unknown;
    double label_fraction = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> categories;  // train + unknown category names
};

struct SplitSpec {
    int n_categories = 128;
    int samples_per_class = 1000;
    int test_per_class = 100;
    double label_fraction = 0.0;
    std::string label_mode = "stratified";
    std::uint64_t seed = 0;
};

// Index of available records per category file: category name -> line count.
using CategoryInventory = std::map<std::string, int>;

// Scan a directory of one-NDJSON-file-per-category (file stem = category).
CategoryInventory scan_data_dir(const std::string& dir);

// Deterministically select categories/samples and label visibility.
SplitManifest build_manifest(const CategoryInventory& inv, const SplitSpec& spec);

// Materialize the manifest by re-reading the referenced lines.
DatasetSplit load_split(const SplitManifest& manifest, const std::string& data_dir);

// Per-category label_visible counts over the train part (for assertions).
std::map<int, int> visible_label_histogram(const SplitManifest& manifest);

}  // namespace sketchssl
