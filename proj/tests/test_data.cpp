#include <doctest.h>

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "sketchssl/data.hpp"
#include "sketchssl/synth.hpp"

using namespace sketchssl;
using test_helpers::scratch_dir;

TEST_SUITE("data") {

TEST_CASE("parse_record structural round-trip") {
    const std::string line =
        R"({"word":"cat","drawing":[[[10,20,30],[40,50,60]]]})";
    SketchRecord rec = parse_record(line);
    CHECK(rec.category == "cat");
    REQUIRE(rec.sketch.stroke_count() == 1);
    CHECK(rec.sketch.strokes[0].size() == 3);
    CHECK(rec.sketch.canvas_w == 256);
    CHECK(rec.sketch.strokes[0].x[1] == 20.0);
    CHECK(rec.label_visible);
}

TEST_CASE("parse_record error paths") {
    CHECK_THROWS_AS(parse_record("not json at all"), ParseError);
    CHECK_THROWS_AS(parse_record(R"({"word":"x"})"), ParseError);  // no drawing
    // 4 x-values vs 3 y-values
    CHECK_THROWS_AS(parse_record(R"({"word":"x","drawing":[[[1,2,3,4],[1,2,3]]]})"),
                    StructuralError);
    CHECK_THROWS_AS(parse_record(R"({"word":"x","drawing":[]})"), StructuralError);
    CHECK_THROWS_AS(parse_record(R"({"word":"x","drawing":[[[],[]]]})"), StructuralError);
}

TEST_CASE("parse_record clamps out-of-range coordinates") {
    SketchRecord rec = parse_record(R"({"word":"x","drawing":[[[300,-5],[0,128]]]})");
    CHECK(rec.sketch.strokes[0].x[0] == 255.0);
    CHECK(rec.sketch.strokes[0].x[1] == 0.0);
}

TEST_CASE("rasterize: horizontal stroke spans the full row") {
    StrokeSketch s;
    s.strokes.push_back({{0.0, 255.0}, {128.0, 128.0}});
    RasterSketch img = rasterize(s, 256, 256, Polarity::BinaryStroke0);
    int zero_cols = 0;
    for (int c = 0; c < 256; ++c)
        if (img.at(128, c) == 0.0f) ++zero_cols;
    CHECK(zero_cols == 256);  // contiguous band across the width
    for (float p : img.pixels) CHECK((p == 0.0f || p == 1.0f));
}

TEST_CASE("rasterize: any valid sketch inks at least one pixel") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        StrokeSketch s = test_helpers::random_sketch(rng, 1, 12);
        RasterSketch img = rasterize(s, 64, 64, Polarity::BinaryStroke0);
        int ink = 0;
        for (float p : img.pixels) ink += p == 0.0f ? 1 : 0;
        CHECK(ink >= 1);
    }
}

TEST_CASE("rasterize: single-point stroke becomes a dot") {
    StrokeSketch s;
    s.strokes.push_back({{128.0}, {128.0}});
    RasterSketch img = rasterize(s, 256, 256, Polarity::BinaryStroke0);
    int ink = 0;
    for (float p : img.pixels) ink += p == 0.0f ? 1 : 0;
    CHECK(ink >= 1);
    CHECK(ink <= 30);
}

TEST_CASE("rasterize: gray polarity uses 0/255") {
    StrokeSketch s;
    s.strokes.push_back({{0.0, 255.0}, {0.0, 255.0}});
    RasterSketch img = rasterize(s, 128, 128, Polarity::Gray0To255);
    std::set<float> vals(img.pixels.begin(), img.pixels.end());
    CHECK(vals == std::set<float>{0.0f, 255.0f});
}

TEST_CASE("rasterize at 256 then nearest-downsample approximates direct 224 render") {
    Rng rng(6);
    double agree_total = 0.0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        StrokeSketch s = test_helpers::random_sketch(rng, 1, 12);
        RasterSketch big = rasterize(s, 256, 256, Polarity::BinaryStroke0);
        RasterSketch direct = rasterize(s, 224, 224, Polarity::BinaryStroke0);
        int agree = 0;
        for (int r = 0; r < 224; ++r)
            for (int c = 0; c < 224; ++c) {
                const int sr = static_cast<int>(std::lround(r * 255.0 / 223.0));
                const int sc = static_cast<int>(std::lround(c * 255.0 / 223.0));
                agree += big.at(sr, sc) == direct.at(r, c) ? 1 : 0;
            }
        agree_total += static_cast<double>(agree) / (224.0 * 224.0);
    }
    CHECK(agree_total / trials >= 0.90);
}

TEST_CASE("parse -> rasterize is deterministic") {
    const std::string line = R"({"word":"x","drawing":[[[5,250,30],[7,100,200]],[[0,60],[0,60]]]})";
    RasterSketch a = rasterize(parse_record(line).sketch, 64, 64, Polarity::BinaryStroke0);
    RasterSketch b = rasterize(parse_record(line).sketch, 64, 64, Polarity::BinaryStroke0);
    CHECK(a.pixels == b.pixels);
}

// ------------------------------------------------------------------ splits

static CategoryInventory synth_inventory(const std::string& dir, int classes,
                                         int per_class, std::uint64_t seed) {
    synth::write_dataset(dir, classes, per_class, seed);
    return scan_data_dir(dir);
}

TEST_CASE("build_manifest: stratified label counts, disjointness, determinism") {
    const std::string dir = scratch_dir("splits");
    CategoryInventory inv = synth_inventory(dir, 8, 40, 21);

    SplitSpec spec;
    spec.n_categories = 4;
    spec.samples_per_class = 30;
    spec.test_per_class = 10;
    spec.label_fraction = 0.1;
    spec.seed = 77;

    SplitManifest m = build_manifest(inv, spec);
    CHECK(m.train_categories.size() == 4);
    CHECK(m.unknown_categories.size() == 4);

    // disjoint category sets
    std::set<std::string> train_set(m.train_categories.begin(), m.train_categories.end());
    for (const auto& c : m.unknown_categories) CHECK(train_set.count(c) == 0);

    // per-category visible labels = round(0.1 * 30) = 3
    auto hist = visible_label_histogram(m);
    CHECK(hist.size() == 4);
    for (const auto& [cat, cnt] : hist) CHECK(cnt == 3);

    // per-category sample counts and identity disjointness between parts
    std::map<std::string, std::set<int>> train_lines, test_lines;
    int n_train = 0, n_known = 0, n_unknown = 0;
    for (const auto& r : m.records) {
        if (r.split == SplitPart::Train) {
            ++n_train;
            CHECK(train_lines[r.file].insert(r.line_index).second);
        } else if (r.split == SplitPart::TestKnown) {
            ++n_known;
            CHECK(test_lines[r.file].insert(r.line_index).second);
        } else {
            ++n_unknown;
        }
    }
    CHECK(n_train == 4 * 30);
    CHECK(n_known == 4 * 10);
    CHECK(n_unknown == 4 * 10);
    for (const auto& [file, lines] : train_lines)
        for (int ln : test_lines[file]) CHECK(lines.count(ln) == 0);

    // byte-identical manifests for the same seed
    SplitManifest m2 = build_manifest(inv, spec);
    CHECK(m.to_json() == m2.to_json());

    // different seed changes the selection
    spec.seed = 78;
    SplitManifest m3 = build_manifest(inv, spec);
    CHECK(m.to_json() != m3.to_json());
}

TEST_CASE("build_manifest: label_fraction edge cases") {
    const std::string dir = scratch_dir("splits_edge");
    CategoryInventory inv = synth_inventory(dir, 6, 30, 22);
    SplitSpec spec;
    spec.n_categories = 3;
    spec.samples_per_class = 20;
    spec.test_per_class = 5;
    spec.seed = 5;

    spec.label_fraction = 0.0;
    auto m0 = build_manifest(inv, spec);
    CHECK(visible_label_histogram(m0).empty());

    spec.label_fraction = 1.0;
    auto m1 = build_manifest(inv, spec);
    for (const auto& [cat, cnt] : visible_label_histogram(m1)) CHECK(cnt == 20);

    spec.label_fraction = 0.5;
    spec.label_mode = "global";
    auto mg = build_manifest(inv, spec);
    int total = 0;
    for (const auto& [cat, cnt] : visible_label_histogram(mg)) total += cnt;
    CHECK(total == 30);  // round(0.5 * 60) overall, not per category
}

TEST_CASE("build_manifest: insufficient data is a configuration error") {
    const std::string dir = scratch_dir("splits_insufficient");
    CategoryInventory inv = synth_inventory(dir, 4, 10, 23);
    SplitSpec spec;
    spec.n_categories = 4;  // needs 8 categories
    spec.samples_per_class = 5;
    spec.test_per_class = 2;
    CHECK_THROWS_AS(build_manifest(inv, spec), ConfigError);
    spec.n_categories = 2;
    spec.samples_per_class = 100;  // needs 102 per category
    CHECK_THROWS_AS(build_manifest(inv, spec), ConfigError);
}

TEST_CASE("manifest save/load and load_split round-trip") {
    const std::string dir = scratch_dir("splits_roundtrip");
    CategoryInventory inv = synth_inventory(dir, 6, 25, 24);
    SplitSpec spec;
    spec.n_categories = 3;
    spec.samples_per_class = 15;
    spec.test_per_class = 5;
    spec.label_fraction = 0.5;
    spec.seed = 9;
    SplitManifest m = build_manifest(inv, spec);
    const std::string mpath = dir + "/manifest.json";
    m.save(mpath);
    SplitManifest loaded = SplitManifest::load(mpath);
    CHECK(loaded.to_json() == m.to_json());

    DatasetSplit split = load_split(loaded, dir);
    CHECK(split.train.size() == 45);
    CHECK(split.test_known.size() == 15);
    CHECK(split.test_unknown.size() == 15);
    CHECK(split.categories.size() == 6);

    // category ids: train/known in [0,3), unknown in [3,6)
    for (const auto& r : split.train) {
        CHECK(r.category_id >= 0);
        CHECK(r.category_id < 3);
        CHECK(r.category == split.categories[static_cast<std::size_t>(r.category_id)]);
    }
    for (const auto& r : split.test_unknown) {
        CHECK(r.category_id >= 3);
        CHECK(r.category_id < 6);
    }
    // known test categories equal train categories
    std::set<int> train_cats, known_cats;
    for (const auto& r : split.train) train_cats.insert(r.category_id);
    for (const auto& r : split.test_known) known_cats.insert(r.category_id);
    CHECK(train_cats == known_cats);
}

TEST_CASE("manifest JSON carries the documented schema") {
    const std::string dir = scratch_dir("splits_schema");
    CategoryInventory inv = synth_inventory(dir, 4, 20, 25);
    SplitSpec spec;
    spec.n_categories = 2;
    spec.samples_per_class = 10;
    spec.test_per_class = 5;
    spec.seed = 1;
    SplitManifest m = build_manifest(inv, spec);
    const std::string text = m.to_json();
    for (const char* key : {"\"seed\"", "\"label_fraction\"", "\"train_categories\"",
                            "\"unknown_categories\"", "\"records\"", "\"file\"",
                            "\"line_index\"", "\"category_id\"", "\"label_visible\"",
                            "\"split\""})
        CHECK(text.find(key) != std::string::npos);
}

}  // TEST_SUITE
