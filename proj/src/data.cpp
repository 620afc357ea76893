#include "sketchssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchssl {

std::string polarity_name(Polarity p) {
    return p == Polarity::BinaryStroke0 ? "binary_stroke0" : "gray_0_255";
}

Polarity polarity_from_name(const std::string& s) {
    if (s == "binary_stroke0") return Polarity::BinaryStroke0;
    if (s == "gray_0_255") return Polarity::Gray0To255;
    throw ConfigError("unknown polarity: " + s);
}

std::string split_part_name(SplitPart p) {
    switch (p) {
        case SplitPart::Train: return "train";
        case SplitPart::TestKnown: return "test_known";
        case SplitPart::TestUnknown: return "test_unknown";
    }
    return "?";
}

static SplitPart split_part_from_name(const std::string& s) {
    if (s == "train") return SplitPart::Train;
    if (s == "test_known") return SplitPart::TestKnown;
    if (s == "test_unknown") return SplitPart::TestUnknown;
    throw ParseError("unknown split name: " + s);
}

// ----------------------------------------------------------------- parsing

SketchRecord parse_record(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed record JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("drawing"))
        throw ParseError("record missing 'drawing' field");

    SketchRecord rec;
    if (j.contains("word") && j["word"].is_string())
        rec.category = j["word"].get<std::string>();

    const auto& drawing = j["drawing"];
    if (!drawing.is_array())
        throw StructuralError("'drawing' is not an array");
    if (drawing.empty())
        throw StructuralError("record has zero strokes");

    rec.sketch.canvas_w = 256;
    rec.sketch.canvas_h = 256;
    rec.sketch.strokes.reserve(drawing.size());
    for (const auto& js : drawing) {
        if (!js.is_array() || js.size() < 2 || !js[0].is_array() || !js[1].is_array())
            throw StructuralError("stroke is not an [xs, ys] pair");
        const auto& xs = js[0];
        const auto& ys = js[1];
        if (xs.size() != ys.size())
            throw StructuralError("stroke x/y arrays differ in length (" +
                                  std::to_string(xs.size()) + " vs " +
                                  std::to_string(ys.size()) + ")");
        if (xs.empty()) throw StructuralError("stroke has zero points");
        Stroke s;
        s.x.reserve(xs.size());
        s.y.reserve(ys.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (!xs[i].is_number() || !ys[i].is_number())
                throw StructuralError("non-numeric coordinate");
            s.x.push_back(std::clamp(xs[i].get<double>(), 0.0, 255.0));
            s.y.push_back(std::clamp(ys[i].get<double>(), 0.0, 255.0));
        }
        rec.sketch.strokes.push_back(std::move(s));
    }
    rec.label_visible = true;  // overwritten during split construction
    return rec;
}

// --------------------------------------------------------------- rasterizer

namespace {

inline void stamp(RasterSketch& img, int r, int c, int radius, float ink) {
    for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj) {
            if (di * di + dj * dj > radius * radius) continue;
            const int rr = r + di, cc = c + dj;
            if (rr < 0 || rr >= img.h || cc < 0 || cc >= img.w) continue;
            img.at(rr, cc) = ink;
        }
}

}  // namespace

RasterSketch rasterize(const StrokeSketch& sketch, int h, int w,
                       Polarity polarity, int line_width_px) {
    if (h <= 0 || w <= 0) throw ConfigError("rasterize: non-positive resolution");
    RasterSketch img;
    img.h = h;
    img.w = w;
    img.polarity = polarity;
    const float bg = polarity == Polarity::BinaryStroke0 ? 1.0f : 255.0f;
    const float ink = 0.0f;
    img.pixels.assign(static_cast<std::size_t>(h) * w, bg);

    const double sx = sketch.canvas_w > 1 ? static_cast<double>(w - 1) / (sketch.canvas_w - 1) : 0.0;
    const double sy = sketch.canvas_h > 1 ? static_cast<double>(h - 1) / (sketch.canvas_h - 1) : 0.0;
    const int width_scaled =
        std::max(1, static_cast<int>(std::lround(line_width_px * std::min(h, w) / 256.0)));
    const int radius = width_scaled / 2;  // width 2 -> radius 1, width 1 -> point

    for (const auto& s : sketch.strokes) {
        if (s.size() == 1) {
            const int c = static_cast<int>(std::lround(s.x[0] * sx));
            const int r = static_cast<int>(std::lround(s.y[0] * sy));
            stamp(img, r, c, std::max(1, radius), ink);
            continue;
        }
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const double x0 = s.x[i] * sx, y0 = s.y[i] * sy;
            const double x1 = s.x[i + 1] * sx, y1 = s.y[i + 1] * sy;
            const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
            const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
            for (int t = 0; t <= steps; ++t) {
                const double a = static_cast<double>(t) / steps;
                const int c = static_cast<int>(std::lround(x0 + a * (x1 - x0)));
                const int r = static_cast<int>(std::lround(y0 + a * (y1 - y0)));
                stamp(img, r, c, radius, ink);
            }
        }
    }
    return img;
}

// ------------------------------------------------------------------ splits

CategoryInventory scan_data_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("data dir not found: " + dir);
    CategoryInventory inv;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto path = entry.path();
        if (path.extension() != ".ndjson") continue;
        std::ifstream in(path);
        if (!in) throw IoError("cannot open " + path.string());
        int lines = 0;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++lines;
        inv[path.stem().string()] = lines;
    }
    return inv;
}

SplitManifest build_manifest(const CategoryInventory& inv, const SplitSpec& spec) {
    const int need_per_cat = spec.samples_per_class + spec.test_per_class;
    std::vector<std::string> usable;
    for (const auto& [cat, count] : inv)
        if (count >= need_per_cat) usable.push_back(cat);
    if (static_cast<int>(usable.size()) < 2 * spec.n_categories)
        throw ConfigError("need " + std::to_string(2 * spec.n_categories) +
                          " categories with >= " + std::to_string(need_per_cat) +
                          " records each, found " + std::to_string(usable.size()));
    if (spec.label_fraction != 0.0 && spec.label_fraction != 0.1 &&
        spec.label_fraction != 0.5 && spec.label_fraction != 1.0) {
        // other fractions are allowed but must be sane
        if (spec.label_fraction < 0.0 || spec.label_fraction > 1.0)
            throw ConfigError("label_fraction must be in [0,1]");
    }

    Rng rng(spec.seed);
    std::sort(usable.begin(), usable.end());  // inventory order-independent
    rng.shuffle(usable);

    SplitManifest m;
    m.seed = spec.seed;
    m.label_fraction = spec.label_fraction;
    m.label_mode = spec.label_mode;
    m.train_categories.assign(usable.begin(), usable.begin() + spec.n_categories);
    m.unknown_categories.assign(usable.begin() + spec.n_categories,
                                usable.begin() + 2 * spec.n_categories);

    const int visible_per_class =
        static_cast<int>(std::lround(spec.label_fraction * spec.samples_per_class));

    // training + known-test categories
    std::vector<std::size_t> train_slots;  // manifest indices of train records
    for (int ci = 0; ci < spec.n_categories; ++ci) {
        const std::string& cat = m.train_categories[static_cast<std::size_t>(ci)];
        const int avail = inv.at(cat);
        std::vector<int> lines = rng.sample_indices(avail, need_per_cat);
        rng.shuffle(lines);
        for (int i = 0; i < need_per_cat; ++i) {
            ManifestRecord r;
            r.file = cat + ".ndjson";
            r.line_index = lines[static_cast<std::size_t>(i)];
            r.category_id = ci;
            if (i < spec.samples_per_class) {
                r.split = SplitPart::Train;
                r.label_visible = spec.label_mode == "stratified" ? i < visible_per_class : false;
                train_slots.push_back(m.records.size());
            } else {
                r.split = SplitPart::TestKnown;
                r.label_visible = true;
            }
            m.records.push_back(std::move(r));
        }
    }
    if (spec.label_mode == "global") {
        const int total_visible = static_cast<int>(std::lround(
            spec.label_fraction * static_cast<double>(train_slots.size())));
        std::vector<int> chosen =
            rng.sample_indices(static_cast<int>(train_slots.size()), total_visible);
        for (int idx : chosen)
            m.records[train_slots[static_cast<std::size_t>(idx)]].label_visible = true;
    }

    // unknown-test categories
    for (int ci = 0; ci < spec.n_categories; ++ci) {
        const std::string& cat = m.unknown_categories[static_cast<std::size_t>(ci)];
        const int avail = inv.at(cat);
        std::vector<int> lines = rng.sample_indices(avail, spec.test_per_class);
        for (int line : lines) {
            ManifestRecord r;
            r.file = cat + ".ndjson";
            r.line_index = line;
            r.category_id = spec.n_categories + ci;
            r.label_visible = true;
            r.split = SplitPart::TestUnknown;
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

std::string SplitManifest::to_json() const {
    json j;
    j["seed"] = seed;
    j["label_fraction"] = label_fraction;
    j["label_mode"] = label_mode;
    j["train_categories"] = train_categories;
    j["unknown_categories"] = unknown_categories;
    j["config_hash"] = config_hash;
    json recs = json::array();
    for (const auto& r : records) {
        recs.push_back({{"file", r.file},
                        {"line_index", r.line_index},
                        {"category_id", r.category_id},
                        {"label_visible", r.label_visible},
                        {"split", split_part_name(r.split)}});
    }
    j["records"] = std::move(recs);
    return j.dump(2) + "\n";
}

SplitManifest SplitManifest::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed manifest: ") + e.what());
    }
    SplitManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.label_fraction = j.at("label_fraction").get<double>();
    m.label_mode = j.value("label_mode", "stratified");
    m.train_categories = j.at("train_categories").get<std::vector<std::string>>();
    m.unknown_categories = j.at("unknown_categories").get<std::vector<std::string>>();
    m.config_hash = j.value("config_hash", "");
    for (const auto& rj : j.at("records")) {
        ManifestRecord r;
        r.file = rj.at("file").get<std::string>();
        r.line_index = rj.at("line_index").get<int>();
        r.category_id = rj.at("category_id").get<int>();
        r.label_visible = rj.at("label_visible").get<bool>();
        r.split = split_part_from_name(rj.at("split").get<std::string>());
        m.records.push_back(std::move(r));
    }
    return m;
}

void SplitManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << to_json();
}

SplitManifest SplitManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

DatasetSplit load_split(const SplitManifest& manifest, const std::string& data_dir) {
    // group wanted line numbers per file so each file is read once
    std::map<std::string, std::vector<std::pair<int, std::size_t>>> wanted;
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        wanted[manifest.records[i].file].emplace_back(manifest.records[i].line_index, i);

    std::vector<SketchRecord> parsed(manifest.records.size());
    for (auto& [file, entries] : wanted) {
        std::sort(entries.begin(), entries.end());
        const fs::path path = fs::path(data_dir) / file;
        std::ifstream in(path);
        if (!in) throw IoError("cannot open data file: " + path.string());
        std::string line;
        int line_no = 0;
        std::size_t next = 0;
        while (next < entries.size() && std::getline(in, line)) {
            while (next < entries.size() && entries[next].first == line_no) {
                SketchRecord rec = parse_record(line);
                const auto& mr = manifest.records[entries[next].second];
                rec.category_id = mr.category_id;
                rec.label_visible = mr.label_visible;
                rec.source_file = file;
                rec.line_index = line_no;
                if (rec.category.empty()) {
                    rec.category = fs::path(file).stem().string();
                }
                parsed[entries[next].second] = std::move(rec);
                ++next;
            }
            ++line_no;
        }
        if (next < entries.size())
            throw IoError("data file " + path.string() + " is shorter than manifest expects");
    }

    DatasetSplit split;
    split.seed = manifest.seed;
    split.label_fraction = manifest.label_fraction;
    split.categories = manifest.train_categories;
    split.categories.insert(split.categories.end(), manifest.unknown_categories.begin(),
                            manifest.unknown_categories.end());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        switch (manifest.records[i].split) {
            case SplitPart::Train: split.train.push_back(std::move(parsed[i])); break;
            case SplitPart::TestKnown: split.test_known.push_back(std::move(parsed[i])); break;
            case SplitPart::TestUnknown: split.test_unknown.push_back(std::move(parsed[i])); break;
        }
    }
    return split;
}

std::map<int, int> visible_label_histogram(const SplitManifest& manifest) {
    std::map<int, int> hist;
    for (const auto& r : manifest.records)
        if (r.split == SplitPart::Train && r.label_visible) ++hist[r.category_id];
    return hist;
}

}  // namespace sketchssl
