#include "sketchssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sketchssl::synth {

namespace {

struct Pose {
    double cx, cy, r, rot;  // center, radius, rotation (rad)
};

Pose draw_pose(Rng& rng) {
    Pose p;
    p.cx = rng.uniform(96.0, 160.0);
    p.cy = rng.uniform(96.0, 160.0);
    p.r = rng.uniform(55.0, 105.0);
    p.rot = rng.uniform(-0.35, 0.35);
    return p;
}

// map unit coordinates (centered at origin, radius 1) into the pose
Stroke place(const std::vector<std::pair<double, double>>& pts, const Pose& p, Rng& rng,
             double noise = 2.0) {
    Stroke s;
    const double c = std::cos(p.rot), sn = std::sin(p.rot);
    for (auto [ux, uy] : pts) {
        const double rx = ux * c - uy * sn;
        const double ry = ux * sn + uy * c;
        s.x.push_back(std::clamp(p.cx + rx * p.r + rng.normal() * noise, 0.0, 255.0));
        s.y.push_back(std::clamp(p.cy + ry * p.r + rng.normal() * noise, 0.0, 255.0));
    }
    return s;
}

std::vector<std::pair<double, double>> polygon(int n, double phase, bool close = true) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
        const double a = phase + 2.0 * M_PI * i / n;
        pts.emplace_back(std::cos(a), std::sin(a));
    }
    if (close) pts.push_back(pts.front());
    return pts;
}

std::vector<std::pair<double, double>> arc(double a0, double a1, int n,
                                           double radius = 1.0) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
        const double a = a0 + (a1 - a0) * i / (n - 1);
        pts.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    return pts;
}

std::vector<std::pair<double, double>> segment(double x0, double y0, double x1, double y1,
                                               int n = 5) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / (n - 1);
        pts.emplace_back(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
    }
    return pts;
}

}  // namespace

std::vector<std::string> shape_names() {
    return {"circle", "square",   "triangle", "star",   "cross",  "zigzag", "spiral",
            "house",  "arrow",    "sun",      "heart",  "diamond", "pentagon",
            "hexagon", "envelope", "ladder",  "tree",   "moon",   "lightning", "grid"};
}

StrokeSketch make_sketch(const std::string& shape, Rng& rng) {
    StrokeSketch sk;
    sk.canvas_w = 256;
    sk.canvas_h = 256;
    const Pose p = draw_pose(rng);

    if (shape == "circle") {
        sk.strokes.push_back(place(arc(0, 2 * M_PI, 24 + static_cast<int>(rng.uniform_int(12))), p, rng));
    } else if (shape == "square") {
        sk.strokes.push_back(place(polygon(4, M_PI / 4), p, rng));
    } else if (shape == "triangle") {
        sk.strokes.push_back(place(polygon(3, -M_PI / 2), p, rng));
    } else if (shape == "star") {
        std::vector<std::pair<double, double>> pts;
        const int spikes = 5;
        for (int i = 0; i <= 2 * spikes; ++i) {
            const double a = -M_PI / 2 + M_PI * i / spikes;
            const double r = i % 2 == 0 ? 1.0 : 0.45;
            pts.emplace_back(r * std::cos(a), r * std::sin(a));
        }
        sk.strokes.push_back(place(pts, p, rng));
    } else if (shape == "cross") {
        sk.strokes.push_back(place(segment(-1, 0, 1, 0, 7), p, rng));
        sk.strokes.push_back(place(segment(0, -1, 0, 1, 7), p, rng));
    } else if (shape == "zigzag") {
        std::vector<std::pair<double, double>> pts;
        const int teeth = 4 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i <= teeth; ++i)
            pts.emplace_back(-1.0 + 2.0 * i / teeth, i % 2 == 0 ? -0.5 : 0.5);
        sk.strokes.push_back(place(pts, p, rng));
    } else if (shape == "spiral") {
        std::vector<std::pair<double, double>> pts;
        const double turns = rng.uniform(2.2, 3.2);
        const int n = 40;
        for (int i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / (n - 1);
            const double a = 2 * M_PI * turns * t;
            pts.emplace_back(t * std::cos(a), t * std::sin(a));
        }
        sk.strokes.push_back(place(pts, p, rng));
    } else if (shape == "house") {
        sk.strokes.push_back(place({{-0.8, 0.9}, {-0.8, -0.1}, {0.8, -0.1}, {0.8, 0.9}, {-0.8, 0.9}}, p, rng));
        sk.strokes.push_back(place({{-0.9, -0.1}, {0.0, -0.9}, {0.9, -0.1}}, p, rng));
        sk.strokes.push_back(place({{-0.15, 0.9}, {-0.15, 0.3}, {0.15, 0.3}, {0.15, 0.9}}, p, rng));
    } else if (shape == "arrow") {
        sk.strokes.push_back(place(segment(-1, 0, 0.9, 0, 9), p, rng));
        sk.strokes.push_back(place({{0.4, -0.45}, {0.95, 0.0}, {0.4, 0.45}}, p, rng));
    } else if (shape == "sun") {
        sk.strokes.push_back(place(arc(0, 2 * M_PI, 20, 0.55), p, rng));
        const int rays = 6 + static_cast<int>(rng.uniform_int(4));
        for (int i = 0; i < rays; ++i) {
            const double a = 2 * M_PI * i / rays + rng.uniform(-0.1, 0.1);
            sk.strokes.push_back(place(segment(0.65 * std::cos(a), 0.65 * std::sin(a),
                                               std::cos(a), std::sin(a), 3),
                                       p, rng));
        }
    } else if (shape == "heart") {
        std::vector<std::pair<double, double>> pts;
        const int n = 30;
        for (int i = 0; i < n; ++i) {
            const double t = 2 * M_PI * i / (n - 1);
            // classic cardioid-style parametric heart, y flipped for canvas
            pts.emplace_back(std::pow(std::sin(t), 3),
                             -(0.8125 * std::cos(t) - 0.3125 * std::cos(2 * t) -
                               0.125 * std::cos(3 * t) - 0.0625 * std::cos(4 * t)));
        }
        sk.strokes.push_back(place(pts, p, rng));
    } else if (shape == "diamond") {
        sk.strokes.push_back(place(polygon(4, 0.0), p, rng));
    } else if (shape == "pentagon") {
        sk.strokes.push_back(place(polygon(5, -M_PI / 2), p, rng));
    } else if (shape == "hexagon") {
        sk.strokes.push_back(place(polygon(6, 0.0), p, rng));
    } else if (shape == "envelope") {
        sk.strokes.push_back(place({{-1, -0.6}, {1, -0.6}, {1, 0.6}, {-1, 0.6}, {-1, -0.6}}, p, rng));
        sk.strokes.push_back(place({{-1, -0.6}, {0, 0.2}, {1, -0.6}}, p, rng));
    } else if (shape == "ladder") {
        sk.strokes.push_back(place(segment(-0.4, -1, -0.4, 1, 7), p, rng));
        sk.strokes.push_back(place(segment(0.4, -1, 0.4, 1, 7), p, rng));
        const int rungs = 3 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i < rungs; ++i) {
            const double y = -0.8 + 1.6 * i / (rungs - 1);
            sk.strokes.push_back(place(segment(-0.4, y, 0.4, y, 3), p, rng));
        }
    } else if (shape == "tree") {
        sk.strokes.push_back(place({{-0.7, 0.2}, {0.0, -1.0}, {0.7, 0.2}, {-0.7, 0.2}}, p, rng));
        sk.strokes.push_back(place({{-0.12, 0.2}, {-0.12, 0.9}, {0.12, 0.9}, {0.12, 0.2}}, p, rng));
    } else if (shape == "moon") {
        auto outer = arc(-M_PI / 2, M_PI / 2, 16);
        auto inner = arc(M_PI / 2, -M_PI / 2, 16, 1.0);
        for (auto& [x, y] : inner) x = x * 0.55 + 0.35;  // offset inner arc
        std::vector<std::pair<double, double>> pts = outer;
        pts.insert(pts.end(), inner.begin(), inner.end());
        sk.strokes.push_back(place(pts, p, rng));
    } else if (shape == "lightning") {
        sk.strokes.push_back(place(
            {{0.2, -1.0}, {-0.35, 0.05}, {0.05, 0.05}, {-0.2, 1.0}, {0.45, -0.15}, {0.05, -0.15}, {0.2, -1.0}},
            p, rng));
    } else if (shape == "grid") {
        const int lines = 2 + static_cast<int>(rng.uniform_int(2));
        for (int i = 0; i <= lines; ++i) {
            const double t = -1.0 + 2.0 * i / lines;
            sk.strokes.push_back(place(segment(-1, t, 1, t, 4), p, rng));
            sk.strokes.push_back(place(segment(t, -1, t, 1, 4), p, rng));
        }
    } else {
        throw ConfigError("unknown synthetic shape: " + shape);
    }
    return sk;
}

std::string to_ndjson_line(const std::string& category, const StrokeSketch& sketch) {
    json drawing = json::array();
    for (const auto& s : sketch.strokes) {
        json xs = json::array(), ys = json::array();
        for (std::size_t i = 0; i < s.size(); ++i) {
            xs.push_back(static_cast<int>(std::lround(std::clamp(s.x[i], 0.0, 255.0))));
            ys.push_back(static_cast<int>(std::lround(std::clamp(s.y[i], 0.0, 255.0))));
        }
        drawing.push_back(json::array({std::move(xs), std::move(ys)}));
    }
    json j;
    j["word"] = category;
    j["drawing"] = std::move(drawing);
    return j.dump();
}

void write_dataset(const std::string& out_dir, int n_classes, int per_class,
                   std::uint64_t seed) {
    const auto names = shape_names();
    if (n_classes < 1 || n_classes > static_cast<int>(names.size()))
        throw ConfigError("synth: n_classes must be in [1," +
                          std::to_string(names.size()) + "]");
    fs::create_directories(out_dir);
    Rng root(seed);
    for (int c = 0; c < n_classes; ++c) {
        Rng rng = root.split(static_cast<std::uint64_t>(c) + 1);
        std::ofstream out(fs::path(out_dir) / (names[static_cast<std::size_t>(c)] + ".ndjson"));
        if (!out) throw IoError("cannot write synth dataset in " + out_dir);
        for (int i = 0; i < per_class; ++i)
            out << to_ndjson_line(names[static_cast<std::size_t>(c)],
                                  make_sketch(names[static_cast<std::size_t>(c)], rng))
                << "\n";
    }
}

}  // namespace sketchssl::synth
