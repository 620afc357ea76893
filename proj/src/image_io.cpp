#include "sketchssl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <png.h>

#include "sketchssl/augment.hpp"

namespace sketchssl {

namespace {

RasterSketch read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P2" && magic != "P5") throw ParseError("not a PGM file: " + path);
    auto next_token = [&in]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw ParseError("truncated PGM header");
    };
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw ParseError("bad PGM dimensions");
    RasterSketch img;
    img.h = h;
    img.w = w;
    img.polarity = Polarity::Gray0To255;
    img.pixels.resize(static_cast<std::size_t>(h) * w);
    const double scale = 255.0 / maxval;
    if (magic == "P2") {
        for (auto& p : img.pixels) {
            int v;
            if (!(in >> v)) throw ParseError("truncated PGM data");
            p = static_cast<float>(std::clamp(v * scale, 0.0, 255.0));
        }
    } else {
        in.get();  // single whitespace after maxval
        const int bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(img.pixels.size() * static_cast<std::size_t>(bytes));
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!in) throw ParseError("truncated PGM data");
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
            img.pixels[i] = static_cast<float>(std::clamp(v * scale, 0.0, 255.0));
        }
    }
    return img;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

RasterSketch read_png(const std::string& path) {
    PngReadCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw IoError("cannot open image: " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw ParseError("not a PNG file: " + path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw IoError("png init failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw IoError("png info init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw ParseError("png decode failed: " + path);
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    png_set_strip_16(ctx.png);
    png_set_strip_alpha(ctx.png);
    png_set_palette_to_rgb(ctx.png);
    png_set_expand_gray_1_2_4_to_8(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    const int channels = png_get_channels(ctx.png, ctx.info);
    std::vector<unsigned char> data(static_cast<std::size_t>(h) * w * channels);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int r = 0; r < h; ++r)
        rows[static_cast<std::size_t>(r)] = data.data() + static_cast<std::size_t>(r) * w * channels;
    png_read_image(ctx.png, rows.data());

    RasterSketch img;
    img.h = h;
    img.w = w;
    img.polarity = Polarity::Gray0To255;
    img.pixels.resize(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (channels >= 3) {
            const double lum = 0.299 * data[i * channels] + 0.587 * data[i * channels + 1] +
                               0.114 * data[i * channels + 2];
            img.pixels[i] = static_cast<float>(lum);
        } else {
            img.pixels[i] = static_cast<float>(data[i * channels]);
        }
    }
    return img;
}

}  // namespace

RasterSketch read_gray_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open image: " + path);
    char head[2] = {0, 0};
    probe.read(head, 2);
    probe.close();
    if (head[0] == 'P' && (head[1] == '2' || head[1] == '5')) return read_pgm(path);
    return read_png(path);
}

void write_pgm(const RasterSketch& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    const float scale = img.polarity == Polarity::BinaryStroke0 ? 255.0f : 1.0f;
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w));
    for (int r = 0; r < img.h; ++r) {
        for (int c = 0; c < img.w; ++c)
            row[static_cast<std::size_t>(c)] = static_cast<unsigned char>(
                std::clamp(img.at(r, c) * scale, 0.0f, 255.0f));
        out.write(reinterpret_cast<const char*>(row.data()), img.w);
    }
}

RasterSketch normalize_edge_map(const RasterSketch& img, int resolution, Polarity target) {
    RasterSketch gray = img;
    gray.polarity = Polarity::Gray0To255;
    double mean = 0.0;
    for (float p : gray.pixels) mean += p;
    mean /= static_cast<double>(gray.pixels.size());
    if (mean < 128.0) {  // edges light on dark -> invert to dark-on-light
        for (auto& p : gray.pixels) p = 255.0f - p;
    }
    RasterSketch resized = resize_raster(gray, resolution, resolution);
    if (target == Polarity::Gray0To255) return resized;
    RasterSketch bin;
    bin.h = resized.h;
    bin.w = resized.w;
    bin.polarity = Polarity::BinaryStroke0;
    bin.pixels.resize(resized.pixels.size());
    for (std::size_t i = 0; i < resized.pixels.size(); ++i)
        bin.pixels[i] = resized.pixels[i] < 128.0f ? 0.0f : 1.0f;
    return bin;
}

RasterSketch contact_sheet(const std::vector<RasterSketch>& tiles, int columns) {
    if (tiles.empty()) throw ConfigError("contact_sheet: no tiles");
    const int th = tiles[0].h, tw = tiles[0].w;
    columns = std::max(1, std::min<int>(columns, static_cast<int>(tiles.size())));
    const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
    const int margin = 2;
    RasterSketch sheet;
    sheet.polarity = Polarity::Gray0To255;
    sheet.h = rows * (th + margin) + margin;
    sheet.w = columns * (tw + margin) + margin;
    sheet.pixels.assign(static_cast<std::size_t>(sheet.h) * sheet.w, 128.0f);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const auto& tile = tiles[t];
        if (tile.h != th || tile.w != tw)
            throw ConfigError("contact_sheet: tiles differ in size");
        const float scale = tile.polarity == Polarity::BinaryStroke0 ? 255.0f : 1.0f;
        const int r0 = margin + static_cast<int>(t) / columns * (th + margin);
        const int c0 = margin + static_cast<int>(t) % columns * (tw + margin);
        for (int r = 0; r < th; ++r)
            for (int c = 0; c < tw; ++c)
                sheet.at(r0 + r, c0 + c) = tile.at(r, c) * scale;
    }
    return sheet;
}

}  // namespace sketchssl
