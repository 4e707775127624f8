#include "twinspect/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace twinspect {

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            tok.push_back(char(c));
            while ((c = is.peek()) != EOF && !std::isspace(c) && c != '#') tok.push_back(char(is.get()));
            return tok;
        }
    }
    return tok;
}

int parse_int(std::istream& is, const std::string& what, const std::string& path) {
    std::string tok = next_token(is);
    if (tok.empty()) throw ImageFormatError("truncated header (" + what + "): " + path);
    return std::stoi(tok);
}

}  // namespace

void write_pgm(const std::string& path, const ImageF& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ImageFormatError("cannot open for write: " + path);
    os << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float v = img.at(x, y);
            int q = int(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            row[size_t(x)] = static_cast<unsigned char>(q);
        }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw ImageFormatError("write failed: " + path);
}

ImageF read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ImageFormatError("cannot open: " + path);
    std::string magic = next_token(is);
    if (magic != "P5") throw ImageFormatError("not a binary PGM: " + path);
    int w = parse_int(is, "width", path);
    int h = parse_int(is, "height", path);
    int maxval = parse_int(is, "maxval", path);
    is.get();  // single whitespace after maxval
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ImageFormatError("unsupported PGM geometry in " + path);
    ImageF img(w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
            throw ImageFormatError("truncated pixel data: " + path);
        for (int x = 0; x < w; ++x) img.at(x, y) = float(row[size_t(x)]) / 255.0f;
    }
    return img;
}

void write_pgm16(const std::string& path, const ImageF& img, float lo, float hi) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ImageFormatError("cannot open for write: " + path);
    os << "P5\n" << img.width << " " << img.height << "\n65535\n";
    const float range = hi > lo ? hi - lo : 1.0f;
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 2);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            float t = (img.at(x, y) - lo) / range;
            int q = int(std::lround(std::clamp(t, 0.0f, 1.0f) * 65535.0f));
            row[size_t(x) * 2] = static_cast<unsigned char>(q >> 8);
            row[size_t(x) * 2 + 1] = static_cast<unsigned char>(q & 0xff);
        }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw ImageFormatError("write failed: " + path);
}

ImageF read_pgm16(const std::string& path, float lo, float hi) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ImageFormatError("cannot open: " + path);
    std::string magic = next_token(is);
    if (magic != "P5") throw ImageFormatError("not a binary PGM: " + path);
    int w = parse_int(is, "width", path);
    int h = parse_int(is, "height", path);
    int maxval = parse_int(is, "maxval", path);
    is.get();
    if (w <= 0 || h <= 0 || maxval != 65535)
        throw ImageFormatError("expected 16-bit PGM in " + path);
    ImageF img(w, h);
    const float range = hi > lo ? hi - lo : 1.0f;
    std::vector<unsigned char> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
            throw ImageFormatError("truncated pixel data: " + path);
        for (int x = 0; x < w; ++x) {
            int q = (int(row[size_t(x) * 2]) << 8) | int(row[size_t(x) * 2 + 1]);
            img.at(x, y) = lo + float(q) / 65535.0f * range;
        }
    }
    return img;
}

void write_pbm(const std::string& path, const Mask& mask) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ImageFormatError("cannot open for write: " + path);
    os << "P4\n" << mask.width << " " << mask.height << "\n";
    const int stride = (mask.width + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(stride));
    for (int y = 0; y < mask.height; ++y) {
        std::fill(row.begin(), row.end(), 0);
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) row[size_t(x) / 8] |= static_cast<unsigned char>(0x80u >> (x % 8));
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw ImageFormatError("write failed: " + path);
}

Mask read_pbm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ImageFormatError("cannot open: " + path);
    std::string magic = next_token(is);
    if (magic != "P4") throw ImageFormatError("not a binary PBM: " + path);
    int w = parse_int(is, "width", path);
    int h = parse_int(is, "height", path);
    is.get();
    if (w <= 0 || h <= 0) throw ImageFormatError("bad PBM geometry in " + path);
    Mask mask(w, h);
    const int stride = (w + 7) / 8;
    std::vector<unsigned char> row(static_cast<size_t>(stride));
    for (int y = 0; y < h; ++y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size())))
            throw ImageFormatError("truncated mask data: " + path);
        for (int x = 0; x < w; ++x)
            mask.at(x, y) = (row[size_t(x) / 8] >> (7 - x % 8)) & 1u;
    }
    return mask;
}

ImageF bilinear_upsample(const ImageF& grid, int out_w, int out_h) {
    ImageF out(out_w, out_h);
    const double sx = double(out_w) / grid.width;
    const double sy = double(out_h) / grid.height;
    for (int y = 0; y < out_h; ++y) {
        // Map output pixel center onto grid cell-center coordinates.
        double gy = (y + 0.5) / sy - 0.5;
        int y0 = int(std::floor(gy));
        double fy = gy - y0;
        int y0c = std::clamp(y0, 0, grid.height - 1);
        int y1c = std::clamp(y0 + 1, 0, grid.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double gx = (x + 0.5) / sx - 0.5;
            int x0 = int(std::floor(gx));
            double fx = gx - x0;
            int x0c = std::clamp(x0, 0, grid.width - 1);
            int x1c = std::clamp(x0 + 1, 0, grid.width - 1);
            double v = (1 - fy) * ((1 - fx) * grid.at(x0c, y0c) + fx * grid.at(x1c, y0c)) +
                       fy * ((1 - fx) * grid.at(x0c, y1c) + fx * grid.at(x1c, y1c));
            out.at(x, y) = float(v);
        }
    }
    return out;
}

}  // namespace twinspect
