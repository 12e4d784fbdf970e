#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "slowdef/errors.hpp"
#include "slowdef/version.hpp"

namespace slowdef {

/// 2D raster of phase (radians) or displacement/delay (meters) with a
/// per-pixel validity mask. Row-major, square pixels.
///
/// Values are held as double in memory. The FGR file format stores IEEE-754
/// binary32, so write/read round trips are bit-exact for grids whose values
/// are binary32-representable; masked pixels serialize as NaN and come back
/// as (mask=false, value=0).
struct PhaseGrid {
    int rows = 0;
    int cols = 0;
    double pixel_spacing_m = 1.0;
    std::vector<double> values;
    std::vector<uint8_t> mask;  // 1 = valid, 0 = incoherent/missing

    PhaseGrid() = default;

    PhaseGrid(int r, int c, double spacing, double fill = 0.0) {
        if (r <= 0 || c <= 0)
            throw DomainError("PhaseGrid: rows and cols must be positive (got " +
                              std::to_string(r) + "x" + std::to_string(c) + ")");
        if (!(spacing > 0.0))
            throw DomainError("PhaseGrid: pixel_spacing_m must be positive");
        rows = r;
        cols = c;
        pixel_spacing_m = spacing;
        values.assign(static_cast<size_t>(r) * static_cast<size_t>(c), fill);
        mask.assign(values.size(), 1);
    }

    size_t size() const { return values.size(); }
    size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
    double& at(int r, int c) { return values[idx(r, c)]; }
    double at(int r, int c) const { return values[idx(r, c)]; }
    bool valid(int r, int c) const { return mask[idx(r, c)] != 0; }

    bool same_shape(const PhaseGrid& o) const { return rows == o.rows && cols == o.cols; }
};

/// 8-bit grayscale image, row-major.
struct GrayImage {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int r, int c, uint8_t fill = 0)
        : rows(r), cols(c), pixels(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
        if (r <= 0 || c <= 0) throw DomainError("GrayImage: rows and cols must be positive");
    }

    size_t idx(int r, int c) const { return static_cast<size_t>(r) * cols + c; }
    uint8_t& at(int r, int c) { return pixels[idx(r, c)]; }
    uint8_t at(int r, int c) const { return pixels[idx(r, c)]; }
};

// ---------------------------------------------------------------------------
// FGR raster format
//
//   one ASCII header line:  "FGR1 <rows> <cols> <pixel_spacing_m>\n"
//   payload:                rows*cols little-endian IEEE-754 binary32,
//                           row-major; NaN encodes a missing pixel.
// ---------------------------------------------------------------------------

namespace detail {

inline float le_bytes_to_float(const unsigned char b[4]) {
    const uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                       (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(u);
}

inline void float_to_le_bytes(float f, unsigned char b[4]) {
    const uint32_t u = std::bit_cast<uint32_t>(f);
    b[0] = static_cast<unsigned char>(u & 0xff);
    b[1] = static_cast<unsigned char>((u >> 8) & 0xff);
    b[2] = static_cast<unsigned char>((u >> 16) & 0xff);
    b[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

}  // namespace detail

inline PhaseGrid read_fgr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_fgr: cannot open '" + path + "'");

    std::string header;
    if (!std::getline(in, header))
        throw FormatError("read_fgr: missing header line in '" + path + "'");
    std::istringstream hs(header);
    std::string magic;
    hs >> magic;
    if (magic != kFgrMagic)
        throw FormatError("read_fgr: bad magic '" + magic + "' in '" + path +
                          "' (field: magic, expected FGR1)");
    long long rows = 0, cols = 0;
    double spacing = 0.0;
    if (!(hs >> rows) || rows <= 0)
        throw FormatError("read_fgr: invalid header field 'rows' in '" + path +
                          "' (must be a positive integer)");
    if (!(hs >> cols) || cols <= 0)
        throw FormatError("read_fgr: invalid header field 'cols' in '" + path +
                          "' (must be a positive integer)");
    if (!(hs >> spacing) || !(spacing > 0.0) || !std::isfinite(spacing))
        throw FormatError("read_fgr: invalid header field 'pixel_spacing_m' in '" + path +
                          "' (must be a positive real)");
    std::string trailing;
    if (hs >> trailing)
        throw FormatError("read_fgr: unexpected trailing token '" + trailing +
                          "' in header of '" + path + "'");

    PhaseGrid g(static_cast<int>(rows), static_cast<int>(cols), spacing);
    const size_t n = g.size();
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size())
        throw FormatError("read_fgr: truncated payload in '" + path + "': expected " +
                          std::to_string(raw.size()) + " bytes, got " +
                          std::to_string(in.gcount()));
    for (size_t i = 0; i < n; ++i) {
        const float f = detail::le_bytes_to_float(&raw[i * 4]);
        if (std::isnan(f)) {
            g.values[i] = 0.0;
            g.mask[i] = 0;
        } else {
            g.values[i] = static_cast<double>(f);
            g.mask[i] = 1;
        }
    }
    return g;
}

inline void write_fgr(const PhaseGrid& g, const std::string& path) {
    if (g.rows <= 0 || g.cols <= 0 || g.values.size() != g.size() || g.mask.size() != g.size())
        throw DomainError("write_fgr: grid violates its invariants");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_fgr: cannot open '" + path + "' for writing");

    char header[96];
    std::snprintf(header, sizeof(header), "%s %d %d %.17g\n", kFgrMagic, g.rows, g.cols,
                  g.pixel_spacing_m);
    out << header;

    std::vector<unsigned char> raw(g.size() * 4);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    for (size_t i = 0; i < g.size(); ++i) {
        const float f = g.mask[i] ? static_cast<float>(g.values[i]) : nan;
        detail::float_to_le_bytes(f, &raw[i * 4]);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write_fgr: write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Grayscale conversion
// ---------------------------------------------------------------------------

/// Maps wrapped phase in [-pi, pi) linearly to [0, 255]:
/// pixel = round(255 * (psi + pi) / (2*pi)), rounding half away from zero.
/// Masked pixels map to 0. A valid value outside [-pi, pi) is a domain error.
inline GrayImage to_gray(const PhaseGrid& g) {
    GrayImage img(g.rows, g.cols);
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const size_t i = g.idx(r, c);
            if (!g.mask[i]) {
                img.pixels[i] = 0;
                continue;
            }
            const double psi = g.values[i];
            if (!(psi >= -M_PI && psi < M_PI))
                throw DomainError("to_gray: value " + std::to_string(psi) + " at (" +
                                  std::to_string(r) + "," + std::to_string(c) +
                                  ") outside wrapped range [-pi, pi)");
            const long p = std::lround(255.0 * (psi + M_PI) / (2.0 * M_PI));
            img.pixels[i] = static_cast<uint8_t>(p);
        }
    }
    return img;
}

/// Binary PGM (P5) export, maxval 255.
inline void write_pgm(const GrayImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open '" + path + "' for writing");
    out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write_pgm: write failed for '" + path + "'");
}

}  // namespace slowdef
