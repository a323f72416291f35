#include "cacvit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cacvit/errors.hpp"

namespace cacvit {

Image::Image(int w, int h, int c) : width(w), height(h), channels(c) {
    if (w < 1 || h < 1 || c < 1) throw DimensionError("Image: dims must be >= 1");
    data.assign(static_cast<std::size_t>(w) * h * c, 0.0);
}

DensityMap::DensityMap(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw DimensionError("DensityMap: dims must be >= 1");
    data.assign(static_cast<std::size_t>(w) * h, 0.0);
}

double DensityMap::sum() const {
    double s = 0.0;
    for (const double v : data) s += v;
    return s;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    if (img.width < 1 || img.height < 1) throw DimensionError("resize_bilinear: empty input");
    if (out_w < 1 || out_h < 1) throw DimensionError("resize_bilinear: output dims must be >= 1");
    Image out(out_w, out_h, img.channels);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1.0 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
                const double bot = (1.0 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
                out.at(ox, oy, c) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Image crop(const Image& img, int x, int y, int w, int h) {
    if (w < 1 || h < 1) throw DimensionError("crop: empty rectangle");
    Image out(w, h, img.channels);
    for (int oy = 0; oy < h; ++oy) {
        const int sy = std::clamp(y + oy, 0, img.height - 1);
        for (int ox = 0; ox < w; ++ox) {
            const int sx = std::clamp(x + ox, 0, img.width - 1);
            for (int c = 0; c < img.channels; ++c) out.at(ox, oy, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

Tensor patchify(const Image& img, int patch) {
    if (patch < 1 || img.width % patch != 0 || img.height % patch != 0)
        throw DimensionError("patchify: patch size must divide both image dims");
    const int gx = img.width / patch, gy = img.height / patch;
    const std::size_t tokens = static_cast<std::size_t>(gx) * gy;
    const std::size_t token_dim = static_cast<std::size_t>(patch) * patch * img.channels;
    Tensor out = Tensor::zeros({tokens, token_dim});
    std::size_t t = 0;
    for (int py = 0; py < gy; ++py)
        for (int px = 0; px < gx; ++px, ++t) {
            std::size_t k = 0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < img.channels; ++c, ++k)
                        (*out.data)[t * token_dim + k] = img.at(px * patch + x, py * patch + y, c);
        }
    return out;
}

Image unpatchify(const Tensor& tokens, int width, int height, int channels, int patch) {
    const int gx = width / patch, gy = height / patch;
    const std::size_t token_dim = static_cast<std::size_t>(patch) * patch * channels;
    if (tokens.rank() != 2 || tokens.dim(0) != static_cast<std::size_t>(gx) * gy ||
        tokens.dim(1) != token_dim)
        throw DimensionError("unpatchify: token tensor does not match target geometry");
    Image out(width, height, channels);
    std::size_t t = 0;
    for (int py = 0; py < gy; ++py)
        for (int px = 0; px < gx; ++px, ++t) {
            std::size_t k = 0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < channels; ++c, ++k)
                        out.at(px * patch + x, py * patch + y, c) = (*tokens.data)[t * token_dim + k];
        }
    return out;
}

DensityMap render_density(int w, int h, const std::vector<std::pair<double, double>>& centers,
                          double sigma) {
    if (sigma <= 0.0) throw DimensionError("render_density: sigma must be positive");
    DensityMap map(w, h);
    std::vector<double> blob(map.data.size());
    for (const auto& [cx, cy] : centers) {
        if (cx < 0.0 || cy < 0.0 || cx > w - 1.0 || cy > h - 1.0)
            throw DimensionError("render_density: center outside canvas");
        double mass = 0.0;
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double v = std::exp(-d2 * inv2s2);
                blob[static_cast<std::size_t>(y) * w + x] = v;
                mass += v;
            }
        for (std::size_t i = 0; i < blob.size(); ++i) map.data[i] += blob[i] / mass;
    }
    return map;
}

// --- file formats ---------------------------------------------------------

namespace {

constexpr char kDensityMagic[4] = {'C', 'V', 'D', 'M'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("unexpected end of file reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_cvdm(const std::string& path, int w, int h, const std::vector<double>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kDensityMagic, 4);
    put_u32(os, static_cast<std::uint32_t>(w));
    put_u32(os, static_cast<std::uint32_t>(h));
    for (const double v : values) put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed: " + path);
}

std::vector<double> read_cvdm(const std::string& path, int& w, int& h) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kDensityMagic, 4) != 0)
        throw FormatError("bad CVDM magic in " + path);
    w = static_cast<int>(get_u32(is));
    h = static_cast<int>(get_u32(is));
    if (w < 1 || h < 1) throw FormatError("bad CVDM dims in " + path);
    std::vector<double> values(static_cast<std::size_t>(w) * h);
    for (double& v : values) v = static_cast<double>(get_f32(is));
    return values;
}

} // namespace

void write_density(const std::string& path, const DensityMap& map) {
    write_cvdm(path, map.width, map.height, map.data);
}

DensityMap read_density(const std::string& path) {
    DensityMap map;
    map.data = read_cvdm(path, map.width, map.height);
    return map;
}

void write_image_cvdm(const std::string& path, const Image& img) {
    if (img.channels != 1) throw DimensionError("write_image_cvdm: single-channel images only");
    write_cvdm(path, img.width, img.height, img.data);
}

Image read_image_cvdm(const std::string& path) {
    int w = 0, h = 0;
    std::vector<double> values = read_cvdm(path, w, h);
    Image img(w, h, 1);
    img.data = std::move(values);
    return img;
}

void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values) {
    if (values.size() != static_cast<std::size_t>(width) * height)
        throw DimensionError("write_pgm: value count does not match dims");
    double lo = values.empty() ? 0.0 : values[0], hi = lo;
    for (const double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    for (const double v : values) {
        const int q = range > 0.0 ? static_cast<int>(std::lround((v - lo) / range * 255.0)) : 0;
        os.put(static_cast<char>(std::clamp(q, 0, 255)));
    }
    if (!os) throw IoError("write failed: " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw FormatError("bad PGM magic in " + path);
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    is.get(); // single whitespace before raster
    if (!is || w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw FormatError("bad PGM header in " + path);
    Image img(w, h, 1);
    std::vector<char> raw(static_cast<std::size_t>(w) * h);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!is) throw FormatError("truncated PGM raster in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.data[i] = static_cast<double>(static_cast<unsigned char>(raw[i])) / maxval;
    return img;
}

} // namespace cacvit
