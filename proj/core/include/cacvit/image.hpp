#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cacvit/tensor.hpp"

namespace cacvit {

// Row-major float image, channel fastest-varying: data[(y*width+x)*channels+c].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c);

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct DensityMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    DensityMap() = default;
    DensityMap(int w, int h);

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    double sum() const;
};

// Half-pixel-center bilinear resample; channel count preserved.
Image resize_bilinear(const Image& img, int out_w, int out_h);

// Crop the axis-aligned integer rectangle [x,x+w)×[y,y+h), clamped to bounds.
Image crop(const Image& img, int x, int y, int w, int h);

// Non-overlapping P×P patches, left-to-right then top-to-bottom; within a
// patch pixels are row-major with channels fastest. Result: (H/P·W/P)×(P²·C).
Tensor patchify(const Image& img, int patch);
Image unpatchify(const Tensor& tokens, int width, int height, int channels, int patch);

// Sum of per-object Gaussians, each renormalized over the canvas so every
// center contributes exactly 1.0 of total mass.
DensityMap render_density(int w, int h, const std::vector<std::pair<double, double>>& centers,
                          double sigma);

// Binary density container: "CVDM", u32 LE width, u32 LE height, then
// width*height f32 LE values, row-major.
void write_density(const std::string& path, const DensityMap& map);
DensityMap read_density(const std::string& path);

// Same container for single-channel images.
void write_image_cvdm(const std::string& path, const Image& img);
Image read_image_cvdm(const std::string& path);

// Binary PGM (P5, maxval 255), min-max scaled to 8 bit; a flat input maps to 0.
void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values);
Image read_pgm(const std::string& path);

} // namespace cacvit
