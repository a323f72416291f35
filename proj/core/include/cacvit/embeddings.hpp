#pragma once

#include <vector>

#include "cacvit/image.hpp"
#include "cacvit/tensor.hpp"

namespace cacvit {

// Resized exemplar patch plus the scale-embedding plane carrying its original
// geometry.
struct Exemplar {
    int orig_w = 0;
    int orig_h = 0;
    Image pixels;     // W_z × H_z, original channel count
    Tensor se;        // [H_z × W_z] appended plane
};

// Width ramp 0..orig_w resampled to out_w columns plus height ramp 0..orig_h
// resampled to out_h rows, summed and divided by `normalizer`. Endpoints are
// inclusive, so the corner values carry the original size.
Tensor scale_embedding(int orig_w, int orig_h, int out_w, int out_h, double normalizer);

Exemplar attach_se(const Image& resized, int orig_w, int orig_h, double normalizer);

// Mean patch-capacity ratio (patch area over original exemplar area).
struct MagnitudeEmbedding {
    double value = 1.0;
};

MagnitudeEmbedding magnitude_embedding(const std::vector<Exemplar>& exemplars, int patch_w,
                                       int patch_h);

Tensor apply_me(const Tensor& similarity, MagnitudeEmbedding me);

} // namespace cacvit
