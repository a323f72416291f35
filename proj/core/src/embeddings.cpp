#include "cacvit/embeddings.hpp"

#include "cacvit/errors.hpp"

namespace cacvit {

namespace {

// Inclusive linspace 0..end over n points; a single point collapses to `end`
// so the size signal survives degenerate grids.
std::vector<double> ramp(double end, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    if (n == 1) {
        v[0] = end;
        return v;
    }
    for (int i = 0; i < n; ++i) v[i] = end * static_cast<double>(i) / (n - 1);
    return v;
}

} // namespace

Tensor scale_embedding(int orig_w, int orig_h, int out_w, int out_h, double normalizer) {
    if (orig_w < 1 || orig_h < 1 || out_w < 1 || out_h < 1)
        throw DimensionError("scale_embedding: all dims must be >= 1");
    if (normalizer <= 0.0) throw DimensionError("scale_embedding: normalizer must be positive");
    const std::vector<double> wk = ramp(orig_w, out_w);
    const std::vector<double> hk = ramp(orig_h, out_h);
    Tensor se = Tensor::zeros({static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w)});
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            (*se.data)[static_cast<std::size_t>(y) * out_w + x] = (wk[x] + hk[y]) / normalizer;
    return se;
}

Exemplar attach_se(const Image& resized, int orig_w, int orig_h, double normalizer) {
    if (orig_w < 1 || orig_h < 1) throw DimensionError("attach_se: original dims must be >= 1");
    Exemplar ex;
    ex.orig_w = orig_w;
    ex.orig_h = orig_h;
    ex.pixels = resized;
    ex.se = scale_embedding(orig_w, orig_h, resized.width, resized.height, normalizer);
    return ex;
}

MagnitudeEmbedding magnitude_embedding(const std::vector<Exemplar>& exemplars, int patch_w,
                                       int patch_h) {
    if (exemplars.empty()) throw DimensionError("magnitude_embedding: need at least one exemplar");
    double acc = 0.0;
    for (const Exemplar& ex : exemplars) {
        if (ex.orig_w < 1 || ex.orig_h < 1)
            throw DimensionError("magnitude_embedding: zero-area exemplar");
        acc += static_cast<double>(patch_w) * patch_h /
               (static_cast<double>(ex.orig_w) * ex.orig_h);
    }
    return MagnitudeEmbedding{acc / static_cast<double>(exemplars.size())};
}

Tensor apply_me(const Tensor& similarity, MagnitudeEmbedding me) {
    return scale(similarity, me.value);
}

} // namespace cacvit
