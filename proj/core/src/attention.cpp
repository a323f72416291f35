#include "cacvit/attention.hpp"

#include <cmath>

#include "cacvit/errors.hpp"

namespace cacvit {

namespace {

constexpr double kLnEps = 1e-6;
// Large enough that exp(logit - rowmax) underflows to exactly 0 after the
// softmax max-subtraction, while staying finite for the checks.
constexpr double kMaskOffset = -1e30;

Tensor param(std::vector<std::size_t> shape, Rng& rng, Tape* tape, double stddev) {
    Tensor t = stddev > 0.0 ? Tensor::randn(std::move(shape), rng, stddev)
                            : Tensor::zeros(std::move(shape));
    if (tape) t.set_requires_grad(tape);
    return t;
}

Tensor ones_param(std::vector<std::size_t> shape, Tape* tape) {
    Tensor t = Tensor::full(std::move(shape), 1.0);
    if (tape) t.set_requires_grad(tape);
    return t;
}

} // namespace

EncoderBlock EncoderBlock::init(std::size_t dim, std::size_t heads, Rng& rng, Tape* tape) {
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("EncoderBlock: head count must divide the hidden dim");
    const double std = 0.02;
    EncoderBlock b;
    b.dim = dim;
    b.heads = heads;
    b.ln1_gain = ones_param({dim}, tape);
    b.ln1_bias = param({dim}, rng, tape, 0.0);
    b.wq = param({dim, dim}, rng, tape, std);
    b.bq = param({dim}, rng, tape, 0.0);
    b.wk = param({dim, dim}, rng, tape, std);
    b.bk = param({dim}, rng, tape, 0.0);
    b.wv = param({dim, dim}, rng, tape, std);
    b.bv = param({dim}, rng, tape, 0.0);
    b.wo = param({dim, dim}, rng, tape, std);
    b.bo = param({dim}, rng, tape, 0.0);
    b.ln2_gain = ones_param({dim}, tape);
    b.ln2_bias = param({dim}, rng, tape, 0.0);
    b.w_mlp1 = param({dim, 4 * dim}, rng, tape, std);
    b.b_mlp1 = param({4 * dim}, rng, tape, 0.0);
    b.w_mlp2 = param({4 * dim, dim}, rng, tape, std);
    b.b_mlp2 = param({dim}, rng, tape, 0.0);
    return b;
}

void EncoderBlock::collect_params(const std::string& prefix,
                                  std::vector<std::pair<std::string, Tensor*>>& out) {
    out.emplace_back(prefix + ".ln1.gain", &ln1_gain);
    out.emplace_back(prefix + ".ln1.bias", &ln1_bias);
    out.emplace_back(prefix + ".wq", &wq);
    out.emplace_back(prefix + ".bq", &bq);
    out.emplace_back(prefix + ".wk", &wk);
    out.emplace_back(prefix + ".bk", &bk);
    out.emplace_back(prefix + ".wv", &wv);
    out.emplace_back(prefix + ".bv", &bv);
    out.emplace_back(prefix + ".wo", &wo);
    out.emplace_back(prefix + ".bo", &bo);
    out.emplace_back(prefix + ".ln2.gain", &ln2_gain);
    out.emplace_back(prefix + ".ln2.bias", &ln2_bias);
    out.emplace_back(prefix + ".mlp1.w", &w_mlp1);
    out.emplace_back(prefix + ".mlp1.b", &b_mlp1);
    out.emplace_back(prefix + ".mlp2.w", &w_mlp2);
    out.emplace_back(prefix + ".mlp2.b", &b_mlp2);
}

AttentionResult attention_forward(const TokenSequence& seq, const EncoderBlock& block,
                                  bool mask_class) {
    const std::size_t t = seq.total();
    const std::size_t d = block.dim;
    if (seq.tokens.rank() != 2 || seq.tokens.dim(0) != t || seq.tokens.dim(1) != d)
        throw DimensionError("attention_forward: token tensor does not match sequence layout");
    const std::size_t dh = d / block.heads;
    const std::size_t m = seq.m_query;
    const std::size_t mz = seq.exemplar_total();

    const Tensor& x = seq.tokens;
    Tensor n1 = layer_norm(x, block.ln1_gain, block.ln1_bias, kLnEps);
    Tensor q = add_rowvec(matmul(n1, block.wq), block.bq);
    Tensor k = add_rowvec(matmul(n1, block.wk), block.bk);
    Tensor v = add_rowvec(matmul(n1, block.wv), block.bv);

    Tensor class_mask; // additive, constant, off-tape
    if (mask_class && mz > 0) {
        class_mask = Tensor::zeros({t, t});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = m; j < t; ++j) (*class_mask.data)[i * t + j] = kMaskOffset;
    }

    std::vector<Tensor> head_maps;
    std::vector<Tensor> head_outs;
    head_maps.reserve(block.heads);
    head_outs.reserve(block.heads);
    for (std::size_t hidx = 0; hidx < block.heads; ++hidx) {
        const std::pair<std::size_t, std::size_t> cols{hidx * dh, (hidx + 1) * dh};
        Tensor qh = slice(q, {{0, t}, cols});
        Tensor kh = slice(k, {{0, t}, cols});
        Tensor vh = slice(v, {{0, t}, cols});
        Tensor logits = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (class_mask.data) logits = add(logits, class_mask);
        Tensor att = softmax_rows(logits);
        head_maps.push_back(att);
        head_outs.push_back(matmul(att, vh));
    }

    Tensor merged = block.heads == 1 ? head_outs[0] : concat(head_outs, 1);
    Tensor att_out = add_rowvec(matmul(merged, block.wo), block.bo);
    Tensor x2 = add(x, att_out);

    Tensor n2 = layer_norm(x2, block.ln2_gain, block.ln2_bias, kLnEps);
    Tensor hidden = gelu(add_rowvec(matmul(n2, block.w_mlp1), block.b_mlp1));
    Tensor mlp_out = add_rowvec(matmul(hidden, block.w_mlp2), block.b_mlp2);
    Tensor y = add(x2, mlp_out);

    AttentionResult result;
    result.seq = TokenSequence{y, seq.m_query, seq.m_exemplar_each, seq.k_shots};
    result.attn = decouple(head_maps, m, mz);
    return result;
}

DecoupledAttention decouple(const std::vector<Tensor>& head_maps, std::size_t m,
                            std::size_t mz_total) {
    DecoupledAttention out;
    const std::size_t t = m + mz_total;
    for (const Tensor& map : head_maps) {
        if (map.rank() != 2 || map.dim(0) != t || map.dim(1) != t)
            throw DimensionError("decouple: attention map does not match m + mz_total");
        out.a_query.push_back(slice(map, {{0, m}, {0, m}}));
        out.a_class.push_back(slice(map, {{0, m}, {m, t}}));
        out.a_match.push_back(slice(map, {{m, t}, {0, m}}));
        out.a_exp.push_back(slice(map, {{m, t}, {m, t}}));
    }
    return out;
}

Tensor match_similarity(const DecoupledAttention& attn) {
    if (attn.heads() == 0) throw DimensionError("match_similarity: no attention heads");
    const std::size_t mz = attn.a_match[0].dim(0);
    const std::size_t m = attn.a_match[0].dim(1);
    if (mz == 0) throw DimensionError("match_similarity: no exemplar tokens (K = 0)");
    const Tensor ones = Tensor::full({1, mz}, 1.0);
    Tensor acc;
    for (const Tensor& am : attn.a_match) {
        Tensor col_mean = scale(matmul(ones, am), 1.0 / static_cast<double>(mz)); // 1×M
        acc = acc.data ? add(acc, col_mean) : col_mean;
    }
    return reshape(scale(acc, 1.0 / static_cast<double>(attn.heads())), {m});
}

StackResult stack_blocks(const TokenSequence& seq, const std::vector<EncoderBlock>& blocks,
                         bool mask_class, bool retain_all) {
    if (blocks.empty()) throw ConfigError("stack_blocks: empty block list");
    StackResult result;
    result.seq = seq;
    for (const EncoderBlock& block : blocks) {
        AttentionResult step = attention_forward(result.seq, block, mask_class);
        result.seq = step.seq;
        result.last = step.attn;
        if (retain_all) result.all.push_back(std::move(step.attn));
    }
    return result;
}

} // namespace cacvit
