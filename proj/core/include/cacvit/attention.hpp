#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cacvit/rng.hpp"
#include "cacvit/tensor.hpp"

namespace cacvit {

// Concatenated query-image and exemplar tokens. Query tokens occupy indices
// [0, m_query); exemplar tokens follow in shot order.
struct TokenSequence {
    Tensor tokens; // (m_query + k_shots*m_exemplar_each) × dim
    std::size_t m_query = 0;
    std::size_t m_exemplar_each = 0;
    std::size_t k_shots = 0;

    std::size_t exemplar_total() const { return k_shots * m_exemplar_each; }
    std::size_t total() const { return m_query + exemplar_total(); }
};

// The 2×2 block view of one attention map, one entry per head. Blocks keep
// their full-row softmax denominators; no renormalization happens on split.
struct DecoupledAttention {
    std::vector<Tensor> a_query; // M × M
    std::vector<Tensor> a_class; // M × K·M_z
    std::vector<Tensor> a_match; // K·M_z × M
    std::vector<Tensor> a_exp;   // K·M_z × K·M_z

    std::size_t heads() const { return a_query.size(); }
};

// Pre-norm transformer encoder block: x + Attn(LN(x)), then + MLP(LN(·)).
struct EncoderBlock {
    std::size_t dim = 0;
    std::size_t heads = 0;
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w_mlp1, b_mlp1; // dim -> 4*dim
    Tensor w_mlp2, b_mlp2; // 4*dim -> dim

    static EncoderBlock init(std::size_t dim, std::size_t heads, Rng& rng, Tape* tape);
    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor*>>& out);
};

struct AttentionResult {
    TokenSequence seq;
    DecoupledAttention attn;
};

// One encoder block over the full sequence. Attention logits are scaled by
// 1/sqrt(head dim). With mask_class set, the query→exemplar logits get a
// large negative offset so those softmax entries underflow to exactly zero.
AttentionResult attention_forward(const TokenSequence& seq, const EncoderBlock& block,
                                  bool mask_class = false);

// Pure slicing of per-head T×T maps into the four blocks, T = m + mz_total.
DecoupledAttention decouple(const std::vector<Tensor>& head_maps, std::size_t m,
                            std::size_t mz_total);

// Mean of a_match over heads and exemplar-token rows: one weight in [0,1] per
// query token. Requires at least one exemplar.
Tensor match_similarity(const DecoupledAttention& attn);

struct StackResult {
    TokenSequence seq;
    DecoupledAttention last;
    std::vector<DecoupledAttention> all; // populated only with retain_all
};

StackResult stack_blocks(const TokenSequence& seq, const std::vector<EncoderBlock>& blocks,
                         bool mask_class = false, bool retain_all = false);

} // namespace cacvit
