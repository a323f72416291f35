#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cacvit/attention.hpp"
#include "cacvit/embeddings.hpp"
#include "cacvit/image.hpp"
#include "cacvit/tensor.hpp"

namespace cacvit {

struct ModelConfig {
    int image_size = 64;
    int patch = 8;
    int exemplar_w = 16;
    int exemplar_h = 16;
    int exemplar_patch = 8;
    int depth = 4;
    int dim = 64;
    int heads = 4;
    int extra_depth = 2;
    int extra_dim = 48;
    int decoder_dim = 32;
    int k_shots = 3;
    int channels = 1;
    bool use_cls = true;
    bool use_se = true;
    bool use_me = true;
    std::uint64_t seed = 0;

    void validate() const;

    int query_tokens() const { return (image_size / patch) * (image_size / patch); }
    int exemplar_tokens() const {
        return (exemplar_w / exemplar_patch) * (exemplar_h / exemplar_patch);
    }
    int decoder_stages() const; // log2(patch)

    std::map<std::string, std::string> to_kv() const;
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv);

    // 384/16 input, 64×64 exemplars, 12×768×12 encoder, 3 extra blocks at 512,
    // 256-dim decoder.
    static ModelConfig reference();
};

struct Box {
    double x = 0, y = 0, w = 0, h = 0;
};

struct ModelOutput {
    DensityMap density;
    double count = 0.0;
    DecoupledAttention last_attention;
    std::vector<DecoupledAttention> all_attention;
    std::vector<double> similarity;
};

class CacvitModel {
public:
    explicit CacvitModel(const ModelConfig& cfg);
    CacvitModel(const CacvitModel&) = delete;
    CacvitModel& operator=(const CacvitModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    Tape& tape() { return tape_; }

    std::vector<std::pair<std::string, Tensor*>>& parameters() { return params_; }
    std::size_t param_count() const;
    void zero_grad();

    std::vector<Exemplar> make_exemplars(const Image& img, const std::vector<Box>& boxes) const;

    // Patch projection + positional embedding for query tokens, SE-augmented
    // projection for exemplar tokens, concatenated query-first.
    TokenSequence embed_inputs(const Image& img, const std::vector<Exemplar>& exemplars);

    // Full forward pass with the tape left populated, for training.
    struct Traced {
        Tensor density;    // image_size × image_size
        Tensor similarity; // M, already ME-scaled when enabled
        DecoupledAttention last_attention;
        std::vector<DecoupledAttention> all_attention;
    };
    Traced trace(const Image& img, const std::vector<Box>& boxes, bool retain_all = false);

    // Inference convenience; resets the tape before returning.
    ModelOutput forward(const Image& img, const std::vector<Box>& boxes, bool retain_all = false);

    // Mean squared error over pixels.
    Tensor loss(const Tensor& pred_density, const DensityMap& gt);

    // Checkpoint container: "CVCK", u32 LE version, length-prefixed key=value
    // config lines, then per-parameter records (length-prefixed name, u32
    // rank, u32 dims..., f32 LE data).
    void save(const std::string& path) const;
    void load(const std::string& path);
    static ModelConfig read_checkpoint_config(const std::string& path);

private:
    Tensor decode(const Tensor& features); // [extra_dim+1, g, g] -> [1, H, W]

    ModelConfig cfg_;
    Tape tape_;
    int extra_heads_ = 1;

    Tensor query_proj_w_, query_proj_b_;
    Tensor ex_proj_w_, ex_proj_b_;
    Tensor pos_emb_; // fixed 2-D sinusoidal, query tokens only
    std::vector<EncoderBlock> main_blocks_;
    Tensor extra_proj_w_, extra_proj_b_;
    std::vector<EncoderBlock> extra_blocks_;
    std::vector<std::pair<Tensor, Tensor>> decoder_convs_; // 3×3 stages
    Tensor head_w_, head_b_;                               // final 1×1
    std::vector<std::pair<std::string, Tensor*>> params_;
};

} // namespace cacvit
