#include "cacvit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cacvit/errors.hpp"

namespace cacvit {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

// 2-D sinusoidal positional table: first half of the channels encodes the
// row, second half the column, each as interleaved sin/cos ramps.
Tensor sinusoidal_pos_emb(int grid, int dim) {
    const int quarter = dim / 4;
    Tensor pe = Tensor::zeros({static_cast<std::size_t>(grid) * grid, static_cast<std::size_t>(dim)});
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            double* row = pe.data->data() + (static_cast<std::size_t>(gy) * grid + gx) * dim;
            for (int i = 0; i < quarter; ++i) {
                const double omega =
                    1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
                row[2 * i] = std::sin(gy * omega);
                row[2 * i + 1] = std::cos(gy * omega);
                row[2 * quarter + 2 * i] = std::sin(gx * omega);
                row[2 * quarter + 2 * i + 1] = std::cos(gx * omega);
            }
        }
    return pe;
}

} // namespace

void ModelConfig::validate() const {
    if (image_size < 1 || patch < 1 || exemplar_w < 1 || exemplar_h < 1 || exemplar_patch < 1)
        throw ConfigError("model dims must be >= 1");
    if (image_size % patch != 0) throw ConfigError("patch must divide image_size");
    if (exemplar_w % exemplar_patch != 0 || exemplar_h % exemplar_patch != 0)
        throw ConfigError("exemplar_patch must divide exemplar dims");
    if (!is_power_of_two(patch)) throw ConfigError("patch must be a power of two (decoder stages)");
    if (depth < 1 || dim < 1 || heads < 1) throw ConfigError("encoder depth/dim/heads must be >= 1");
    if (dim % heads != 0) throw ConfigError("heads must divide dim");
    if (dim % 4 != 0) throw ConfigError("dim must be divisible by 4 (2-D sinusoidal embedding)");
    if (extra_depth < 0 || extra_dim < 1 || decoder_dim < 1)
        throw ConfigError("extra/decoder dims must be positive");
    if (k_shots < 1) throw ConfigError("k_shots must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
}

int ModelConfig::decoder_stages() const {
    int stages = 0, p = patch;
    while (p > 1) {
        p >>= 1;
        ++stages;
    }
    return stages;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["image_size"] = std::to_string(image_size);
    kv["patch"] = std::to_string(patch);
    kv["exemplar_w"] = std::to_string(exemplar_w);
    kv["exemplar_h"] = std::to_string(exemplar_h);
    kv["exemplar_patch"] = std::to_string(exemplar_patch);
    kv["depth"] = std::to_string(depth);
    kv["dim"] = std::to_string(dim);
    kv["heads"] = std::to_string(heads);
    kv["extra_depth"] = std::to_string(extra_depth);
    kv["extra_dim"] = std::to_string(extra_dim);
    kv["decoder_dim"] = std::to_string(decoder_dim);
    kv["k_shots"] = std::to_string(k_shots);
    kv["channels"] = std::to_string(channels);
    kv["use_cls"] = use_cls ? "1" : "0";
    kv["use_se"] = use_se ? "1" : "0";
    kv["use_me"] = use_me ? "1" : "0";
    kv["seed"] = std::to_string(seed);
    return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    const auto defaults = cfg.to_kv();
    for (const auto& [k, v] : kv)
        if (!defaults.count(k)) throw ConfigError("unknown model config key: " + k);
    auto get = [&](const std::string& key) -> std::string {
        auto it = kv.find(key);
        if (it == kv.end()) throw ConfigError("missing model config key: " + key);
        return it->second;
    };
    cfg.image_size = parse_int("image_size", get("image_size"));
    cfg.patch = parse_int("patch", get("patch"));
    cfg.exemplar_w = parse_int("exemplar_w", get("exemplar_w"));
    cfg.exemplar_h = parse_int("exemplar_h", get("exemplar_h"));
    cfg.exemplar_patch = parse_int("exemplar_patch", get("exemplar_patch"));
    cfg.depth = parse_int("depth", get("depth"));
    cfg.dim = parse_int("dim", get("dim"));
    cfg.heads = parse_int("heads", get("heads"));
    cfg.extra_depth = parse_int("extra_depth", get("extra_depth"));
    cfg.extra_dim = parse_int("extra_dim", get("extra_dim"));
    cfg.decoder_dim = parse_int("decoder_dim", get("decoder_dim"));
    cfg.k_shots = parse_int("k_shots", get("k_shots"));
    cfg.channels = parse_int("channels", get("channels"));
    cfg.use_cls = parse_bool("use_cls", get("use_cls"));
    cfg.use_se = parse_bool("use_se", get("use_se"));
    cfg.use_me = parse_bool("use_me", get("use_me"));
    cfg.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
    return cfg;
}

ModelConfig ModelConfig::reference() {
    ModelConfig cfg;
    cfg.image_size = 384;
    cfg.patch = 16;
    cfg.exemplar_w = 64;
    cfg.exemplar_h = 64;
    cfg.exemplar_patch = 16;
    cfg.depth = 12;
    cfg.dim = 768;
    cfg.heads = 12;
    cfg.extra_depth = 3;
    cfg.extra_dim = 512;
    cfg.decoder_dim = 256;
    cfg.k_shots = 3;
    cfg.channels = 3;
    return cfg;
}

CacvitModel::CacvitModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const double std = 0.02;
    const auto d = static_cast<std::size_t>(cfg_.dim);
    const std::size_t query_in =
        static_cast<std::size_t>(cfg_.patch) * cfg_.patch * cfg_.channels;
    const std::size_t ex_in =
        static_cast<std::size_t>(cfg_.exemplar_patch) * cfg_.exemplar_patch * (cfg_.channels + 1);

    auto weight = [&](std::vector<std::size_t> shape) {
        Tensor t = Tensor::randn(std::move(shape), rng, std);
        t.set_requires_grad(&tape_);
        return t;
    };
    auto bias = [&](std::size_t n) {
        Tensor t = Tensor::zeros({n});
        t.set_requires_grad(&tape_);
        return t;
    };

    query_proj_w_ = weight({query_in, d});
    query_proj_b_ = bias(d);
    ex_proj_w_ = weight({ex_in, d});
    ex_proj_b_ = bias(d);
    pos_emb_ = sinusoidal_pos_emb(cfg_.image_size / cfg_.patch, cfg_.dim);

    for (int i = 0; i < cfg_.depth; ++i)
        main_blocks_.push_back(EncoderBlock::init(d, cfg_.heads, rng, &tape_));

    // Extra blocks reuse the main head count when it divides extra_dim,
    // otherwise the largest smaller divisor.
    extra_heads_ = 1;
    for (int h = cfg_.heads; h >= 1; --h)
        if (cfg_.extra_dim % h == 0) {
            extra_heads_ = h;
            break;
        }
    extra_proj_w_ = weight({d, static_cast<std::size_t>(cfg_.extra_dim)});
    extra_proj_b_ = bias(static_cast<std::size_t>(cfg_.extra_dim));
    for (int i = 0; i < cfg_.extra_depth; ++i)
        extra_blocks_.push_back(
            EncoderBlock::init(static_cast<std::size_t>(cfg_.extra_dim), extra_heads_, rng, &tape_));

    std::size_t ch_in = static_cast<std::size_t>(cfg_.extra_dim) + 1;
    for (int s = 0; s < cfg_.decoder_stages(); ++s) {
        const std::size_t ch_out = static_cast<std::size_t>(std::max(cfg_.decoder_dim >> s, 1));
        decoder_convs_.emplace_back(weight({ch_out, ch_in, 3, 3}), bias(ch_out));
        ch_in = ch_out;
    }
    head_w_ = weight({1, ch_in, 1, 1});
    head_b_ = bias(1);

    params_.emplace_back("query_proj.w", &query_proj_w_);
    params_.emplace_back("query_proj.b", &query_proj_b_);
    params_.emplace_back("exemplar_proj.w", &ex_proj_w_);
    params_.emplace_back("exemplar_proj.b", &ex_proj_b_);
    for (std::size_t i = 0; i < main_blocks_.size(); ++i)
        main_blocks_[i].collect_params("encoder." + std::to_string(i), params_);
    params_.emplace_back("extra_proj.w", &extra_proj_w_);
    params_.emplace_back("extra_proj.b", &extra_proj_b_);
    for (std::size_t i = 0; i < extra_blocks_.size(); ++i)
        extra_blocks_[i].collect_params("extra." + std::to_string(i), params_);
    for (std::size_t i = 0; i < decoder_convs_.size(); ++i) {
        params_.emplace_back("decoder." + std::to_string(i) + ".w", &decoder_convs_[i].first);
        params_.emplace_back("decoder." + std::to_string(i) + ".b", &decoder_convs_[i].second);
    }
    params_.emplace_back("head.w", &head_w_);
    params_.emplace_back("head.b", &head_b_);
}

std::size_t CacvitModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t->numel();
    return n;
}

void CacvitModel::zero_grad() {
    for (auto& [name, t] : params_) t->zero_grad();
}

std::vector<Exemplar> CacvitModel::make_exemplars(const Image& img,
                                                  const std::vector<Box>& boxes) const {
    if (boxes.empty()) throw ConfigError("at least one exemplar box required");
    if (boxes.size() > static_cast<std::size_t>(cfg_.k_shots))
        throw ConfigError("more exemplar boxes than k_shots");
    std::vector<Exemplar> out;
    const double normalizer = static_cast<double>(cfg_.image_size) * 2.0;
    for (const Box& b : boxes) {
        const int bx = static_cast<int>(std::lround(b.x));
        const int by = static_cast<int>(std::lround(b.y));
        const int bw = std::max(1, static_cast<int>(std::lround(b.w)));
        const int bh = std::max(1, static_cast<int>(std::lround(b.h)));
        if (bx < 0 || by < 0 || bx + bw > img.width || by + bh > img.height)
            throw ConfigError("exemplar box outside image bounds");
        Image patch = crop(img, bx, by, bw, bh);
        Image resized = resize_bilinear(patch, cfg_.exemplar_w, cfg_.exemplar_h);
        Exemplar ex = attach_se(resized, bw, bh, normalizer);
        if (!cfg_.use_se)
            ex.se = Tensor::zeros({static_cast<std::size_t>(cfg_.exemplar_h),
                                   static_cast<std::size_t>(cfg_.exemplar_w)});
        out.push_back(std::move(ex));
    }
    return out;
}

TokenSequence CacvitModel::embed_inputs(const Image& img, const std::vector<Exemplar>& exemplars) {
    if (img.width != cfg_.image_size || img.height != cfg_.image_size ||
        img.channels != cfg_.channels)
        throw ConfigError("query image does not match model config");
    if (exemplars.empty() || exemplars.size() > static_cast<std::size_t>(cfg_.k_shots))
        throw ConfigError("exemplar count must be in [1, k_shots]");

    Tensor query_patches = patchify(img, cfg_.patch);
    Tensor query_tokens =
        add(add_rowvec(matmul(query_patches, query_proj_w_), query_proj_b_), pos_emb_);

    std::vector<Tensor> segments{query_tokens};
    for (const Exemplar& ex : exemplars) {
        if (ex.pixels.width != cfg_.exemplar_w || ex.pixels.height != cfg_.exemplar_h ||
            ex.pixels.channels != cfg_.channels)
            throw ConfigError("exemplar pixels do not match model config");
        Image with_se(cfg_.exemplar_w, cfg_.exemplar_h, cfg_.channels + 1);
        for (int y = 0; y < cfg_.exemplar_h; ++y)
            for (int x = 0; x < cfg_.exemplar_w; ++x) {
                for (int c = 0; c < cfg_.channels; ++c)
                    with_se.at(x, y, c) = ex.pixels.at(x, y, c);
                with_se.at(x, y, cfg_.channels) =
                    (*ex.se.data)[static_cast<std::size_t>(y) * cfg_.exemplar_w + x];
            }
        Tensor ex_patches = patchify(with_se, cfg_.exemplar_patch);
        segments.push_back(add_rowvec(matmul(ex_patches, ex_proj_w_), ex_proj_b_));
    }

    TokenSequence seq;
    seq.tokens = concat(segments, 0);
    seq.m_query = static_cast<std::size_t>(cfg_.query_tokens());
    seq.m_exemplar_each = static_cast<std::size_t>(cfg_.exemplar_tokens());
    seq.k_shots = exemplars.size();
    return seq;
}

Tensor CacvitModel::decode(const Tensor& features) {
    Tensor x = features;
    for (const auto& [w, b] : decoder_convs_) {
        x = upsample2x(x);
        x = relu(conv2d(x, w, b, 1));
    }
    return relu(conv2d(x, head_w_, head_b_, 0));
}

CacvitModel::Traced CacvitModel::trace(const Image& img, const std::vector<Box>& boxes,
                                       bool retain_all) {
    const std::vector<Exemplar> exemplars = make_exemplars(img, boxes);
    TokenSequence seq = embed_inputs(img, exemplars);

    StackResult main = stack_blocks(seq, main_blocks_, !cfg_.use_cls, retain_all);

    const auto m = static_cast<std::size_t>(cfg_.query_tokens());
    const auto d = static_cast<std::size_t>(cfg_.dim);
    Tensor query_feats = slice(main.seq.tokens, {{0, m}, {0, d}});
    Tensor extra_feats = add_rowvec(matmul(query_feats, extra_proj_w_), extra_proj_b_);
    if (!extra_blocks_.empty()) {
        TokenSequence extra_seq{extra_feats, m, 0, 0};
        extra_feats = stack_blocks(extra_seq, extra_blocks_).seq.tokens;
    }

    Tensor sim = match_similarity(main.last);
    if (cfg_.use_me)
        sim = apply_me(sim, magnitude_embedding(exemplars, cfg_.patch, cfg_.patch));

    Tensor feat = concat({extra_feats, reshape(sim, {m, 1})}, 1);
    const auto grid = static_cast<std::size_t>(cfg_.image_size / cfg_.patch);
    Tensor grid_feat =
        reshape(transpose(feat), {static_cast<std::size_t>(cfg_.extra_dim) + 1, grid, grid});

    Tensor density = decode(grid_feat);
    density = reshape(density, {static_cast<std::size_t>(cfg_.image_size),
                                static_cast<std::size_t>(cfg_.image_size)});

    Traced traced;
    traced.density = density;
    traced.similarity = sim;
    traced.last_attention = std::move(main.last);
    traced.all_attention = std::move(main.all);
    return traced;
}

ModelOutput CacvitModel::forward(const Image& img, const std::vector<Box>& boxes,
                                 bool retain_all) {
    Traced traced = trace(img, boxes, retain_all);
    ModelOutput out;
    out.density = DensityMap(cfg_.image_size, cfg_.image_size);
    out.density.data = *traced.density.data;
    out.count = out.density.sum();
    out.last_attention = std::move(traced.last_attention);
    out.all_attention = std::move(traced.all_attention);
    out.similarity = *traced.similarity.data;
    tape_.reset();
    return out;
}

Tensor CacvitModel::loss(const Tensor& pred_density, const DensityMap& gt) {
    if (pred_density.rank() != 2 || pred_density.dim(0) != static_cast<std::size_t>(gt.height) ||
        pred_density.dim(1) != static_cast<std::size_t>(gt.width))
        throw DimensionError("loss: prediction and ground truth shapes differ");
    Tensor gt_t = Tensor::from_vector({static_cast<std::size_t>(gt.height),
                                       static_cast<std::size_t>(gt.width)},
                                      gt.data);
    Tensor diff = sub(pred_density, gt_t);
    return mean(mul(diff, diff));
}

// --- checkpoint i/o -------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'C', 'V', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

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
    if (!is) throw FormatError("checkpoint: unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::map<std::string, std::string> read_header(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = get_u32(is);
    if (version != kCkptVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t blob_len = get_u32(is);
    std::string blob(blob_len, '\0');
    is.read(blob.data(), blob_len);
    if (!is) throw FormatError("checkpoint: truncated config blob");
    std::map<std::string, std::string> kv;
    std::istringstream ss(blob);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint: malformed config line");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

} // namespace

void CacvitModel::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kCkptMagic, 4);
    put_u32(os, kCkptVersion);
    std::string blob;
    for (const auto& [k, v] : cfg_.to_kv()) blob += k + "=" + v + "\n";
    put_u32(os, static_cast<std::uint32_t>(blob.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    put_u32(os, static_cast<std::uint32_t>(params_.size()));
    for (const auto& [name, t] : params_) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t->rank()));
        for (const std::size_t dim : t->shape) put_u32(os, static_cast<std::uint32_t>(dim));
        for (const double v : *t->data) {
            const auto f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(os, bits);
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

ModelConfig CacvitModel::read_checkpoint_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return ModelConfig::from_kv(read_header(is));
}

void CacvitModel::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    const auto kv = read_header(is);
    const auto own = cfg_.to_kv();
    std::string diff;
    for (const auto& [k, v] : own) {
        auto it = kv.find(k);
        if (it == kv.end() || it->second != v) diff += diff.empty() ? k : (", " + k);
    }
    if (!diff.empty())
        throw ConfigError("checkpoint config differs from model config in: " + diff);

    const std::uint32_t count = get_u32(is);
    if (count != params_.size()) throw FormatError("checkpoint: parameter count mismatch");
    for (std::uint32_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint: truncated parameter name");
        if (name != params_[p].first)
            throw FormatError("checkpoint: unexpected parameter '" + name + "'");
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u32(is);
        Tensor* t = params_[p].second;
        if (shape != t->shape) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        for (double& v : *t->data) {
            const std::uint32_t bits = get_u32(is);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<double>(f);
        }
    }
}

} // namespace cacvit
