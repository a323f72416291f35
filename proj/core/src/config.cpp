#include "cacvit/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "cacvit/errors.hpp"

namespace cacvit {

namespace {

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> kSchema = {
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.seed = static_cast<std::uint64_t>(std::stoull(v));
             (void)k;
         }},
        {"model.image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_size = to_int(k, v); }},
        {"model.patch", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch = to_int(k, v); }},
        {"model.exemplar_w", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.exemplar_w = to_int(k, v); }},
        {"model.exemplar_h", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.exemplar_h = to_int(k, v); }},
        {"model.exemplar_patch", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.exemplar_patch = to_int(k, v); }},
        {"model.depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.depth = to_int(k, v); }},
        {"model.dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dim = to_int(k, v); }},
        {"model.heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.heads = to_int(k, v); }},
        {"model.extra_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.extra_depth = to_int(k, v); }},
        {"model.extra_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.extra_dim = to_int(k, v); }},
        {"model.decoder_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.decoder_dim = to_int(k, v); }},
        {"model.k_shots", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.k_shots = to_int(k, v); }},
        {"model.channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.channels = to_int(k, v); }},
        {"model.use_cls", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_cls = to_bool(k, v); }},
        {"model.use_se", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_se = to_bool(k, v); }},
        {"model.use_me", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_me = to_bool(k, v); }},
        {"optim.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.lr = to_double(k, v); }},
        {"optim.weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.weight_decay = to_double(k, v); }},
        {"optim.beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta1 = to_double(k, v); }},
        {"optim.beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta2 = to_double(k, v); }},
        {"optim.eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.eps = to_double(k, v); }},
        {"optim.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.batch_size = to_int(k, v); }},
        {"optim.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.epochs = to_int(k, v); }},
        {"optim.warmup_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.warmup_epochs = to_int(k, v); }},
        {"optim.grad_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.grad_clip = to_double(k, v); }},
        {"data.count_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.count_min = to_int(k, v); }},
        {"data.count_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.count_max = to_int(k, v); }},
        {"data.radius_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.radius_min = to_double(k, v); }},
        {"data.radius_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.radius_max = to_double(k, v); }},
        {"data.aspect_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.aspect_min = to_double(k, v); }},
        {"data.aspect_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.aspect_max = to_double(k, v); }},
        {"data.distractor_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.distractor_min = to_int(k, v); }},
        {"data.distractor_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.distractor_max = to_int(k, v); }},
        {"data.noise", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.noise = to_double(k, v); }},
        {"data.target_gray", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.target_gray = to_double(k, v); }},
        {"data.distractor_gray", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.distractor_gray = to_double(k, v); }},
        {"data.sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.scene.sigma = to_double(k, v); }},
        {"data.train_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.train_images = static_cast<std::size_t>(to_int(k, v)); }},
        {"data.val_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_images = static_cast<std::size_t>(to_int(k, v)); }},
        {"data.test_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.test_images = static_cast<std::size_t>(to_int(k, v)); }},
        {"data.dir", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data_dir = v;
             (void)k;
         }},
        {"eval.threshold", [](RunConfig& c, const std::string& k, const std::string& v) { c.threshold = to_int(k, v); }},
    };

    const auto it = kSchema.find(key);
    if (it == kSchema.end()) throw ConfigError("unknown config key: " + key);
    it->second(*this, key, value);
}

void RunConfig::finalize() {
    model.seed = seed;
    optim.seed = seed;
    scene.seed = seed;
    scene.width = model.image_size;
    scene.height = model.image_size;
    scene.k_exemplars = model.k_shots;
    model.validate();
    optim.validate();
    scene.validate();
}

void RunConfig::echo(std::ostream& os) const {
    os << "seed=" << seed << "\n";
    for (const auto& [k, v] : model.to_kv())
        if (k != "seed") os << "model." << k << "=" << v << "\n";
    os << "optim.lr=" << optim.lr << "\n";
    os << "optim.weight_decay=" << optim.weight_decay << "\n";
    os << "optim.beta1=" << optim.beta1 << "\n";
    os << "optim.beta2=" << optim.beta2 << "\n";
    os << "optim.eps=" << optim.eps << "\n";
    os << "optim.batch_size=" << optim.batch_size << "\n";
    os << "optim.epochs=" << optim.epochs << "\n";
    os << "optim.warmup_epochs=" << optim.warmup_epochs << "\n";
    os << "optim.grad_clip=" << optim.grad_clip << "\n";
    os << "data.count_min=" << scene.count_min << "\n";
    os << "data.count_max=" << scene.count_max << "\n";
    os << "data.radius_min=" << scene.radius_min << "\n";
    os << "data.radius_max=" << scene.radius_max << "\n";
    os << "data.aspect_min=" << scene.aspect_min << "\n";
    os << "data.aspect_max=" << scene.aspect_max << "\n";
    os << "data.distractor_min=" << scene.distractor_min << "\n";
    os << "data.distractor_max=" << scene.distractor_max << "\n";
    os << "data.noise=" << scene.noise << "\n";
    os << "data.target_gray=" << scene.target_gray << "\n";
    os << "data.distractor_gray=" << scene.distractor_gray << "\n";
    os << "data.sigma=" << scene.sigma << "\n";
    os << "data.train_images=" << train_images << "\n";
    os << "data.val_images=" << val_images << "\n";
    os << "data.test_images=" << test_images << "\n";
    os << "data.dir=" << data_dir << "\n";
    os << "eval.threshold=" << threshold << "\n";
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& [k, v] : kv) cfg.apply(k, v);
}

} // namespace cacvit
