#include "cacvit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cacvit/errors.hpp"
#include "cacvit/rng.hpp"

namespace fs = std::filesystem;

namespace cacvit {

void OptimConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
        throw ConfigError("need 0 <= warmup_epochs < epochs");
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor*>>& params, const OptimConfig& cfg)
    : params_(params), cfg_(cfg) {
    cfg_.validate();
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t->numel(), 0.0);
        v_.emplace_back(t->numel(), 0.0);
    }
}

void AdamW::step(double lr_mult) {
    ++t_;
    const double lr = cfg_.lr * lr_mult;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    if (cfg_.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (const auto& [name, t] : params_)
            for (const double g : *t->grad) norm2 += g * g;
        const double norm = std::sqrt(norm2);
        if (norm > cfg_.grad_clip) {
            const double s = cfg_.grad_clip / norm;
            for (auto& [name, t] : params_)
                for (double& g : *t->grad) g *= s;
        }
    }

    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor* t = params_[p].second;
        for (std::size_t i = 0; i < t->numel(); ++i) {
            const double g = (*t->grad)[i];
            if (!std::isfinite(g))
                throw NumericalError("AdamW: non-finite gradient in parameter '" +
                                     params_[p].first + "'");
            m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g;
            v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[p][i] / bc1;
            const double vhat = v_[p][i] / bc2;
            double& w = (*t->data)[i];
            w -= lr * cfg_.weight_decay * w;
            w -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double lr_multiplier(int epoch, const OptimConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs) throw ConfigError("lr_multiplier: epoch out of range");
    if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs)
        return static_cast<double>(epoch) / cfg.warmup_epochs;
    const int span = cfg.epochs - cfg.warmup_epochs;
    const double t = static_cast<double>(epoch - cfg.warmup_epochs) / span;
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

Dataset Dataset::open(const std::string& manifest_path) {
    Manifest m = read_manifest(manifest_path);
    Dataset d;
    d.root = m.root;
    d.records = std::move(m.records);
    return d;
}

Image Dataset::load_image(std::size_t i) const {
    return read_image_cvdm((fs::path(root) / records[i].image_path).string());
}

DensityMap Dataset::load_density(std::size_t i) const {
    return read_density((fs::path(root) / records[i].density_path).string());
}

std::vector<Box> Dataset::exemplar_boxes(std::size_t i, int k) const {
    const SceneRecord& r = records[i];
    if (r.exemplar_indices.empty())
        throw ConfigError("record " + r.image_path + " has no exemplars");
    std::vector<Box> out;
    for (int j = 0; j < k; ++j)
        out.push_back(r.boxes[r.exemplar_indices[static_cast<std::size_t>(j) %
                                                 r.exemplar_indices.size()]]);
    return out;
}

namespace {

EvalReport make_report(std::vector<PerImageError> rows) {
    EvalReport rep;
    rep.rows = std::move(rows);
    if (rep.rows.empty()) return rep;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const PerImageError& r : rep.rows) {
        abs_sum += r.abs_err;
        sq_sum += r.abs_err * r.abs_err;
    }
    const double n = static_cast<double>(rep.rows.size());
    rep.mae = abs_sum / n;
    rep.rmse = std::sqrt(sq_sum / n);
    return rep;
}

} // namespace

EvalReport evaluate(CacvitModel& model, const Dataset& data, int k_shots) {
    if (data.records.empty()) throw ConfigError("evaluate: empty dataset");
    std::vector<PerImageError> rows;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        const Image img = data.load_image(i);
        const ModelOutput out = model.forward(img, data.exemplar_boxes(i, k_shots));
        PerImageError row;
        row.image = data.records[i].image_path;
        row.gt = static_cast<double>(data.records[i].count);
        row.pred = out.count;
        row.abs_err = std::abs(row.pred - row.gt);
        rows.push_back(std::move(row));
    }
    return make_report(std::move(rows));
}

StratifiedReport evaluate_stratified(CacvitModel& model, const Dataset& data, int k_shots,
                                     int threshold) {
    StratifiedReport rep;
    rep.threshold = threshold;
    rep.overall = evaluate(model, data, k_shots);

    std::vector<PerImageError> low, high;
    for (std::size_t i = 0; i < data.records.size(); ++i)
        (data.records[i].count <= threshold ? low : high).push_back(rep.overall.rows[i]);
    rep.degenerate = low.empty() || high.empty();
    rep.low = make_report(std::move(low));
    rep.high = make_report(std::move(high));
    return rep;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "image,gt,pred,abs_err\n";
    char buf[256];
    for (const PerImageError& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", r.image.c_str(), r.gt, r.pred,
                      r.abs_err);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "# mae,%.17g\n# rmse,%.17g\n", report.mae, report.rmse);
    os << buf;
    if (!os) throw IoError("write failed: " + path);
}

TrainResult train(CacvitModel& model, const Dataset& train_set, const Dataset& val_set,
                  const OptimConfig& cfg, const std::string& checkpoint_path,
                  const std::string& metrics_csv_path, bool verbose) {
    cfg.validate();
    if (train_set.records.empty()) throw ConfigError("train: empty training set");
    if (val_set.records.empty()) throw ConfigError("train: empty validation set");

    AdamW optim(model.parameters(), cfg);
    const int k = model.config().k_shots;

    std::ofstream csv;
    if (!metrics_csv_path.empty()) {
        csv.open(metrics_csv_path, std::ios::binary);
        if (!csv) throw IoError("cannot open for writing: " + metrics_csv_path);
        csv << "epoch,train_loss,val_mae,val_rmse\n";
    }

    TrainResult result;
    result.best_val_mae = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_set.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(cfg.seed + 0x51ED270B * static_cast<std::uint64_t>(epoch + 1));
        shuffle_rng.shuffle(order);
        const double mult = lr_multiplier(epoch, cfg);

        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            model.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                const Image img = train_set.load_image(i);
                const DensityMap gt = train_set.load_density(i);
                try {
                    CacvitModel::Traced traced =
                        model.trace(img, train_set.exemplar_boxes(i, k));
                    Tensor sample_loss =
                        scale(model.loss(traced.density, gt), inv_batch);
                    batch_loss += (*sample_loss.data)[0];
                    model.tape().backward(sample_loss);
                } catch (const NumericalError& e) {
                    throw NumericalError("train: epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(n_batches) + ": " + e.what());
                }
                model.tape().reset();
            }
            optim.step(mult);
            loss_sum += batch_loss;
            ++n_batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(n_batches);
        const EvalReport val = evaluate(model, val_set, k);
        stats.val_mae = val.mae;
        stats.val_rmse = val.rmse;
        result.curve.push_back(stats);

        if (csv.is_open()) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", epoch, stats.train_loss,
                          stats.val_mae, stats.val_rmse);
            csv << buf;
        }
        if (verbose)
            std::printf("epoch=%d loss=%.6f val_mae=%.4f\n", epoch, stats.train_loss,
                        stats.val_mae);

        if (stats.val_mae < result.best_val_mae) {
            result.best_val_mae = stats.val_mae;
            result.best_epoch = epoch;
            if (!checkpoint_path.empty()) model.save(checkpoint_path);
        }
    }
    return result;
}

std::vector<AblationRow> ablation_grid(const ModelConfig& base_cfg, const OptimConfig& optim_cfg,
                                       const Dataset& train_set, const Dataset& val_set,
                                       const std::string& out_csv, bool verbose) {
    struct Combo {
        const char* name;
        bool cls, se, me;
    };
    // Baseline row masks A_class; the rest add toggles on top of it.
    static constexpr Combo kCombos[] = {
        {"B1", false, false, false}, {"B2", true, false, false}, {"B3", true, true, false},
        {"B4", true, false, true},   {"B5", true, true, true},
    };

    std::vector<AblationRow> rows;
    for (const Combo& combo : kCombos) {
        ModelConfig cfg = base_cfg;
        cfg.use_cls = combo.cls;
        cfg.use_se = combo.se;
        cfg.use_me = combo.me;
        CacvitModel model(cfg);
        if (verbose) std::printf("ablation %s (cls=%d se=%d me=%d)\n", combo.name, combo.cls,
                                 combo.se, combo.me);
        const TrainResult tr = train(model, train_set, val_set, optim_cfg, "", "", verbose);
        AblationRow row;
        row.name = combo.name;
        row.use_cls = combo.cls;
        row.use_se = combo.se;
        row.use_me = combo.me;
        // report the best epoch, matching checkpoint selection
        row.val_mae = tr.best_val_mae;
        double best_rmse = 0.0;
        for (const EpochStats& s : tr.curve)
            if (s.epoch == tr.best_epoch) best_rmse = s.val_rmse;
        row.val_rmse = best_rmse;
        rows.push_back(std::move(row));
    }

    if (!out_csv.empty()) {
        std::ofstream os(out_csv, std::ios::binary);
        if (!os) throw IoError("cannot open for writing: " + out_csv);
        os << "name,cls,se,me,val_mae,val_rmse\n";
        char buf[160];
        for (const AblationRow& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.17g,%.17g\n", r.name.c_str(),
                          r.use_cls ? 1 : 0, r.use_se ? 1 : 0, r.use_me ? 1 : 0, r.val_mae,
                          r.val_rmse);
            os << buf;
        }
        if (!os) throw IoError("write failed: " + out_csv);
    }
    return rows;
}

} // namespace cacvit
