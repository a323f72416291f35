#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cacvit/data.hpp"
#include "cacvit/model.hpp"

namespace cacvit {

struct OptimConfig {
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 4;
    int epochs = 50;
    int warmup_epochs = 3;
    double grad_clip = 0.0; // 0 disables
    std::uint64_t seed = 0;

    void validate() const;
};

// Decoupled weight decay: the decay term multiplies parameters directly and
// never enters the moment estimates.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor*>>& params, const OptimConfig& cfg);

    // lr_mult scales the base learning rate (warmup/cosine schedule).
    // Throws NumericalError on any non-finite gradient.
    void step(double lr_mult);

    long step_count() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor*>>& params_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Linear warmup 0 -> 1 across warmup_epochs, then cosine decay to 0 at epochs.
double lr_multiplier(int epoch, const OptimConfig& cfg);

// A split on disk: manifest plus lazily loaded rasters.
struct Dataset {
    std::string root;
    std::vector<SceneRecord> records;

    static Dataset open(const std::string& manifest_path);
    Image load_image(std::size_t i) const;
    DensityMap load_density(std::size_t i) const;
    std::vector<Box> exemplar_boxes(std::size_t i, int k) const;
};

struct PerImageError {
    std::string image;
    double gt = 0.0;
    double pred = 0.0;
    double abs_err = 0.0;
};

struct EvalReport {
    double mae = 0.0;
    double rmse = 0.0;
    std::vector<PerImageError> rows;
};

struct StratifiedReport {
    EvalReport overall;
    EvalReport low;
    EvalReport high;
    int threshold = 0;
    bool degenerate = false; // single-bucket split
};

EvalReport evaluate(CacvitModel& model, const Dataset& data, int k_shots);
StratifiedReport evaluate_stratified(CacvitModel& model, const Dataset& data, int k_shots,
                                     int threshold);

// CSV `image,gt,pred,abs_err` with a summary footer.
void write_report_csv(const std::string& path, const EvalReport& report);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
    double val_rmse = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    double best_val_mae = 0.0;
    int best_epoch = -1;
};

// Deterministic loop: fixed per-epoch shuffles, best-val-MAE checkpointing,
// metrics CSV `epoch,train_loss,val_mae,val_rmse`.
TrainResult train(CacvitModel& model, const Dataset& train_set, const Dataset& val_set,
                  const OptimConfig& cfg, const std::string& checkpoint_path,
                  const std::string& metrics_csv_path, bool verbose = false);

struct AblationRow {
    std::string name;
    bool use_cls = false, use_se = false, use_me = false;
    double val_mae = 0.0;
    double val_rmse = 0.0;
};

// The five toggle combinations of the ablation protocol, trained under a
// shared seed and data order. Writes `name,cls,se,me,val_mae,val_rmse` CSV.
std::vector<AblationRow> ablation_grid(const ModelConfig& base_cfg, const OptimConfig& optim_cfg,
                                       const Dataset& train_set, const Dataset& val_set,
                                       const std::string& out_csv, bool verbose = false);

} // namespace cacvit
