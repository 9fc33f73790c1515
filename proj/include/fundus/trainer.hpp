#ifndef FUNDUS_TRAINER_HPP
#define FUNDUS_TRAINER_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/dataio.hpp"
#include "fundus/fagnet.hpp"
#include "fundus/fgcnet.hpp"
#include "fundus/losses.hpp"
#include "fundus/metrics.hpp"

namespace fundus {

struct TrainConfig {
    double initial_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 50;
    int batch_size = 16;
    int max_epochs = 500;
    int early_stop_patience = 20;
    double weight_decay = 1e-5;
    std::uint64_t seed = 42;
    // Write epoch-<n>.ckpt every this many epochs; 0 disables.
    int checkpoint_every = 0;
    int folds = 5;
    double val_fraction = 0.1;

    void validate() const;
    static TrainConfig from_config(const Config& config);
    void to_config(Config& config) const;
};

/// initial_lr * decay_factor^floor(epoch / decay_every)
double lr_at_epoch(const TrainConfig& config, int epoch);

/// True when the last `patience` entries (at least one) are all no better than
/// the best loss seen before them.
bool early_stop_check(const std::vector<double>& history, int patience);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;  // NaN without a validation split
    // FGC-Net only: training means of the three objective terms.
    double recon_l1 = 0.0;
    double disc_l2 = 0.0;
    double kl = 0.0;
};

struct EvalResult {
    ModelKind kind = ModelKind::FagNet;
    bool age = true;
    std::size_t samples = 0;

    RegressionReport regression;
    // Cumulative scores use predictions rounded to whole years.
    std::array<double, 6> cs{};   // CS_0 .. CS_5
    std::array<double, 3> mcs{};  // MCS-2, MCS-3, MCS-4
    std::vector<AgePrediction> age_predictions;

    ConfusionCounts counts;
    GenderReport gender;  // NaN fields when a ratio is undefined
    std::vector<GenderPrediction> gender_predictions;
};

struct RunResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    std::filesystem::path fold_dir;
    std::filesystem::path best_checkpoint;
    bool stopped_early = false;
    double seconds = 0.0;
    std::optional<EvalResult> evaluation;
};

/// `FUNDUS_LAB_RUNS_DIR` if set, else `runs`.
std::filesystem::path runs_root();
/// <root>/<name>/fold-<k>
std::filesystem::path fold_directory(const std::filesystem::path& root, const std::string& name, int fold_id);

/// Fold ids are 1-based. A manifest whose every record carries a split uses
/// those splits (fold 1 only); otherwise subjects are dealt into
/// `config.folds` folds and `val_fraction` of the non-test subjects validate.
FoldPlan plan_for_fold(const Manifest& manifest, const TrainConfig& config, int fold_id);

/// Everything that shapes a run: model, loss and training keys.
Config fagnet_run_config(const FagNetConfig& model, const ClfParams& loss, const TrainConfig& train);
Config fgcnet_run_config(const FgcNetConfig& model, const TrainConfig& train);

/// Age head trains on ALF, gender head on cross-entropy. Writes
/// config.snapshot, history.csv, best.ckpt, optional epoch checkpoints and,
/// when the fold has a test split, eval.csv and predictions.csv.
RunResult train_fagnet(const FagNetConfig& model, const ClfParams& loss, const TrainConfig& train,
                       const Manifest& manifest, int fold_id, const std::filesystem::path& fold_dir);

/// Joint generator/discriminator training on the FGC-Net objective. Also
/// writes terms.csv (epoch, recon_l1, disc_l2, kl).
RunResult train_fgcnet(const FgcNetConfig& model, const TrainConfig& train, const Manifest& manifest, int fold_id,
                       const std::filesystem::path& fold_dir);

/// Eval-mode inference on the fold's test split. The checkpoint's own config
/// rebuilds the model unless `expected` is given, in which case a checkpoint
/// that does not fit `expected` is a compatibility error. FGC-Net checkpoints
/// are scored through the discriminator's age estimate.
EvalResult evaluate_fold(const std::filesystem::path& checkpoint, const Manifest& manifest, int fold_id,
                         const std::optional<Config>& expected = std::nullopt);

EvalResult evaluate_records(const std::filesystem::path& checkpoint, const Manifest& manifest,
                            const std::vector<std::size_t>& indices, const std::optional<Config>& expected = std::nullopt);

/// Age: MAE, MSE, CS_0..CS_5, MCS-2, MCS-3, MCS-4. Gender: tp, fp, tn, fn and
/// the derived ratios.
void write_eval_csv(const EvalResult& result, const std::filesystem::path& path);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

}  // namespace fundus

#endif
