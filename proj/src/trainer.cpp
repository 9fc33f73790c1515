#include "fundus/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "fundus/csv.hpp"
#include "fundus/error.hpp"

namespace fundus {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0) || !(lr_decay_factor > 0.0) || lr_decay_every < 1) {
        fail(ErrorKind::InvalidConfig, "learning-rate settings must be positive");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        fail(ErrorKind::InvalidConfig, "Adam betas must lie in (0, 1)");
    }
    if (batch_size < 1) fail(ErrorKind::InvalidConfig, "train.batch_size must be at least 1");
    if (max_epochs < 1) fail(ErrorKind::InvalidConfig, "train.max_epochs must be at least 1");
    if (early_stop_patience < 0) fail(ErrorKind::InvalidConfig, "train.early_stop_patience must be nonnegative");
    if (weight_decay < 0.0) fail(ErrorKind::InvalidConfig, "train.weight_decay must be nonnegative");
    if (checkpoint_every < 0) fail(ErrorKind::InvalidConfig, "train.checkpoint_every must be nonnegative");
    if (folds < 2) fail(ErrorKind::InvalidConfig, "train.folds must be at least 2");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        fail(ErrorKind::InvalidConfig, "train.val_fraction must lie in [0, 1)");
    }
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.initial_lr = c.get_double("train.initial_lr", t.initial_lr);
    t.beta1 = c.get_double("train.beta1", t.beta1);
    t.beta2 = c.get_double("train.beta2", t.beta2);
    t.lr_decay_factor = c.get_double("train.lr_decay_factor", t.lr_decay_factor);
    t.lr_decay_every = static_cast<int>(c.get_int("train.lr_decay_every", t.lr_decay_every));
    t.batch_size = static_cast<int>(c.get_int("train.batch_size", t.batch_size));
    t.max_epochs = static_cast<int>(c.get_int("train.max_epochs", t.max_epochs));
    t.early_stop_patience = static_cast<int>(c.get_int("train.early_stop_patience", t.early_stop_patience));
    t.weight_decay = c.get_double("train.weight_decay", t.weight_decay);
    t.seed = static_cast<std::uint64_t>(c.get_int("train.seed", static_cast<long long>(t.seed)));
    t.checkpoint_every = static_cast<int>(c.get_int("train.checkpoint_every", t.checkpoint_every));
    t.folds = static_cast<int>(c.get_int("train.folds", t.folds));
    t.val_fraction = c.get_double("train.val_fraction", t.val_fraction);
    t.validate();
    return t;
}

void TrainConfig::to_config(Config& c) const {
    c.set("train.initial_lr", format_real(initial_lr));
    c.set("train.beta1", format_real(beta1));
    c.set("train.beta2", format_real(beta2));
    c.set("train.lr_decay_factor", format_real(lr_decay_factor));
    c.set("train.lr_decay_every", std::to_string(lr_decay_every));
    c.set("train.batch_size", std::to_string(batch_size));
    c.set("train.max_epochs", std::to_string(max_epochs));
    c.set("train.early_stop_patience", std::to_string(early_stop_patience));
    c.set("train.weight_decay", format_real(weight_decay));
    c.set("train.seed", std::to_string(seed));
    c.set("train.checkpoint_every", std::to_string(checkpoint_every));
    c.set("train.folds", std::to_string(folds));
    c.set("train.val_fraction", format_real(val_fraction));
}

double lr_at_epoch(const TrainConfig& config, int epoch) {
    if (epoch < 0) fail(ErrorKind::InvalidInput, "epoch must be nonnegative");
    const int steps = epoch / config.lr_decay_every;
    // Dividing by 1/factor keeps 0.001 -> 0.0001 -> 0.00001 exact for factor
    // 0.1, where repeated multiplication drifts by an ulp.
    return config.initial_lr / std::pow(1.0 / config.lr_decay_factor, steps);
}

bool early_stop_check(const std::vector<double>& history, int patience) {
    if (history.empty()) fail(ErrorKind::InvalidInput, "early stopping needs a nonempty history");
    const std::size_t window = static_cast<std::size_t>(std::max(patience, 1));
    if (history.size() <= window) return false;
    const double best_before = *std::min_element(history.begin(), history.end() - static_cast<std::ptrdiff_t>(window));
    return std::all_of(history.end() - static_cast<std::ptrdiff_t>(window), history.end(),
                       [&](double v) { return !(v < best_before); });
}

fs::path runs_root() {
    const char* env = std::getenv("FUNDUS_LAB_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path fold_directory(const fs::path& root, const std::string& name, int fold_id) {
    return root / name / ("fold-" + std::to_string(fold_id));
}

FoldPlan plan_for_fold(const Manifest& manifest, const TrainConfig& config, int fold_id) {
    const bool presplit = !manifest.records.empty() &&
                          std::all_of(manifest.records.begin(), manifest.records.end(),
                                      [](const SampleRecord& r) { return r.split != Split::Unassigned; });
    FoldPlan plan;
    if (presplit) {
        if (fold_id != 1) fail(ErrorKind::InvalidInput, "a manifest with explicit splits has only fold 1");
        plan = plan_from_splits(manifest);
    } else {
        if (fold_id < 1 || fold_id > config.folds) {
            fail(ErrorKind::InvalidInput,
                 "fold " + std::to_string(fold_id) + " outside 1.." + std::to_string(config.folds));
        }
        const auto folds = kfold_split(manifest, config.folds, config.seed);
        plan = plan_fold(manifest, folds, fold_id - 1, config.val_fraction, config.seed);
    }
    check_fold_isolation(manifest, plan);
    return plan;
}

Config fagnet_run_config(const FagNetConfig& model, const ClfParams& loss, const TrainConfig& train) {
    Config c;
    c.set("model", "fagnet");
    model.to_config(c);
    loss.to_config(c);
    train.to_config(c);
    return c;
}

Config fgcnet_run_config(const FgcNetConfig& model, const TrainConfig& train) {
    Config c;
    c.set("model", "fgcnet");
    model.to_config(c);
    train.to_config(c);
    return c;
}

namespace {

// Decoded images kept in memory up to a byte budget; the rest reload per use.
class ImageStore {
public:
    ImageStore(const Manifest& manifest, std::int64_t size) : manifest_(manifest), size_(size) {}

    torch::Tensor batch(const std::vector<std::size_t>& indices) {
        std::vector<torch::Tensor> images;
        images.reserve(indices.size());
        for (const auto i : indices) images.push_back(get(i));
        return torch::stack(images);
    }

private:
    torch::Tensor get(std::size_t i) {
        if (const auto it = cache_.find(i); it != cache_.end()) return it->second;
        auto t = load_image(manifest_.resolve(manifest_.records[i]), size_).tensor();
        const auto bytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
        if (used_ + bytes <= kBudget) {
            used_ += bytes;
            cache_.emplace(i, t);
        }
        return t;
    }

    static constexpr std::size_t kBudget = std::size_t{1} << 30;
    const Manifest& manifest_;
    std::int64_t size_;
    std::map<std::size_t, torch::Tensor> cache_;
    std::size_t used_ = 0;
};

std::vector<std::vector<std::size_t>> batches_of(std::vector<std::size_t> indices, int batch_size,
                                                 std::mt19937_64* shuffle) {
    if (shuffle) std::shuffle(indices.begin(), indices.end(), *shuffle);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
        out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i), indices.begin() + static_cast<std::ptrdiff_t>(end));
    }
    // Batch-norm cannot train on a single 1x1 activation; fold a lone
    // trailing sample into the previous batch.
    if (shuffle && out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

torch::Tensor ages_of(const Manifest& m, const std::vector<std::size_t>& idx) {
    std::vector<float> v;
    for (const auto i : idx) v.push_back(static_cast<float>(m.records[i].age_years));
    return torch::tensor(v);
}

torch::Tensor gender_labels(const Manifest& m, const std::vector<std::size_t>& idx) {
    std::vector<std::int64_t> v;
    for (const auto i : idx) v.push_back(m.records[i].gender == Gender::Male ? 0 : 1);
    return torch::tensor(v);
}

void set_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

torch::optim::Adam make_adam(const std::vector<torch::Tensor>& params, const TrainConfig& t) {
    return torch::optim::Adam(params, torch::optim::AdamOptions(t.initial_lr)
                                          .betas({t.beta1, t.beta2})
                                          .weight_decay(t.weight_decay));
}

std::string cell(double v) { return std::isnan(v) ? std::string() : format_real(v); }

// Shared epoch loop: `step` trains on one batch and returns its loss times
// the batch size; `validate` returns the validation loss.
template <typename Step, typename Validate, typename Save>
RunResult run_epochs(const TrainConfig& train, const FoldPlan& plan, const fs::path& fold_dir, Step step,
                     Validate validate, Save save, std::vector<EpochRecord>& history) {
    RunResult result;
    result.fold_dir = fold_dir;
    result.best_checkpoint = fold_dir / "best.ckpt";
    std::vector<double> monitored;
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= train.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at_epoch(train, epoch - 1);
        std::mt19937_64 order(derive_seed(train.seed, static_cast<std::uint64_t>(epoch)));
        double total = 0.0;
        for (const auto& batch : batches_of(plan.train, train.batch_size, &order)) total += step(batch, rec);
        const double n = static_cast<double>(plan.train.size());
        rec.train_loss = total / n;
        rec.recon_l1 /= n;
        rec.disc_l2 /= n;
        rec.kl /= n;
        rec.val_loss = plan.val.empty() ? std::numeric_limits<double>::quiet_NaN() : validate();
        history.push_back(rec);

        const double monitor = plan.val.empty() ? rec.train_loss : rec.val_loss;
        monitored.push_back(monitor);
        if (monitor < best || result.best_epoch == 0) {
            best = monitor;
            result.best_epoch = epoch;
            save(result.best_checkpoint);
        }
        if (train.checkpoint_every > 0 && epoch % train.checkpoint_every == 0) {
            save(fold_dir / ("epoch-" + std::to_string(epoch) + ".ckpt"));
        }
        write_history_csv(history, fold_dir / "history.csv");
        if (early_stop_check(monitored, train.early_stop_patience)) {
            result.stopped_early = epoch < train.max_epochs;
            break;
        }
    }
    result.history = history;
    return result;
}

void prepare_fold_dir(const fs::path& fold_dir, const Config& snapshot) {
    fs::create_directories(fold_dir);
    snapshot.save(fold_dir / "config.snapshot");
}

void finish_evaluation(RunResult& result, const Manifest& manifest, const FoldPlan& plan) {
    if (plan.test.empty()) return;
    result.evaluation = evaluate_records(result.best_checkpoint, manifest, plan.test);
    write_eval_csv(*result.evaluation, result.fold_dir / "eval.csv");
    if (result.evaluation->age) {
        write_age_predictions(result.fold_dir / "predictions.csv", result.evaluation->age_predictions);
    } else {
        write_gender_predictions(result.fold_dir / "predictions.csv", result.evaluation->gender_predictions);
    }
}

}  // namespace

RunResult train_fagnet(const FagNetConfig& model, const ClfParams& loss, const TrainConfig& train,
                       const Manifest& manifest, int fold_id, const fs::path& fold_dir) {
    const auto started = std::chrono::steady_clock::now();
    model.validate();
    loss.validate();
    train.validate();
    const auto plan = plan_for_fold(manifest, train, fold_id);
    if (plan.train.empty()) fail(ErrorKind::InvalidInput, "fold " + std::to_string(fold_id) + " has no training samples");

    const auto snapshot = fagnet_run_config(model, loss, train);
    prepare_fold_dir(fold_dir, snapshot);

    torch::manual_seed(train.seed);
    auto net = build_fagnet(model);
    auto opt = make_adam(net->parameters(), train);
    ImageStore store(manifest, model.input_size);
    const bool age = model.head == Head::Age;

    auto batch_loss = [&](const std::vector<std::size_t>& idx) {
        const auto x = store.batch(idx);
        if (age) return loss_ops::alf(ages_of(manifest, idx), net->forward(x), loss);
        return torch::nn::functional::cross_entropy(net->logits(x), gender_labels(manifest, idx));
    };
    auto step = [&](const std::vector<std::size_t>& idx, EpochRecord& rec) {
        set_lr(opt, rec.lr);
        net->train();
        opt.zero_grad();
        const auto l = batch_loss(idx);
        l.backward();
        opt.step();
        return l.item<double>() * static_cast<double>(idx.size());
    };
    auto validate = [&] {
        net->eval();
        torch::NoGradGuard no_grad;
        double total = 0.0;
        for (const auto& idx : batches_of(plan.val, train.batch_size, nullptr)) {
            total += batch_loss(idx).item<double>() * static_cast<double>(idx.size());
        }
        return total / static_cast<double>(plan.val.size());
    };
    auto save = [&](const fs::path& p) { save_checkpoint(p, ModelKind::FagNet, snapshot, *net); };

    std::vector<EpochRecord> history;
    auto result = run_epochs(train, plan, fold_dir, step, validate, save, history);
    finish_evaluation(result, manifest, plan);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

RunResult train_fgcnet(const FgcNetConfig& model, const TrainConfig& train, const Manifest& manifest, int fold_id,
                       const fs::path& fold_dir) {
    const auto started = std::chrono::steady_clock::now();
    model.validate();
    train.validate();
    const auto plan = plan_for_fold(manifest, train, fold_id);
    if (plan.train.empty()) fail(ErrorKind::InvalidInput, "fold " + std::to_string(fold_id) + " has no training samples");

    const auto snapshot = fgcnet_run_config(model, train);
    prepare_fold_dir(fold_dir, snapshot);

    torch::manual_seed(train.seed);
    auto net = build_fgcnet(model);
    auto opt = make_adam(net->parameters(), train);
    ImageStore store(manifest, model.input_size);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(train.seed, 0x6e6f697365ULL));

    auto step = [&](const std::vector<std::size_t>& idx, EpochRecord& rec) {
        set_lr(opt, rec.lr);
        net->train();
        opt.zero_grad();
        const auto terms = fgc_objective(net, store.batch(idx), ages_of(manifest, idx), &gen);
        terms.total.backward();
        opt.step();
        const double n = static_cast<double>(idx.size());
        rec.recon_l1 += terms.recon_l1.item<double>() * n;
        rec.disc_l2 += terms.disc_l2.item<double>() * n;
        rec.kl += terms.kl.item<double>() * n;
        return terms.total.item<double>() * n;
    };
    auto validate = [&] {
        net->eval();
        torch::NoGradGuard no_grad;
        // Fixed draw so validation losses compare across epochs.
        auto val_gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(train.seed, 0x76616cULL));
        double total = 0.0;
        for (const auto& idx : batches_of(plan.val, train.batch_size, nullptr)) {
            const auto terms = fgc_objective(net, store.batch(idx), ages_of(manifest, idx), &val_gen);
            total += terms.total.item<double>() * static_cast<double>(idx.size());
        }
        return total / static_cast<double>(plan.val.size());
    };
    auto save = [&](const fs::path& p) { save_checkpoint(p, ModelKind::FgcNet, snapshot, *net); };

    std::vector<EpochRecord> history;
    auto result = run_epochs(train, plan, fold_dir, step, validate, save, history);

    std::ofstream terms(fold_dir / "terms.csv");
    if (!terms) fail(ErrorKind::Io, "cannot write " + (fold_dir / "terms.csv").string());
    terms << "epoch,recon_l1,disc_l2,kl\n";
    for (const auto& r : result.history) {
        terms << r.epoch << ',' << format_real(r.recon_l1) << ',' << format_real(r.disc_l2) << ',' << format_real(r.kl)
              << '\n';
    }
    finish_evaluation(result, manifest, plan);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

EvalResult evaluate_records(const fs::path& checkpoint, const Manifest& manifest, const std::vector<std::size_t>& indices,
                            const std::optional<Config>& expected) {
    const auto header = read_checkpoint_header(checkpoint);
    const Config& config = expected ? *expected : header.config;
    if (indices.empty()) fail(ErrorKind::InvalidInput, "evaluation split is empty");

    EvalResult result;
    result.kind = header.kind;
    result.samples = indices.size();
    std::vector<double> predicted_age;
    std::vector<Gender> predicted_gender;
    const int batch = static_cast<int>(config.get_int("train.batch_size", 16));

    if (header.kind == ModelKind::FagNet) {
        const auto model = FagNetConfig::from_config(config);
        auto net = build_fagnet(model);
        load_checkpoint_into(checkpoint, ModelKind::FagNet, *net);
        net->eval();
        torch::NoGradGuard no_grad;
        ImageStore store(manifest, model.input_size);
        result.age = model.head == Head::Age;
        for (const auto& idx : batches_of(indices, std::max(batch, 1), nullptr)) {
            const auto out = net->forward(store.batch(idx));
            for (std::int64_t i = 0; i < out.size(0); ++i) {
                if (result.age) {
                    predicted_age.push_back(out[i].item<double>());
                } else {
                    predicted_gender.push_back(out[i][0].item<double>() >= out[i][1].item<double>() ? Gender::Male
                                                                                                   : Gender::Female);
                }
            }
        }
    } else {
        const auto model = FgcNetConfig::from_config(config);
        auto net = build_fgcnet(model);
        load_checkpoint_into(checkpoint, ModelKind::FgcNet, *net);
        net->eval();
        torch::NoGradGuard no_grad;
        ImageStore store(manifest, model.input_size);
        for (const auto& idx : batches_of(indices, std::max(batch, 1), nullptr)) {
            const auto out = net->discriminate_normalized(store.batch(idx)) * model.age_norm;
            for (std::int64_t i = 0; i < out.size(0); ++i) predicted_age.push_back(out[i].item<double>());
        }
    }

    if (result.age) {
        std::vector<double> actual;
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const auto& r = manifest.records[indices[k]];
            actual.push_back(r.age_years);
            result.age_predictions.push_back({r.image_path.generic_string(), r.age_years, predicted_age[k]});
        }
        result.regression = regression_metrics(EvalBatch(actual, predicted_age));
        // Labels are whole years, so cumulative scores compare whole-year
        // predictions; MAE and MSE keep the raw output.
        std::vector<double> rounded(predicted_age.size());
        std::transform(predicted_age.begin(), predicted_age.end(), rounded.begin(), [](double p) { return std::round(p); });
        const EvalBatch whole_years(actual, rounded);
        for (int j = 0; j < 6; ++j) result.cs[static_cast<std::size_t>(j)] = cs_score(whole_years, j);
        for (int j = 2; j <= 4; ++j) result.mcs[static_cast<std::size_t>(j - 2)] = mcs_score(whole_years, j);
    } else {
        std::vector<Gender> actual;
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const auto& r = manifest.records[indices[k]];
            actual.push_back(r.gender);
            result.gender_predictions.push_back({r.image_path.generic_string(), r.gender, predicted_gender[k]});
        }
        result.counts = confusion_counts(actual, predicted_gender);
        try {
            result.gender = classification_report(result.counts);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::UndefinedMetric) throw;
            warn(std::string(e.what()) + "; ratios reported as NaN");
            const double nan = std::numeric_limits<double>::quiet_NaN();
            result.gender = {nan, nan, nan, nan, nan,
                             100.0 * static_cast<double>(result.counts.tp + result.counts.tn) /
                                 static_cast<double>(result.counts.total())};
        }
    }
    return result;
}

EvalResult evaluate_fold(const fs::path& checkpoint, const Manifest& manifest, int fold_id,
                         const std::optional<Config>& expected) {
    const auto header = read_checkpoint_header(checkpoint);
    const auto train = TrainConfig::from_config(expected ? *expected : header.config);
    const auto plan = plan_for_fold(manifest, train, fold_id);
    return evaluate_records(checkpoint, manifest, plan.test, expected);
}

void write_eval_csv(const EvalResult& r, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    if (r.age) {
        out << "MAE,MSE,CS_0,CS_1,CS_2,CS_3,CS_4,CS_5,MCS-2,MCS-3,MCS-4\n";
        std::vector<std::string> v{format_real(r.regression.mae), format_real(r.regression.mse)};
        for (const double c : r.cs) v.push_back(format_real(c));
        for (const double m : r.mcs) v.push_back(format_real(m));
        out << csv::join(v) << '\n';
    } else {
        const auto& g = r.gender;
        out << "tp,fp,tn,fn,sensitivity,specificity,ppv,npv,f1,accuracy\n";
        out << csv::join({std::to_string(r.counts.tp), std::to_string(r.counts.fp), std::to_string(r.counts.tn),
                          std::to_string(r.counts.fn), cell(g.sensitivity), cell(g.specificity), cell(g.ppv),
                          cell(g.npv), cell(g.f1), cell(g.accuracy_percent)})
            << '\n';
    }
}

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "epoch,lr,train_loss,val_loss\n";
    for (const auto& r : history) {
        out << r.epoch << ',' << format_real(r.lr) << ',' << format_real(r.train_loss) << ',' << cell(r.val_loss)
            << '\n';
    }
}

std::vector<EpochRecord> read_history_csv(const fs::path& path) {
    const auto table = csv::read(path);
    const int e = table.column("epoch"), lr = table.column("lr"), tl = table.column("train_loss"),
              vl = table.column("val_loss");
    if (e < 0 || lr < 0 || tl < 0 || vl < 0) fail(ErrorKind::Format, path.string() + ": not a history file");
    std::vector<EpochRecord> out;
    for (const auto& row : table.rows) {
        EpochRecord r;
        try {
            r.epoch = std::stoi(row.at(static_cast<std::size_t>(e)));
            r.lr = std::stod(row.at(static_cast<std::size_t>(lr)));
            r.train_loss = std::stod(row.at(static_cast<std::size_t>(tl)));
            const auto& v = row.at(static_cast<std::size_t>(vl));
            r.val_loss = v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(v);
        } catch (const std::exception&) {
            fail(ErrorKind::Format, path.string() + ": malformed history row");
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace fundus
