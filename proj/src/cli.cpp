#include "fundus/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>

#include "fundus/config.hpp"
#include "fundus/dataio.hpp"
#include "fundus/error.hpp"
#include "fundus/reports.hpp"
#include "fundus/trainer.hpp"

namespace fundus {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<long long> seed;
    bool print_config = false;

    // synth
    int count = 32;
    int size = 64;
    std::string out;
    // ingest
    std::string metadata;
    std::string images;
    // split / train / evaluate
    std::string manifest;
    int folds = 0;
    std::string name;
    int fold = 0;
    // evaluate / generate
    std::string checkpoint;
    std::string image;
    std::vector<double> ages;
    bool stretch = false;
    // report
    std::string run;
    std::vector<std::string> evals;
};

Config effective_config(const Options& o) {
    Config c = o.config_path.empty() ? Config{} : Config::load(o.config_path);
    for (const auto& ov : o.overrides) c.apply_override(ov);
    if (o.seed) c.set("train.seed", std::to_string(*o.seed));
    return c;
}

std::uint64_t seed_or(const Options& o, const Config& c, const std::string& key, std::uint64_t fallback) {
    if (o.seed) return static_cast<std::uint64_t>(*o.seed);
    return static_cast<std::uint64_t>(c.get_int(key, static_cast<long long>(fallback)));
}

std::string manifest_path(const Options& o, const Config& c) {
    auto path = o.manifest.empty() ? c.get_string("data.manifest", "") : o.manifest;
    if (path.empty()) fail(ErrorKind::Usage, "no manifest: pass --manifest or set data.manifest");
    return path;
}

void cmd_synth(const Options& o, const Config& c, std::ostream& out) {
    SynthParams p;
    p.count = o.count;
    p.image_size = o.size;
    p.seed = seed_or(o, c, "data.synth.seed", p.seed);
    p.age_min = static_cast<int>(c.get_int("data.synth.age_min", p.age_min));
    p.age_max = static_cast<int>(c.get_int("data.synth.age_max", p.age_max));
    p.disc_brightness_slope = c.get_double("data.synth.disc_brightness_slope", p.disc_brightness_slope);
    p.tortuosity_slope = c.get_double("data.synth.tortuosity_slope", p.tortuosity_slope);
    const fs::path dir = o.out.empty() ? fs::path("data") : fs::path(o.out);
    const auto m = synth_generate(p, dir);
    out << "wrote " << m.size() << " images to " << (dir / "images").string() << '\n';
    out << "wrote manifest " << (dir / "manifest.csv").string() << " (" << m.size() << " records)\n";
    out << "wrote ground truth " << (dir / "truth.csv").string() << '\n';
}

void cmd_ingest(const Options& o, std::ostream& out) {
    auto m = ingest_odir(o.metadata, o.images);
    const fs::path dest = o.out.empty() ? fs::path("manifest.csv") : fs::path(o.out);
    save_manifest(m, dest);
    out << "wrote manifest " << dest.string() << " (" << m.size() << " records; " << m.provenance << ")\n";
}

void cmd_split(const Options& o, const Config& c, std::ostream& out) {
    const auto m = load_manifest(manifest_path(o, c));
    auto train = TrainConfig::from_config(c);
    if (o.folds > 0) train.folds = o.folds;
    train.validate();
    const fs::path dir = o.out.empty() ? fs::path("splits") : fs::path(o.out);
    fs::create_directories(dir);
    for (int k = 1; k <= train.folds; ++k) {
        const auto plan = plan_for_fold(m, train, k);
        auto split = with_splits(m, plan);
        // Keep the written manifest loadable from its new location.
        for (auto& r : split.records) r.image_path = fs::absolute(m.resolve(r));
        const auto path = dir / ("fold-" + std::to_string(k) + ".csv");
        save_manifest(split, path);
        out << "wrote " << path.string() << " (train " << plan.train.size() << ", val " << plan.val.size()
            << ", test " << plan.test.size() << ")\n";
    }
}

void report_run(const RunResult& r, int fold, std::ostream& out) {
    out << "trained fold " << fold << ": " << r.history.size() << " epochs"
        << (r.stopped_early ? " (early stop)" : "") << ", best epoch " << r.best_epoch << ", checkpoint "
        << r.best_checkpoint.string() << '\n';
    out << "wrote history " << (r.fold_dir / "history.csv").string() << '\n';
    if (r.evaluation) out << "wrote evaluation " << (r.fold_dir / "eval.csv").string() << '\n';
}

void cmd_train(const Options& o, const Config& c, std::ostream& out) {
    if (o.config_path.empty()) fail(ErrorKind::Usage, "train needs --config");
    const auto m = load_manifest(manifest_path(o, c));
    const auto train = TrainConfig::from_config(c);
    const auto model = c.get_string("model", "fagnet");
    const auto name = o.name.empty() ? c.get_string("run.name", fs::path(o.config_path).stem().string()) : o.name;

    const bool presplit = std::all_of(m.records.begin(), m.records.end(),
                                      [](const SampleRecord& r) { return r.split != Split::Unassigned; });
    std::vector<int> folds;
    if (o.fold > 0) {
        folds.push_back(o.fold);
    } else {
        const int k = presplit ? 1 : train.folds;
        for (int f = 1; f <= k; ++f) folds.push_back(f);
    }
    const auto root = runs_root();
    for (const int f : folds) {
        const auto dir = fold_directory(root, name, f);
        if (model == "fagnet") {
            report_run(train_fagnet(FagNetConfig::from_config(c), ClfParams::from_config(c), train, m, f, dir), f, out);
        } else if (model == "fgcnet") {
            report_run(train_fgcnet(FgcNetConfig::from_config(c), train, m, f, dir), f, out);
        } else {
            fail(ErrorKind::InvalidConfig, "model must be 'fagnet' or 'fgcnet', got '" + model + "'");
        }
    }
}

int fold_from_path(const fs::path& checkpoint) {
    static const std::regex pattern(R"(fold-(\d+))");
    std::smatch match;
    const auto dir = checkpoint.parent_path().filename().string();
    return std::regex_match(dir, match, pattern) ? std::stoi(match[1]) : 1;
}

void cmd_evaluate(const Options& o, const Config& c, std::ostream& out) {
    if (o.checkpoint.empty()) fail(ErrorKind::Usage, "evaluate needs --checkpoint");
    const fs::path ckpt = o.checkpoint;
    read_checkpoint_header(ckpt);
    const auto m = load_manifest(manifest_path(o, c));
    const int fold = o.fold > 0 ? o.fold : fold_from_path(ckpt);
    const auto result =
        evaluate_fold(ckpt, m, fold, o.config_path.empty() ? std::nullopt : std::optional<Config>(c));
    const fs::path dest = o.out.empty() ? ckpt.parent_path() / "eval.csv" : fs::path(o.out);
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    write_eval_csv(result, dest);
    auto table = cv_table({fold_scores(result)});
    table.labels.front() = "FCV-" + std::to_string(fold);
    out << table.to_text();
    out << "wrote evaluation " << dest.string() << " (" << result.samples << " test samples, fold " << fold << ")\n";
}

void cmd_generate(const Options& o, const Config& c, std::ostream& out) {
    if (o.checkpoint.empty() || o.image.empty()) fail(ErrorKind::Usage, "generate needs --checkpoint and --image");
    auto ages = o.ages;
    if (ages.empty()) ages = c.get_doubles("generate.ages", {10, 20, 30, 40, 50, 60, 70, 80});
    const auto seed = seed_or(o, c, "generate.seed", 42);
    const fs::path dest = o.out.empty() ? fs::path("progression.png") : fs::path(o.out);
    const auto grid = progression_grid(o.checkpoint, o.image, ages, seed, dest,
                                       o.stretch || c.get_bool("generate.contrast_stretch", false));
    out << "wrote grid " << grid.grid_path.string() << " (" << grid.panels.size() + 1 << " panels)\n";
    for (const auto& p : grid.panels) {
        out << "wrote age " << format_real(p.age) << ": " << p.generated_path.string() << ", "
            << p.difference_path.string() << '\n';
    }
    out << "wrote metadata " << grid.metadata_path.string() << '\n';
}

void cmd_report(const Options& o, std::ostream& out) {
    std::vector<fs::path> evals(o.evals.begin(), o.evals.end());
    if (evals.empty()) {
        if (o.run.empty()) fail(ErrorKind::Usage, "report needs --run or --eval files");
        std::vector<std::pair<int, fs::path>> found;
        if (!fs::is_directory(o.run)) fail(ErrorKind::Io, "run directory not found: " + o.run);
        static const std::regex pattern(R"(fold-(\d+))");
        for (const auto& entry : fs::directory_iterator(o.run)) {
            std::smatch match;
            const auto dir = entry.path().filename().string();
            if (entry.is_directory() && std::regex_match(dir, match, pattern) && fs::exists(entry.path() / "eval.csv")) {
                found.emplace_back(std::stoi(match[1]), entry.path() / "eval.csv");
            }
        }
        std::sort(found.begin(), found.end());
        for (const auto& [k, p] : found) evals.push_back(p);
        if (evals.empty()) fail(ErrorKind::InvalidInput, "no fold-*/eval.csv under " + o.run);
    }
    std::vector<FoldScores> folds;
    for (const auto& p : evals) folds.push_back(read_fold_scores(p));
    const auto table = cv_table(folds);
    const fs::path base = !o.out.empty() ? fs::path(o.out) : (!o.run.empty() ? fs::path(o.run) / "cv_table" : fs::path("cv_table"));
    if (base.has_parent_path()) fs::create_directories(base.parent_path());
    const auto csv_path = fs::path(base.string() + ".csv");
    const auto txt_path = fs::path(base.string() + ".txt");
    std::ofstream(csv_path) << table.to_csv();
    std::ofstream(txt_path) << table.to_text();
    if (!fs::exists(csv_path) || !fs::exists(txt_path)) fail(ErrorKind::Io, "cannot write " + base.string() + ".*");
    out << table.to_text();
    out << "wrote table " << csv_path.string() << '\n';
    out << "wrote table " << txt_path.string() << '\n';
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Fundus age/gender estimation and age-conditioned generation", "fundus_lab"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config_path, "Run configuration file (key = value)");
    app.add_option("--override", o.overrides, "key=value, applied after the config file")->take_all();
    app.add_option("--seed", o.seed, "Seed for every seeded step");
    app.add_flag("--print-config", o.print_config, "Print the effective configuration and exit");

    auto* synth = app.add_subcommand("synth", "Render a synthetic fundus dataset");
    synth->add_option("--count", o.count, "Number of images")->check(CLI::PositiveNumber);
    synth->add_option("--size", o.size, "Image side in pixels");
    synth->add_option("--out", o.out, "Output directory");

    auto* ingest = app.add_subcommand("ingest", "Build a manifest from ODIR-style metadata");
    ingest->add_option("--metadata", o.metadata, "Metadata CSV")->required();
    ingest->add_option("--images", o.images, "Image directory")->required();
    ingest->add_option("--out", o.out, "Manifest to write");

    auto* split = app.add_subcommand("split", "Write subject-grouped fold manifests");
    split->add_option("--manifest", o.manifest, "Input manifest");
    split->add_option("--folds", o.folds, "Fold count (default train.folds)");
    split->add_option("--out", o.out, "Output directory");

    auto* train = app.add_subcommand("train", "Train FAG-Net or FGC-Net");
    train->add_option("--manifest", o.manifest, "Manifest (default data.manifest)");
    train->add_option("--name", o.name, "Run name under the runs directory");
    train->add_option("--fold", o.fold, "Single fold to train (default: all)");

    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on its fold's test split");
    evaluate->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    evaluate->add_option("--manifest", o.manifest, "Manifest (default data.manifest)");
    evaluate->add_option("--fold", o.fold, "Fold id (default: from the checkpoint directory)");
    evaluate->add_option("--out", o.out, "Scores CSV to write");

    auto* generate = app.add_subcommand("generate", "Age-progression grid from an FGC-Net checkpoint");
    generate->add_option("--checkpoint", o.checkpoint, "FGC-Net checkpoint");
    generate->add_option("--image", o.image, "Source image");
    generate->add_option("--ages", o.ages, "Target ages")->delimiter(',');
    generate->add_flag("--stretch", o.stretch, "Min-max stretch each difference map");
    generate->add_option("--out", o.out, "Grid PNG to write");

    auto* report = app.add_subcommand("report", "Cross-validation table from fold evaluations");
    report->add_option("--run", o.run, "Run directory holding fold-<k>/eval.csv");
    report->add_option("--eval", o.evals, "Explicit eval.csv files, in fold order");
    report->add_option("--out", o.out, "Output path without extension");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        const auto config = effective_config(o);
        if (o.print_config) {
            out << config.to_text();
            return 0;
        }
        if (synth->parsed()) cmd_synth(o, config, out);
        else if (ingest->parsed()) cmd_ingest(o, out);
        else if (split->parsed()) cmd_split(o, config, out);
        else if (train->parsed()) cmd_train(o, config, out);
        else if (evaluate->parsed()) cmd_evaluate(o, config, out);
        else if (generate->parsed()) cmd_generate(o, config, out);
        else if (report->parsed()) cmd_report(o, out);
        else {
            err << app.help();
            return 2;
        }
    } catch (const Error& e) {
        err << "fundus_lab: " << e.what() << '\n';
        return e.kind() == ErrorKind::Usage ? 2 : 1;
    } catch (const std::exception& e) {
        err << "fundus_lab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace fundus
