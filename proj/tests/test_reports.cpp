#include "torch_doctest.hpp"

#include <json.hpp>

#include <fstream>
#include <random>

#include <unistd.h>

#include "fundus/checkpoint.hpp"
#include "fundus/error.hpp"
#include "fundus/reports.hpp"

using namespace fundus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("fundus_reports_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

FoldScores age_fold(std::vector<double> values) { return {age_columns(), std::move(values)}; }

std::vector<FoldScores> published_folds() {
    return {
        age_fold({2.269, 22.026, 32.736, 69.263, 80.133, 84.132, 85.756, 87.172, 60.710, 66.566, 71.174}),
        age_fold({2.286, 24.734, 33.944, 71.470, 80.258, 83.632, 86.006, 88.172, 61.890, 67.326, 71.062}),
        age_fold({2.286, 25.573, 79.921, 81.842, 83.239, 84.941, 86.905, 88.256, 81.667, 82.485, 83.369}),
        age_fold({1.401, 3.324, 18.280, 62.354, 88.147, 95.159, 97.663, 99.249, 56.260, 65.984, 72.320}),
        age_fold({0.517, 3.961, 83.282, 93.147, 94.718, 95.258, 96.377, 97.76, 90.382, 91.608, 92.562}),
    };
}

fs::path tiny_fgc_checkpoint(const fs::path& dir) {
    FgcNetConfig c;
    c.input_size = 64;
    c.stem_filters = 4;
    c.max_filters = 32;
    c.latent_dim = 8;
    c.label_hidden = 16;
    c.disc_filters = 4;
    c.disc_fc = {32, 16, 8};
    torch::manual_seed(17);
    auto net = build_fgcnet(c);
    const auto path = dir / "fgc.ckpt";
    save_checkpoint(path, ModelKind::FgcNet, fgcnet_run_config(c, TrainConfig{}), *net);
    return path;
}

fs::path sample_image(const fs::path& dir) {
    SynthParams p;
    p.count = 1;
    p.seed = 8;
    const auto m = synth_generate(p, dir / "synth");
    return m.resolve(m.records.front());
}

}  // namespace

TEST_CASE("average row is the per-column mean of the fold rows") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 7);
        std::vector<FoldScores> folds;
        for (int f = 0; f < k; ++f) {
            std::vector<double> v;
            for (std::size_t c = 0; c < age_columns().size(); ++c) v.push_back(u(rng));
            folds.push_back(age_fold(v));
        }
        const auto t = cv_table(folds);
        REQUIRE(t.rows.size() == static_cast<std::size_t>(k + 1));
        CHECK(t.labels.back() == "Average");
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            double s = 0.0;
            for (const auto& f : folds) s += f.values[c];
            CHECK(std::abs(t.average()[c] - s / k) <= 1e-9);
        }
    }
}

TEST_CASE("cv table small cases") {
    const auto single = cv_table({age_fold({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11})});
    CHECK(single.average() == single.rows.front());
    CHECK(single.labels == std::vector<std::string>{"FCV-1", "Average"});

    std::vector<double> a(11, 0.0), b(11, 0.0);
    a[0] = 1.0;
    b[0] = 3.0;
    CHECK(cv_table({age_fold(a), age_fold(b)}).at("Average", "MAE") == 2.0);
}

TEST_CASE("cv table rejects inconsistent folds") {
    auto odd = age_fold(std::vector<double>(11, 1.0));
    odd.columns[3] = "CS_9";
    try {
        cv_table({age_fold(std::vector<double>(11, 1.0)), odd});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidInput);
    }
    CHECK_THROWS_AS(cv_table({}), Error);
    CHECK_THROWS_AS(cv_table({age_fold({1.0, 2.0})}), Error);
}

TEST_CASE("published fold rows") {
    const auto t = cv_table(published_folds());
    CHECK(std::abs(t.at("FCV-5", "MCS-2") - (83.282 + 93.147 + 94.718) / 3.0) <= 1e-3);
    CHECK(std::abs((83.282 + 93.147 + 94.718) / 3.0 - 90.382) <= 1e-3);
    CHECK(t.to_text().find("Average") != std::string::npos);
}

TEST_CASE("published average row from fold rows") {
    // Printed bottom row of the cross-validation table.
    const std::vector<double> printed{1.634, 15.151, 49.705, 75.767, 85.475, 88.814,
                                      90.729, 92.168, 70.315, 74.940, 78.098};
    const auto t = cv_table(published_folds());
    for (std::size_t c = 0; c < printed.size(); ++c) {
        CAPTURE(t.columns[c]);
        CAPTURE(t.average()[c]);
        CHECK(std::abs(t.average()[c] - printed[c]) <= 0.001);
    }
}

TEST_CASE("table output formats") {
    const auto t = cv_table({age_fold({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11.23456})});
    const auto csv = t.to_csv();
    CHECK(csv.rfind("fold,MAE,MSE,CS_0", 0) == 0);
    CHECK(csv.find("FCV-1,1.000,2.000") != std::string::npos);
    CHECK(csv.find("11.235") != std::string::npos);
    const auto text = t.to_text();
    std::istringstream lines(text);
    std::string first, second;
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(first.size() == second.size());
}

TEST_CASE("eval.csv scores round trip") {
    TempDir dir("eval");
    EvalResult r;
    r.regression.mae = 1.5;
    r.regression.mse = 4.25;
    r.cs = {10, 20, 30, 40, 50, 60};
    r.mcs = {20, 25, 30};
    write_eval_csv(r, dir.path / "eval.csv");
    const auto s = read_fold_scores(dir.path / "eval.csv");
    CHECK(s.columns == age_columns());
    CHECK(s.values == fold_scores(r).values);
}

TEST_CASE("difference maps") {
    torch::manual_seed(3);
    const ImageTensor a(torch::rand({3, 16, 16}));
    const ImageTensor b(torch::rand({3, 16, 16}));
    CHECK(difference_map(a, a).tensor().eq(0).all().item<bool>());
    CHECK(difference_map(ImageTensor::filled(8, 8, 0.0f), ImageTensor::filled(8, 8, 1.0f)).tensor().eq(1).all().item<bool>());
    CHECK(torch::equal(difference_map(a, b).tensor(), difference_map(b, a).tensor()));
    const auto d = difference_map(a, b).tensor();
    CHECK(d.ge(0).all().item<bool>());
    CHECK(d.le(1).all().item<bool>());
    CHECK(d.gt(0).any().item<bool>());

    std::pair<double, double> range;
    const auto s = difference_map(a, b, true, &range).tensor();
    CHECK(s.max().item<double>() == doctest::Approx(1.0));
    CHECK(s.min().item<double>() == doctest::Approx(0.0));
    CHECK(range.second == doctest::Approx(d.max().item<double>()));

    CHECK_THROWS_AS(difference_map(a, ImageTensor(torch::rand({3, 8, 16}))), Error);
}

TEST_CASE("progression grid layout and sidecar") {
    TempDir dir("grid");
    const auto ckpt = tiny_fgc_checkpoint(dir.path);
    const auto image = sample_image(dir.path);

    const auto grid = progression_grid(ckpt, image, {80, 10, 20, 30, 40, 50, 60, 70}, 42, dir.path / "out" / "grid.png");
    CHECK(grid.panels.size() == 8);
    CHECK(grid.grid.width() == 9 * 64);
    CHECK(grid.grid.height() == 64);
    CHECK(grid.panels.front().age == 10.0);
    CHECK(grid.panels.back().age == 80.0);
    CHECK(fs::exists(dir.path / "out" / "grid.png"));
    CHECK(fs::exists(dir.path / "out" / "grid-age-10.png"));
    CHECK(fs::exists(dir.path / "out" / "grid-diff-80.png"));

    std::ifstream in(grid.metadata_path);
    const auto meta = nlohmann::json::parse(in);
    CHECK(meta["seed"] == 42);
    CHECK(meta["ages"].size() == 8);
    CHECK(meta["checkpoint_sha256"] == file_sha256(ckpt));

    const auto single = progression_grid(ckpt, image, {35}, 42, dir.path / "single.png");
    CHECK(single.grid.width() == 2 * 64);

    const auto again = progression_grid(ckpt, image, {80, 10, 20, 30, 40, 50, 60, 70}, 42, dir.path / "again.png");
    CHECK(file_sha256(dir.path / "again.png") == file_sha256(dir.path / "out" / "grid.png"));

    CHECK_THROWS_AS(progression_grid(ckpt, image, {}, 42, dir.path / "empty.png"), Error);
}
