#include "fundus/reports.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fundus/checkpoint.hpp"
#include "fundus/csv.hpp"
#include "fundus/error.hpp"
#include "fundus/fgcnet.hpp"

namespace fundus {

namespace fs = std::filesystem;

const std::vector<std::string>& age_columns() {
    static const std::vector<std::string> columns{"MAE",  "MSE",  "CS_0",  "CS_1",  "CS_2", "CS_3",
                                                  "CS_4", "CS_5", "MCS-2", "MCS-3", "MCS-4"};
    return columns;
}

FoldScores fold_scores(const EvalResult& r) {
    FoldScores s;
    if (r.age) {
        s.columns = age_columns();
        s.values = {r.regression.mae, r.regression.mse};
        s.values.insert(s.values.end(), r.cs.begin(), r.cs.end());
        s.values.insert(s.values.end(), r.mcs.begin(), r.mcs.end());
    } else {
        const auto& g = r.gender;
        s.columns = {"sensitivity", "specificity", "ppv", "npv", "f1", "accuracy"};
        s.values = {g.sensitivity, g.specificity, g.ppv, g.npv, g.f1, g.accuracy_percent};
    }
    return s;
}

FoldScores read_fold_scores(const fs::path& eval_csv) {
    const auto table = csv::read(eval_csv);
    if (table.rows.size() != 1 || table.rows.front().size() != table.header.size()) {
        fail(ErrorKind::Format, eval_csv.string() + ": expected a header and one row of scores");
    }
    FoldScores s;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        const auto& cell = table.rows.front()[i];
        s.columns.push_back(table.header[i]);
        try {
            s.values.push_back(cell.empty() ? std::nan("") : std::stod(cell));
        } catch (const std::exception&) {
            fail(ErrorKind::Format, eval_csv.string() + ": column '" + table.header[i] + "' is not numeric");
        }
    }
    return s;
}

double CvTable::at(const std::string& label, const std::string& column) const {
    const auto r = std::find(labels.begin(), labels.end(), label);
    const auto c = std::find(columns.begin(), columns.end(), column);
    if (r == labels.end() || c == columns.end()) fail(ErrorKind::InvalidInput, "no cell " + label + "/" + column);
    return rows[static_cast<std::size_t>(r - labels.begin())][static_cast<std::size_t>(c - columns.begin())];
}

namespace {

std::string fixed3(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::string CvTable::to_csv() const {
    std::vector<std::string> head{"fold"};
    head.insert(head.end(), columns.begin(), columns.end());
    std::string out = csv::join(head) + "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::string> cells{labels[r]};
        for (const double v : rows[r]) cells.push_back(fixed3(v));
        out += csv::join(cells) + "\n";
    }
    return out;
}

std::string CvTable::to_text() const {
    std::size_t label_w = 4;
    for (const auto& l : labels) label_w = std::max(label_w, l.size());
    std::vector<std::size_t> widths;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        std::size_t w = columns[c].size();
        for (const auto& row : rows) w = std::max(w, fixed3(row[c]).size());
        widths.push_back(w);
    }
    std::ostringstream out;
    out << std::string(label_w, ' ');
    for (std::size_t c = 0; c < columns.size(); ++c) out << "  " << std::string(widths[c] - columns[c].size(), ' ') << columns[c];
    out << '\n';
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << labels[r] << std::string(label_w - labels[r].size(), ' ');
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const auto v = fixed3(rows[r][c]);
            out << "  " << std::string(widths[c] - v.size(), ' ') << v;
        }
        out << '\n';
    }
    return out.str();
}

CvTable cv_table(const std::vector<FoldScores>& folds) {
    if (folds.empty()) fail(ErrorKind::InvalidInput, "cv table needs at least one fold");
    CvTable t;
    t.columns = folds.front().columns;
    if (t.columns.empty()) fail(ErrorKind::InvalidInput, "fold scores have no columns");
    std::vector<double> sum(t.columns.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& fold = folds[f];
        if (fold.columns != t.columns) {
            fail(ErrorKind::InvalidInput, "fold " + std::to_string(f + 1) + " has a different column set");
        }
        if (fold.values.size() != t.columns.size()) {
            fail(ErrorKind::InvalidInput, "fold " + std::to_string(f + 1) + " has " + std::to_string(fold.values.size()) +
                                              " values for " + std::to_string(t.columns.size()) + " columns");
        }
        t.labels.push_back("FCV-" + std::to_string(f + 1));
        t.rows.push_back(fold.values);
        for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += fold.values[c];
    }
    for (auto& s : sum) s /= static_cast<double>(folds.size());
    t.labels.push_back("Average");
    t.rows.push_back(sum);
    return t;
}

ImageTensor difference_map(const ImageTensor& original, const ImageTensor& generated, bool contrast_stretch,
                           std::pair<double, double>* range) {
    if (original.empty() || generated.empty() || !original.tensor().sizes().equals(generated.tensor().sizes())) {
        fail(ErrorKind::InvalidInput, "difference map needs two images of the same shape");
    }
    auto d = (original.tensor().to(torch::kFloat32) - generated.tensor().to(torch::kFloat32)).abs().clamp(0.0, 1.0);
    const double lo = d.min().item<double>();
    const double hi = d.max().item<double>();
    if (range) *range = {lo, hi};
    if (contrast_stretch && hi > lo) d = ((d - lo) / (hi - lo)).clamp(0.0, 1.0);
    return ImageTensor(d);
}

namespace {

std::string age_tag(double age) {
    auto s = format_real(age);
    std::replace(s.begin(), s.end(), '.', 'p');
    return s;
}

}  // namespace

ProgressionGrid progression_grid(const fs::path& checkpoint, const fs::path& image_path, std::vector<double> ages,
                                 std::uint64_t seed, const fs::path& out_path, bool contrast_stretch) {
    if (ages.empty()) fail(ErrorKind::InvalidInput, "age list is empty");
    const auto header = read_checkpoint_header(checkpoint);
    if (header.kind != ModelKind::FgcNet) {
        fail(ErrorKind::Compatibility, checkpoint.string() + " holds a " + to_string(header.kind) +
                                           " model; progression grids need fgcnet");
    }
    const auto config = FgcNetConfig::from_config(header.config);
    auto net = build_fgcnet(config);
    load_checkpoint_into(checkpoint, ModelKind::FgcNet, *net);

    const auto source = load_image(image_path, config.input_size);
    std::sort(ages.begin(), ages.end());
    const auto generated = generate_progression(net, source, ages, seed);

    ProgressionGrid grid;
    grid.source = image_path;
    grid.grid_path = out_path;
    const auto dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    const auto stem = out_path.stem().string();
    fs::create_directories(dir);

    std::vector<ImageTensor> strip{source};
    for (std::size_t i = 0; i < ages.size(); ++i) {
        ProgressionPanel p;
        p.age = ages[i];
        p.generated = generated[i];
        p.difference = difference_map(source, generated[i], contrast_stretch, &p.difference_range);
        p.generated_path = dir / (stem + "-age-" + age_tag(p.age) + ".png");
        p.difference_path = dir / (stem + "-diff-" + age_tag(p.age) + ".png");
        save_png(p.generated, p.generated_path);
        save_png(p.difference, p.difference_path);
        strip.push_back(p.difference);
        grid.panels.push_back(std::move(p));
    }
    grid.grid = hconcat(strip);
    save_png(grid.grid, out_path);

    nlohmann::json meta;
    meta["source"] = image_path.generic_string();
    meta["checkpoint"] = checkpoint.generic_string();
    meta["checkpoint_sha256"] = file_sha256(checkpoint);
    meta["seed"] = seed;
    meta["ages"] = ages;
    meta["contrast_stretch"] = contrast_stretch;
    meta["panels"] = nlohmann::json::array();
    for (const auto& p : grid.panels) {
        meta["panels"].push_back({{"age", p.age},
                                  {"generated", p.generated_path.filename().string()},
                                  {"difference", p.difference_path.filename().string()},
                                  {"difference_min", p.difference_range.first},
                                  {"difference_max", p.difference_range.second}});
    }
    grid.metadata_path = dir / (stem + ".json");
    std::ofstream out(grid.metadata_path);
    if (!out) fail(ErrorKind::Io, "cannot write " + grid.metadata_path.string());
    out << meta.dump(2) << '\n';
    return grid;
}

}  // namespace fundus
