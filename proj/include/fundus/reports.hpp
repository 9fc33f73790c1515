#ifndef FUNDUS_REPORTS_HPP
#define FUNDUS_REPORTS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/trainer.hpp"

namespace fundus {

/// MAE, MSE, CS_0..CS_5, MCS-2, MCS-3, MCS-4.
const std::vector<std::string>& age_columns();

/// One fold's named scores, e.g. one eval.csv.
struct FoldScores {
    std::vector<std::string> columns;
    std::vector<double> values;
};

FoldScores fold_scores(const EvalResult& result);
FoldScores read_fold_scores(const std::filesystem::path& eval_csv);

struct CvTable {
    std::vector<std::string> columns;
    std::vector<std::string> labels;  // FCV-1 .. FCV-k, Average
    std::vector<std::vector<double>> rows;

    const std::vector<double>& average() const { return rows.back(); }
    double at(const std::string& label, const std::string& column) const;

    std::string to_csv() const;
    /// Fixed-width columns, three decimals.
    std::string to_text() const;
};

/// Fold rows plus an Average row holding the per-column arithmetic mean.
/// Every fold must carry the same column set.
CvTable cv_table(const std::vector<FoldScores>& folds);

/// |original - generated| per element. With `contrast_stretch` the map is
/// rescaled so its own minimum and maximum become 0 and 1; `range` receives
/// the pre-stretch minimum and maximum.
ImageTensor difference_map(const ImageTensor& original, const ImageTensor& generated, bool contrast_stretch = false,
                           std::pair<double, double>* range = nullptr);

struct ProgressionPanel {
    double age = 0.0;
    ImageTensor generated;
    ImageTensor difference;
    std::pair<double, double> difference_range;
    std::filesystem::path generated_path;
    std::filesystem::path difference_path;
};

struct ProgressionGrid {
    std::filesystem::path source;
    std::vector<ProgressionPanel> panels;  // ascending age
    ImageTensor grid;                      // source, then one difference map per age
    std::filesystem::path grid_path;
    std::filesystem::path metadata_path;
};

/// Loads an FGC-Net checkpoint and the source image, generates one image per
/// age and writes the one-row grid to `out_path`, `<stem>-age-<a>.png` and
/// `<stem>-diff-<a>.png` beside it, and a `<stem>.json` sidecar with the
/// ages, seed and checkpoint SHA-256.
ProgressionGrid progression_grid(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
                                 std::vector<double> ages, std::uint64_t seed, const std::filesystem::path& out_path,
                                 bool contrast_stretch = false);

}  // namespace fundus

#endif
