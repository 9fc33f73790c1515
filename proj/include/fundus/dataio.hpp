#ifndef FUNDUS_DATAIO_HPP
#define FUNDUS_DATAIO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fundus/image.hpp"
#include "fundus/metrics.hpp"

namespace fundus {

enum class Split { Train, Val, Test, Unassigned };

std::string to_string(Split s);
Split parse_split(const std::string& text);

struct SampleRecord {
    std::filesystem::path image_path;
    double age_years = 0.0;
    Gender gender = Gender::Male;
    std::string subject_id;
    Split split = Split::Unassigned;
    std::string source;
};

struct Manifest {
    std::vector<SampleRecord> records;
    std::string provenance;
    // Relative image paths resolve against this directory.
    std::filesystem::path root;
    // Rows dropped during ingestion (missing image files, unusable labels).
    std::size_t skipped = 0;

    std::size_t size() const { return records.size(); }
    std::filesystem::path resolve(const SampleRecord& r) const;

    /// Record invariants plus unique image paths.
    void validate() const;
};

inline constexpr const char* kManifestHeader = "image_path,age_years,gender,subject_id,split,source";

/// CSV with header `image_path,age_years,gender,subject_id,split,source`.
/// Invalid rows are collected and reported together with their line numbers.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// ODIR-5K style metadata (CSV export of the annotation sheet): one row per
/// patient with `ID`, `Patient Age`, `Patient Sex`, `Left-Fundus`,
/// `Right-Fundus`. Both eyes share the patient ID as subject.
Manifest ingest_odir(const std::filesystem::path& metadata_file, const std::filesystem::path& image_dir);

struct SynthParams {
    int count = 32;
    std::uint64_t seed = 42;
    int image_size = 64;
    int age_min = 10;
    int age_max = 80;
    int vessel_min = 4;
    int vessel_max = 7;
    // Disc brightness gain per year of age.
    double disc_brightness_slope = 0.005;
    // Vessel heading wobble (radians) gained per year of age.
    double tortuosity_slope = 0.006;

    void validate() const;
};

struct SynthSample {
    ImageTensor image;
    double disc_cx = 0.0;
    double disc_cy = 0.0;
    double disc_r = 0.0;
};

/// Renders one synthetic fundus. Deterministic in (params, age, gender, seed).
SynthSample render_fundus(const SynthParams& params, double age, Gender gender, std::uint64_t seed);

/// Mean intensity over the disc interior of a rendered image.
double disc_mean_intensity(const ImageTensor& image, double cx, double cy, double r);

/// Writes `images/synth_NNNN.png`, `manifest.csv` and `truth.csv` into out_dir.
Manifest synth_generate(const SynthParams& params, const std::filesystem::path& out_dir);

struct FoldAssignment {
    int k = 0;
    // Fold index of every manifest record, in manifest order.
    std::vector<int> fold_of_sample;
};

/// Seeded shuffle of distinct subjects dealt round-robin into k folds.
FoldAssignment kfold_split(const Manifest& manifest, int k, std::uint64_t seed);

struct FoldPlan {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Test = fold `fold_id`; the remaining subjects are split into validation
/// (`val_fraction` of subjects, seeded) and training.
FoldPlan plan_fold(const Manifest& manifest, const FoldAssignment& folds, int fold_id, double val_fraction,
                   std::uint64_t seed);

/// Uses the manifest's own split column.
FoldPlan plan_from_splits(const Manifest& manifest);

/// Throws invalid-state if any subject appears in both test and train/val.
void check_fold_isolation(const Manifest& manifest, const FoldPlan& plan);

/// Copy of the manifest with the split column filled from a plan.
Manifest with_splits(const Manifest& manifest, const FoldPlan& plan);

}  // namespace fundus

#endif
