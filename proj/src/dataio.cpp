#include "fundus/dataio.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fundus/config.hpp"
#include "fundus/csv.hpp"
#include "fundus/error.hpp"
#include "fundus/fgcnet.hpp"

namespace fundus {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    if (text == "unassigned" || text.empty()) return Split::Unassigned;
    fail(ErrorKind::InvalidInput, "unknown split '" + text + "'");
}

fs::path Manifest::resolve(const SampleRecord& r) const {
    return r.image_path.is_absolute() || root.empty() ? r.image_path : root / r.image_path;
}

namespace {

std::string check_record(const SampleRecord& r) {
    if (r.image_path.empty()) return "empty image_path";
    if (!std::isfinite(r.age_years) || r.age_years < 1.0 || r.age_years > 120.0) {
        return "age " + format_real(r.age_years) + " outside [1, 120]";
    }
    if (r.subject_id.empty()) return "empty subject_id";
    return {};
}

}  // namespace

void Manifest::validate() const {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto problem = check_record(records[i]);
        if (!problem.empty()) fail(ErrorKind::InvalidInput, "record " + std::to_string(i) + ": " + problem);
        if (!seen.insert(records[i].image_path.generic_string()).second) {
            fail(ErrorKind::InvalidInput, "duplicate image_path " + records[i].image_path.generic_string());
        }
    }
}

Manifest load_manifest(const fs::path& path) {
    const auto table = csv::read(path);
    const std::vector<std::string> expected{"image_path", "age_years", "gender", "subject_id", "split", "source"};
    std::vector<int> col;
    for (const auto& name : expected) {
        const int c = table.column(name);
        if (c < 0) fail(ErrorKind::Format, path.string() + ": missing column '" + name + "'");
        col.push_back(c);
    }

    Manifest m;
    m.root = fs::absolute(path).parent_path();
    m.provenance = "loaded from " + path.string();
    std::vector<std::string> problems;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "line " + std::to_string(table.lines[r]);
        if (row.size() != expected.size()) {
            problems.push_back(where + ": expected " + std::to_string(expected.size()) + " fields, got " +
                               std::to_string(row.size()));
            continue;
        }
        try {
            SampleRecord rec;
            rec.image_path = row[col[0]];
            std::size_t used = 0;
            rec.age_years = std::stod(row[col[1]], &used);
            if (used != row[col[1]].size()) throw std::invalid_argument("age");
            rec.gender = parse_gender(row[col[2]]);
            rec.subject_id = row[col[3]];
            rec.split = parse_split(row[col[4]]);
            rec.source = row[col[5]];
            const auto problem = check_record(rec);
            if (!problem.empty()) {
                problems.push_back(where + ": " + problem);
                continue;
            }
            m.records.push_back(std::move(rec));
        } catch (const Error& e) {
            problems.push_back(where + ": " + e.what());
        } catch (const std::exception&) {
            problems.push_back(where + ": age '" + row[col[1]] + "' is not a number");
        }
    }
    if (!problems.empty()) {
        std::string msg = path.string() + ": " + std::to_string(problems.size()) + " invalid row(s)";
        for (const auto& p : problems) msg += "\n  " + p;
        fail(ErrorKind::Format, msg);
    }
    m.validate();
    return m;
}

void save_manifest(const Manifest& manifest, const fs::path& path) {
    manifest.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write manifest " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : manifest.records) {
        out << csv::join({r.image_path.generic_string(), format_real(r.age_years), to_string(r.gender), r.subject_id,
                          to_string(r.split), r.source})
            << '\n';
    }
}

namespace {

// "Patient Age" -> "patientage"
std::string normalize_header(const std::string& s) {
    std::string out;
    for (const char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

int find_column(const csv::Table& t, std::initializer_list<const char*> names) {
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        const auto h = normalize_header(t.header[i]);
        for (const char* n : names) {
            if (h == n) return static_cast<int>(i);
        }
    }
    return -1;
}

}  // namespace

Manifest ingest_odir(const fs::path& metadata_file, const fs::path& image_dir) {
    const auto table = csv::read(metadata_file);
    const int id_col = find_column(table, {"id", "patientid"});
    const int age_col = find_column(table, {"patientage", "age"});
    const int sex_col = find_column(table, {"patientsex", "sex", "gender"});
    const int left_col = find_column(table, {"leftfundus", "left"});
    const int right_col = find_column(table, {"rightfundus", "right"});
    if (id_col < 0 || age_col < 0 || sex_col < 0 || (left_col < 0 && right_col < 0)) {
        fail(ErrorKind::Format, metadata_file.string() +
                                    ": expected ID, Patient Age, Patient Sex and Left-/Right-Fundus columns");
    }

    Manifest m;
    std::size_t missing = 0;
    std::size_t bad_labels = 0;
    for (const auto& row : table.rows) {
        auto cell = [&](int c) { return c >= 0 && c < static_cast<int>(row.size()) ? row[c] : std::string(); };
        double age = 0.0;
        Gender gender = Gender::Male;
        try {
            age = std::stod(cell(age_col));
            gender = parse_gender(cell(sex_col));
        } catch (const std::exception&) {
            ++bad_labels;
            continue;
        }
        if (!(age >= 1.0 && age <= 120.0) || cell(id_col).empty()) {
            ++bad_labels;
            continue;
        }
        for (const int c : {left_col, right_col}) {
            const auto name = cell(c);
            if (c < 0 || name.empty()) continue;
            const auto path = image_dir / name;
            if (!fs::exists(path)) {
                ++missing;
                continue;
            }
            m.records.push_back({path, age, gender, cell(id_col), Split::Unassigned, "odir"});
        }
    }
    m.skipped = missing + bad_labels;
    m.provenance = "ODIR ingest of " + metadata_file.string() + ": " + std::to_string(m.records.size()) +
                   " records, " + std::to_string(missing) + " missing image(s) skipped, " +
                   std::to_string(bad_labels) + " row(s) with unusable labels skipped";
    if (m.records.empty()) fail(ErrorKind::EmptyIngest, "no images matched: " + m.provenance);
    m.validate();
    return m;
}

void SynthParams::validate() const {
    if (count < 1) fail(ErrorKind::InvalidInput, "synthetic count must be at least 1");
    if (image_size < 16) fail(ErrorKind::InvalidInput, "synthetic image size must be at least 16");
    if (age_min < 1 || age_max > 120 || age_min > age_max) {
        fail(ErrorKind::InvalidInput, "synthetic age range must lie within [1, 120]");
    }
    if (vessel_min < 1 || vessel_min > vessel_max) fail(ErrorKind::InvalidInput, "invalid vessel count range");
}

namespace {

void draw_vessel(cv::Mat& img, cv::Point2d start, double heading, int segments, double step, double wobble,
                 double phase, int thickness, std::mt19937_64& rng) {
    const cv::Scalar color(0.33, 0.07, 0.05);
    std::normal_distribution<double> jitter(0.0, 0.05);
    cv::Point2d p = start;
    for (int s = 0; s < segments; ++s) {
        heading += wobble * std::sin(phase + 1.3 * s) + jitter(rng);
        const cv::Point2d q = p + step * cv::Point2d(std::cos(heading), std::sin(heading));
        cv::line(img, cv::Point(cvRound(p.x), cvRound(p.y)), cv::Point(cvRound(q.x), cvRound(q.y)), color, thickness,
                 cv::LINE_8);
        p = q;
    }
}

}  // namespace

SynthSample render_fundus(const SynthParams& params, double age, Gender gender, std::uint64_t seed) {
    params.validate();
    const int n = params.image_size;
    const double size = n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // HWC float, RGB order.
    cv::Mat img(n, n, CV_32FC3, cv::Scalar(0, 0, 0));
    const double field_r = 0.46 * size;
    const cv::Point2d centre(size / 2.0, size / 2.0);
    for (int y = 0; y < n; ++y) {
        auto* row = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < n; ++x) {
            const double dx = x + 0.5 - centre.x;
            const double dy = y + 0.5 - centre.y;
            const double rr = (dx * dx + dy * dy) / (field_r * field_r);
            if (rr > 1.0) continue;
            const double shade = 1.0 - 0.35 * rr;
            row[x] = cv::Vec3f(static_cast<float>(0.62 * shade), static_cast<float>(0.27 * shade),
                               static_cast<float>(0.12 * shade));
        }
    }

    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double cx = std::round(centre.x + side * (0.16 + 0.04 * unit(rng)) * size);
    const double cy = std::round(centre.y + (unit(rng) - 0.5) * 0.1 * size);
    const double disc_r = std::max(3.0, std::round((gender == Gender::Male ? 0.085 : 0.07) * size));

    std::uniform_int_distribution<int> vessel_count(params.vessel_min, params.vessel_max);
    const int vessels = vessel_count(rng);
    const double wobble = 0.1 + params.tortuosity_slope * age;
    const int thickness = std::max(1, n / 96);
    const double step = 0.045 * size;
    for (int v = 0; v < vessels; ++v) {
        const double heading = 2.0 * std::numbers::pi * (v + 0.3 * unit(rng)) / vessels;
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        draw_vessel(img, {cx, cy}, heading, 12, step, wobble, phase, thickness + 1, rng);
        // One thinner branch leaving the trunk direction.
        const cv::Point2d fork(cx + 4.0 * step * std::cos(heading), cy + 4.0 * step * std::sin(heading));
        draw_vessel(img, fork, heading + (unit(rng) < 0.5 ? -0.6 : 0.6), 7, 0.8 * step, wobble, phase + 1.0, thickness,
                    rng);
    }

    // Sensor noise inside the field.
    std::normal_distribution<float> noise(0.0F, 0.015F);
    for (int y = 0; y < n; ++y) {
        auto* row = img.ptr<cv::Vec3f>(y);
        for (int x = 0; x < n; ++x) {
            const double dx = x + 0.5 - centre.x;
            const double dy = y + 0.5 - centre.y;
            if (dx * dx + dy * dy > field_r * field_r) continue;
            for (int c = 0; c < 3; ++c) row[x][c] += noise(rng);
        }
    }

    // The disc is drawn last and flat so its brightness is an exact function of age.
    const double b = std::clamp(0.35 + params.disc_brightness_slope * age, 0.0, 1.0);
    cv::circle(img, cv::Point(static_cast<int>(cx), static_cast<int>(cy)), static_cast<int>(disc_r),
               cv::Scalar(b, 0.95 * b, 0.75 * b), cv::FILLED, cv::LINE_8);

    cv::min(img, 1.0, img);
    cv::max(img, 0.0, img);
    auto hwc = torch::from_blob(img.data, {n, n, 3}, torch::kFloat32).clone();
    return {ImageTensor(hwc.permute({2, 0, 1}).contiguous()), cx, cy, disc_r};
}

double disc_mean_intensity(const ImageTensor& image, double cx, double cy, double r) {
    const auto h = image.height();
    const auto w = image.width();
    const auto ys = torch::arange(h, torch::kFloat64).view({h, 1});
    const auto xs = torch::arange(w, torch::kFloat64).view({1, w});
    // Interior only: one pixel in from the rasterized edge.
    const auto mask = ((xs - cx).pow(2) + (ys - cy).pow(2)) <= (r - 1.0) * (r - 1.0);
    const auto per_pixel = image.tensor().to(torch::kFloat64).mean(0);
    return per_pixel.masked_select(mask).mean().item<double>();
}

Manifest synth_generate(const SynthParams& params, const fs::path& out_dir) {
    params.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + (out_dir / "images").string() + ": " + ec.message());

    std::mt19937_64 rng(params.seed);
    std::uniform_int_distribution<int> age_dist(params.age_min, params.age_max);

    Manifest m;
    m.root = fs::absolute(out_dir);
    m.provenance = "synthetic fundus set, seed " + std::to_string(params.seed);
    std::ofstream truth(out_dir / "truth.csv");
    if (!truth) fail(ErrorKind::Io, "cannot write " + (out_dir / "truth.csv").string());
    truth << "image_path,age_years,disc_cx,disc_cy,disc_r\n";
    for (int i = 0; i < params.count; ++i) {
        const double age = age_dist(rng);
        const Gender gender = i % 2 == 0 ? Gender::Male : Gender::Female;
        const auto sample = render_fundus(params, age, gender, derive_seed(params.seed, static_cast<std::uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof name, "images/synth_%04d.png", i);
        save_png(sample.image, out_dir / name);
        char subject[16];
        std::snprintf(subject, sizeof subject, "s%04d", i);
        m.records.push_back({name, age, gender, subject, Split::Unassigned, "synthetic"});
        truth << name << ',' << format_real(age) << ',' << format_real(sample.disc_cx) << ','
              << format_real(sample.disc_cy) << ',' << format_real(sample.disc_r) << '\n';
    }
    save_manifest(m, out_dir / "manifest.csv");
    return m;
}

namespace {

std::vector<std::string> distinct_subjects(const Manifest& manifest) {
    std::set<std::string> s;
    for (const auto& r : manifest.records) s.insert(r.subject_id);
    return {s.begin(), s.end()};
}

}  // namespace

FoldAssignment kfold_split(const Manifest& manifest, int k, std::uint64_t seed) {
    if (k < 2) fail(ErrorKind::InvalidInput, "k-fold split needs k >= 2");
    auto subjects = distinct_subjects(manifest);
    if (static_cast<int>(subjects.size()) < k) {
        fail(ErrorKind::InvalidInput, "only " + std::to_string(subjects.size()) + " distinct subjects for " +
                                          std::to_string(k) + " folds");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    std::map<std::string, int> fold_of_subject;
    for (std::size_t i = 0; i < subjects.size(); ++i) fold_of_subject[subjects[i]] = static_cast<int>(i % k);

    FoldAssignment a;
    a.k = k;
    for (const auto& r : manifest.records) a.fold_of_sample.push_back(fold_of_subject.at(r.subject_id));
    return a;
}

FoldPlan plan_fold(const Manifest& manifest, const FoldAssignment& folds, int fold_id, double val_fraction,
                   std::uint64_t seed) {
    if (folds.fold_of_sample.size() != manifest.size()) {
        fail(ErrorKind::InvalidInput, "fold assignment does not match the manifest");
    }
    if (fold_id < 0 || fold_id >= folds.k) {
        fail(ErrorKind::InvalidInput, "fold id " + std::to_string(fold_id) + " outside [0, " + std::to_string(folds.k) + ")");
    }
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail(ErrorKind::InvalidInput, "val fraction must lie in [0,1)");

    std::set<std::string> rest;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (folds.fold_of_sample[i] != fold_id) rest.insert(manifest.records[i].subject_id);
    }
    std::vector<std::string> pool(rest.begin(), rest.end());
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(fold_id)));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
    if (val_fraction > 0.0 && n_val == 0 && pool.size() >= 2) n_val = 1;
    const std::set<std::string> val_subjects(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));

    FoldPlan plan;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (folds.fold_of_sample[i] == fold_id) plan.test.push_back(i);
        else if (val_subjects.count(manifest.records[i].subject_id)) plan.val.push_back(i);
        else plan.train.push_back(i);
    }
    check_fold_isolation(manifest, plan);
    return plan;
}

FoldPlan plan_from_splits(const Manifest& manifest) {
    FoldPlan plan;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        switch (manifest.records[i].split) {
            case Split::Train: plan.train.push_back(i); break;
            case Split::Val: plan.val.push_back(i); break;
            case Split::Test: plan.test.push_back(i); break;
            case Split::Unassigned: break;
        }
    }
    check_fold_isolation(manifest, plan);
    return plan;
}

void check_fold_isolation(const Manifest& manifest, const FoldPlan& plan) {
    std::set<std::string> test_subjects;
    for (const auto i : plan.test) test_subjects.insert(manifest.records.at(i).subject_id);
    for (const auto* part : {&plan.train, &plan.val}) {
        for (const auto i : *part) {
            if (test_subjects.count(manifest.records.at(i).subject_id)) {
                fail(ErrorKind::InvalidState, "subject " + manifest.records[i].subject_id + " leaks into the test fold");
            }
        }
    }
}

Manifest with_splits(const Manifest& manifest, const FoldPlan& plan) {
    Manifest out = manifest;
    for (auto& r : out.records) r.split = Split::Unassigned;
    for (const auto i : plan.train) out.records.at(i).split = Split::Train;
    for (const auto i : plan.val) out.records.at(i).split = Split::Val;
    for (const auto i : plan.test) out.records.at(i).split = Split::Test;
    return out;
}

}  // namespace fundus
