#pragma once

// Batch study pipeline: phantom datasets with train/validation/test splits,
// validation-only threshold calibration, per-case evaluation of several
// methods, and Table-style reports.

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "segbench/imageops.hpp"
#include "segbench/metrics.hpp"
#include "segbench/nrrd.hpp"
#include "segbench/phantom.hpp"
#include "segbench/predictor.hpp"
#include "segbench/segmentation.hpp"
#include "segbench/stats.hpp"

namespace segbench::study {

namespace fs = std::filesystem;

enum class Split { train, validation, test_retro, test_pro };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test_retro: return "test_retro";
        case Split::test_pro: return "test_pro";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test_retro") return Split::test_retro;
    if (s == "test_pro") return Split::test_pro;
    throw ParseError("unknown split '" + s + "'");
}

inline bool is_test(Split s) { return s == Split::test_retro || s == Split::test_pro; }

struct CaseEntry {
    std::string case_id;
    fs::path volume_path;   // absolute once loaded
    fs::path gt_mask_path;  // absolute once loaded
    BoundingBox tumor_box;
    Split split = Split::train;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::vector<CaseEntry> cases;

    std::vector<CaseEntry> in_split(std::initializer_list<Split> splits) const {
        std::vector<CaseEntry> out;
        for (const auto& c : cases)
            for (auto s : splits)
                if (c.split == s) out.push_back(c);
        return out;
    }
    std::size_t count(Split s) const {
        std::size_t n = 0;
        for (const auto& c : cases) n += c.split == s;
        return n;
    }
};

inline nlohmann::json box_json(const BoundingBox& b) { return {{"min", vec_json(b.min)}, {"max", vec_json(b.max)}}; }
inline BoundingBox json_box(const nlohmann::json& j) {
    try {
        return BoundingBox(json_vec(j.at("min")), json_vec(j.at("max")));
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("bounding box: ") + e.what());
    }
}

/// Paths in the manifest file are stored relative to its directory.
inline void write_manifest(const fs::path& path, const Manifest& m) {
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    nlohmann::json j;
    j["seed"] = m.seed;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : m.cases)
        j["cases"].push_back({{"case_id", c.case_id},
                              {"split", to_string(c.split)},
                              {"volume", fs::relative(c.volume_path, base).generic_string()},
                              {"gt_mask", fs::relative(c.gt_mask_path, base).generic_string()},
                              {"tumor_box", box_json(c.tumor_box)}});
    if (!base.empty()) fs::create_directories(base);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << j.dump(2) << "\n";
}

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path.string());
    const fs::path base = fs::absolute(path).parent_path();
    Manifest m;
    try {
        const auto j = nlohmann::json::parse(is);
        m.seed = j.value("seed", std::uint64_t{0});
        std::map<std::string, int> seen;
        for (const auto& cj : j.at("cases")) {
            CaseEntry c;
            c.case_id = cj.at("case_id").get<std::string>();
            if (seen[c.case_id]++) throw ParseError("duplicate case id '" + c.case_id + "'");
            c.split = parse_split(cj.at("split").get<std::string>());
            fs::path vp = cj.at("volume").get<std::string>();
            fs::path gp = cj.at("gt_mask").get<std::string>();
            c.volume_path = vp.is_absolute() ? vp : base / vp;
            c.gt_mask_path = gp.is_absolute() ? gp : base / gp;
            c.tumor_box = json_box(cj.at("tumor_box"));
            m.cases.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct DatasetOptions {
    double spacing = 1.0;           // mm
    double min_volume_ml = 170.0;   // phantom extent volume range
    double max_volume_ml = 340.0;
    double min_diameter_mm = 10.1;  // lesion equivalent diameter range
    double max_diameter_mm = 40.6;
    double background = 100.0;
    double speckle_sigma = 0.12;
    double blur_sigma_mm = 0.6;
    std::size_t n_test_pro = 0;
};

/// Phantom parameters for case `index` of a dataset drawn with `seed`.
inline PhantomSpec sample_phantom(std::uint64_t seed, std::size_t index, const DatasetOptions& o) {
    std::seed_seq seq{std::uint64_t(0x5e9b3c4du), seed, std::uint64_t(index)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    PhantomSpec s;
    s.spacing = o.spacing;
    s.background_level = o.background;
    s.speckle_sigma = o.speckle_sigma;
    s.boundary_blur_sigma = o.blur_sigma_mm;
    s.rng_seed = rng();

    const double volume_mm3 = uniform(o.min_volume_ml, o.max_volume_ml) * 1000.0;
    const double a = uniform(0.9, 1.1), b = uniform(0.9, 1.1);
    const double side = std::cbrt(volume_mm3);
    s.volume_extent = Vec3(side * a, side * b, side / (a * b));

    const double diameter = std::exp(uniform(std::log(o.min_diameter_mm), std::log(o.max_diameter_mm)));
    const double ra = uniform(0.85, 1.15), rb = uniform(0.85, 1.15);
    s.lesion_radii = diameter / 2.0 * Vec3(ra, rb, 1.0 / (ra * rb));

    // Keep the lesion and its ROI margin inside the volume where it fits.
    for (int ax = 0; ax < 3; ++ax) {
        const double ext = s.volume_extent[ax], r = s.lesion_radii[ax];
        double pad = r + kRoiMarginMm + 2.0;
        if (2 * pad > ext) pad = r + 1.0;
        s.lesion_center[ax] = uniform(pad, ext - pad);
    }
    const bool hyper = u01(rng) < 0.5;
    s.lesion_contrast = hyper ? o.background * uniform(0.5, 0.9) : -o.background * uniform(0.4, 0.6);
    return s;
}

inline Manifest make_dataset(const fs::path& out_dir, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                             std::uint64_t seed, const DatasetOptions& o = {}) {
    fs::create_directories(out_dir);
    const fs::path root = fs::absolute(out_dir);
    Manifest m;
    m.seed = seed;
    std::vector<Split> splits;
    splits.insert(splits.end(), n_train, Split::train);
    splits.insert(splits.end(), n_val, Split::validation);
    splits.insert(splits.end(), n_test, Split::test_retro);
    splits.insert(splits.end(), o.n_test_pro, Split::test_pro);
    for (std::size_t i = 0; i < splits.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "case_%04zu", i);
        const PhantomSpec spec = sample_phantom(seed, i, o);
        const Phantom p = make_phantom(spec);
        const fs::path dir = root / "cases" / id;
        fs::create_directories(dir);
        CaseEntry c{id, dir / "volume.nrrd", dir / "mask.nrrd", spec.lesion_box(), splits[i]};
        nrrd::write(c.volume_path, p.volume);
        nrrd::write(c.gt_mask_path, p.truth);
        std::ofstream(dir / "phantom.json", std::ios::trunc) << nlohmann::json(spec).dump(2) << "\n";
        m.cases.push_back(std::move(c));
    }
    write_manifest(root / "manifest.json", m);
    return m;
}

// ---------------------------------------------------------------------------
// Shared per-case plumbing

inline BoundingBox case_roi(const CaseEntry& c, const Volume& v) {
    return roi_with_margin(c.tumor_box, kRoiMarginMm, v.grid().world_extent());
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Calibration

struct Calibration {
    double threshold = 0.5;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double auc_roc = 0.0;
    double auc_pr = 0.0;
    std::size_t n_voxels = 0;
    std::size_t n_cases = 0;
    std::string method;
    Curves curves;
};

struct CalibrationOptions {
    nrrd::ReadObserver on_read;
};

/// Pools every ROI voxel of every validation case (probability sampled at
/// the ground-truth voxel centers) and picks the max-F1 threshold. Only
/// validation cases are opened.
inline Calibration calibrate_threshold(const Manifest& manifest, const PredictorHandle& predictor,
                                       const CalibrationOptions& opt = {}) {
    const auto cases = manifest.in_split({Split::validation});
    if (cases.empty()) throw InvalidArgument("calibrate: manifest has no validation cases");
    std::vector<float> pos, neg;
    for (const auto& c : cases) {
        try {
            const Volume v = nrrd::read_volume(c.volume_path, opt.on_read);
            const Mask gt = nrrd::read_mask(c.gt_mask_path, opt.on_read);
            require_same_grid(v.grid(), gt.grid(), "calibrate: volume vs ground truth");
            const BoundingBox roi = case_roi(c, v);
            const Prediction pred = run_predictor(predictor, v, roi, c.tumor_box.center());
            const Mask gt_roi = crop(gt, roi);
            const Image<float> prob = resample_onto(pred.map.image(), gt_roi.grid(), Interpolation::trilinear);
            for (std::size_t i = 0; i < prob.size(); ++i) (gt_roi[i] ? pos : neg).push_back(std::clamp(prob[i], 0.0f, 1.0f));
        } catch (const Error& e) {
            throw Error("calibrate: case " + c.case_id + ": " + e.what());
        }
    }
    Calibration cal;
    cal.n_cases = cases.size();
    cal.n_voxels = pos.size() + neg.size();
    cal.method = predictor.name();
    cal.curves = pr_roc_from_classes(std::move(pos), std::move(neg));
    cal.threshold = select_threshold_max_f1(cal.curves.points);
    const auto& best = point_at(cal.curves.points, cal.threshold);
    cal.f1 = best.f1;
    cal.precision = best.precision;
    cal.recall = best.recall;
    cal.auc_roc = cal.curves.auc_roc;
    cal.auc_pr = cal.curves.auc_pr;
    return cal;
}

inline nlohmann::json calibration_json(const Calibration& c) {
    return {{"threshold", c.threshold}, {"f1", c.f1},           {"precision", c.precision}, {"recall", c.recall},
            {"auc_roc", c.auc_roc},     {"auc_pr", c.auc_pr},   {"n_voxels", c.n_voxels},   {"n_cases", c.n_cases},
            {"method", c.method}};
}

inline void write_calibration(const fs::path& out_dir, const Calibration& c) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "threshold.json", std::ios::trunc) << calibration_json(c).dump(2) << "\n";
    write_curve_csv(out_dir / "curve.csv", c.curves.points, 20000, c.threshold);
}

/// Accepts a bare number or a path to a threshold.json written by calibrate.
inline double parse_threshold(const std::string& arg) {
    try {
        std::size_t used = 0;
        const double t = std::stod(arg, &used);
        if (used == arg.size()) {
            if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("threshold must lie in [0,1]");
            return t;
        }
    } catch (const std::invalid_argument&) {
    } catch (const std::out_of_range&) {
    }
    std::ifstream is(arg);
    if (!is) throw IoError("threshold: '" + arg + "' is neither a number nor a readable file");
    try {
        const double t = nlohmann::json::parse(is).at("threshold").get<double>();
        if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("threshold must lie in [0,1]");
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("threshold file " + arg + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Evaluation

struct CaseResult {
    std::string case_id;
    std::string method;
    Split split = Split::test_retro;
    CaseMetrics metrics;
    bool failed = false;
    std::string error;
};

/// Scores recorded for a case that produced no segmentation.
inline CaseMetrics missed_case(double elapsed_s) {
    CaseMetrics m;
    m.dice = 0.0;
    m.precision = 0.0;
    m.precision_defined = false;
    m.recall = 0.0;
    m.rvd = 1.0;
    m.detected = false;
    m.elapsed_s = elapsed_s;
    return m;
}

/// A method: anything that turns (volume, roi, case) into a probability map.
struct Method {
    std::string name;
    std::function<ProbabilityMap(const Volume&, const BoundingBox&, const CaseEntry&)> predict;
    double threshold = 0.5;
};

inline Method method_from(const PredictorHandle& h, double calibrated_threshold) {
    Method m;
    m.name = h.name();
    m.threshold = h.fixed_threshold().value_or(h.produces_probabilities() ? calibrated_threshold : 0.5);
    m.predict = [h](const Volume& v, const BoundingBox& roi, const CaseEntry& c) {
        return run_predictor(h, v, roi, c.tumor_box.center()).map;
    };
    return m;
}

struct EvaluateOptions {
    unsigned workers = 1;
    nrrd::ReadObserver on_read;
};

inline constexpr double kAlpha = 0.05;

struct MetricSummary {
    std::string metric;
    std::string method;
    std::size_t n = 0;
    std::optional<SummaryQuartiles> q;
};

struct StudyReport {
    std::vector<std::string> methods;
    double threshold = 0.5;
    double alpha = kAlpha;
    int n_comparisons = 1;
    std::vector<CaseResult> cases;  // case-major, methods in order
    std::vector<MetricSummary> summaries;
    std::vector<MetricSummary> timing;
    std::vector<SignificanceRow> significance;
    std::map<std::string, std::pair<std::size_t, std::size_t>> detection;  // detected, total
    std::size_t failures = 0;
};

inline const std::vector<std::string>& report_metrics() {
    static const std::vector<std::string> m{"dice", "precision", "recall", "rvd", "hd95"};
    return m;
}

inline std::optional<double> metric_value(const CaseMetrics& m, const std::string& metric) {
    if (metric == "dice") return m.dice;
    if (metric == "precision") return m.precision;
    if (metric == "recall") return m.recall;
    if (metric == "rvd") return m.rvd;
    if (metric == "hd95") return m.hd95_mm;
    if (metric == "time") return m.elapsed_s;
    throw InvalidArgument("unknown metric '" + metric + "'");
}

/// Aggregates per-case results into quartiles, detection rates and the
/// pairwise significance table (Bonferroni over all method pairs).
inline StudyReport assemble_report(const std::vector<std::string>& methods, std::vector<CaseResult> cases,
                                   double threshold, double alpha = kAlpha) {
    StudyReport r;
    r.methods = methods;
    r.threshold = threshold;
    r.alpha = alpha;
    r.cases = std::move(cases);
    const std::size_t m = methods.size();
    r.n_comparisons = std::max<int>(1, static_cast<int>(m * (m - 1) / 2));

    std::map<std::string, std::map<std::string, std::map<std::string, double>>> table;  // metric -> method -> case
    for (const auto& c : r.cases) {
        if (c.failed) ++r.failures;
        auto& det = r.detection[c.method];
        det.first += c.metrics.detected;
        det.second += 1;
        for (const auto& metric : report_metrics())
            if (auto v = metric_value(c.metrics, metric)) table[metric][c.method][c.case_id] = *v;
        table["time"][c.method][c.case_id] = c.metrics.elapsed_s;
    }
    auto summarise = [&](const std::string& metric, std::vector<MetricSummary>& out) {
        for (const auto& method : methods) {
            MetricSummary s{metric, method, 0, std::nullopt};
            std::vector<double> vals;
            for (const auto& [id, v] : table[metric][method]) vals.push_back(v);
            s.n = vals.size();
            if (!vals.empty()) s.q = quartiles(vals);
            out.push_back(s);
        }
    };
    for (const auto& metric : report_metrics()) summarise(metric, r.summaries);
    summarise("time", r.timing);

    for (const auto& metric : report_metrics())
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) {
                // Pair only the cases where both methods have a value (HD95 is
                // undefined for missed cases).
                MethodColumn a{methods[i], {}}, b{methods[j], {}};
                const auto& ta = table[metric][methods[i]];
                const auto& tb = table[metric][methods[j]];
                for (const auto& [id, v] : ta)
                    if (auto it = tb.find(id); it != tb.end()) {
                        a.by_case[id] = v;
                        b.by_case[id] = it->second;
                    }
                auto rows = significance_report(metric, {a, b}, alpha, r.n_comparisons);
                r.significance.insert(r.significance.end(), rows.begin(), rows.end());
            }
    return r;
}

/// Runs every method on every test case. Failures are recorded as misses.
inline StudyReport evaluate_methods(const Manifest& manifest, const std::vector<Method>& methods, double threshold,
                                    const EvaluateOptions& opt = {}) {
    const auto cases = manifest.in_split({Split::test_retro, Split::test_pro});
    if (cases.empty()) throw InvalidArgument("evaluate: manifest has no test cases");
    if (methods.empty()) throw InvalidArgument("evaluate: no methods given");
    std::vector<CaseResult> results(cases.size() * methods.size());
    parallel_for(cases.size(), opt.workers, [&](std::size_t ci) {
        const auto& c = cases[ci];
        std::optional<Volume> v;
        std::optional<Mask> gt;
        std::string load_error;
        try {
            v = nrrd::read_volume(c.volume_path, opt.on_read);
            gt = nrrd::read_mask(c.gt_mask_path, opt.on_read);
            require_same_grid(v->grid(), gt->grid(), "volume vs ground truth");
            if (count(*gt) == 0) throw InvalidArgument("ground truth mask is empty");
        } catch (const std::exception& e) {
            load_error = e.what();
        }
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            CaseResult& r = results[ci * methods.size() + mi];
            r.case_id = c.case_id;
            r.method = methods[mi].name;
            r.split = c.split;
            if (!load_error.empty()) {
                r.failed = true;
                r.error = load_error;
                r.metrics = missed_case(0.0);
                continue;
            }
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const BoundingBox roi = case_roi(c, *v);
                const ProbabilityMap map = methods[mi].predict(*v, roi, c);
                const Mask local = postprocess(binarize(map, methods[mi].threshold));
                const Mask full = resample_onto(local, gt->grid(), Interpolation::nearest);
                const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                r.metrics = compute_case_metrics(full, *gt, elapsed);
            } catch (const std::exception& e) {
                r.failed = true;
                r.error = e.what();
                r.metrics = missed_case(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            }
        }
    });
    std::vector<std::string> names;
    for (const auto& m : methods) names.push_back(m.name);
    return assemble_report(names, std::move(results), threshold);
}

inline StudyReport evaluate(const Manifest& manifest, const std::vector<PredictorHandle>& predictors, double threshold,
                            const EvaluateOptions& opt = {}) {
    std::vector<Method> methods;
    std::map<std::string, int> seen;
    for (const auto& p : predictors) {
        if (seen[p.name()]++) throw InvalidArgument("evaluate: duplicate method name '" + p.name() + "'");
        methods.push_back(method_from(p, threshold));
    }
    return evaluate_methods(manifest, methods, threshold, opt);
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string num(double v, const char* f = "%.9g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string pad(const std::string& s, std::size_t w, bool right = true) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

inline std::string metric_label(const std::string& m) {
    if (m == "dice") return "Dice";
    if (m == "precision") return "Precision";
    if (m == "recall") return "Recall";
    if (m == "rvd") return "RVD";
    if (m == "hd95") return "HD95 (mm)";
    if (m == "time") return "Time (s)";
    return m;
}

inline std::string quartile_table(const StudyReport& r, const std::vector<MetricSummary>& rows,
                                  const std::vector<std::string>& metrics) {
    const std::size_t label_w = 12, col_w = 8;
    std::ostringstream os;
    os << pad("", label_w, false);
    for (const auto& m : r.methods) {
        const std::size_t w = 3 * col_w;
        std::string name = m.size() > w - 2 ? m.substr(0, w - 2) : m;
        os << " |" << pad(name, w, false);
    }
    os << "\n" << pad("", label_w, false);
    for (std::size_t i = 0; i < r.methods.size(); ++i)
        os << " |" << pad("25%", col_w) << pad("Med.", col_w) << pad("75%", col_w);
    os << "\n";
    for (const auto& metric : metrics) {
        os << pad(metric_label(metric), label_w, false);
        for (const auto& method : r.methods) {
            os << " |";
            for (const auto& s : rows)
                if (s.metric == metric && s.method == method) {
                    if (s.q) os << pad(num(s.q->q25, "%.2f"), col_w) << pad(num(s.q->median, "%.2f"), col_w)
                                << pad(num(s.q->q75, "%.2f"), col_w);
                    else os << pad("n/a", col_w) << pad("n/a", col_w) << pad("n/a", col_w);
                }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace detail

inline std::string report_text(const StudyReport& r) {
    std::ostringstream os;
    os << "Segmentation study report\n";
    os << "test cases: " << (r.methods.empty() ? 0 : r.cases.size() / r.methods.size())
       << ", methods: " << r.methods.size() << ", decision threshold: " << detail::num(r.threshold, "%.6f") << "\n\n";
    os << detail::quartile_table(r, r.summaries, report_metrics());
    os << "\nHD95 excludes cases without a segmentation.\n\nLesion detection (Dice > 0.5)\n";
    for (const auto& m : r.methods) {
        const auto it = r.detection.find(m);
        const auto [d, n] = it == r.detection.end() ? std::pair<std::size_t, std::size_t>{0, 0} : it->second;
        os << "  " << detail::pad(m, 24, false) << " " << d << "/" << n << "  sensitivity "
           << detail::num(n ? double(d) / double(n) : 0.0, "%.2f") << "\n";
    }
    os << "\nWilcoxon signed-rank (two-sided), alpha " << detail::num(r.alpha, "%.3f") << " / " << r.n_comparisons
       << " comparisons = " << detail::num(bonferroni(r.alpha, r.n_comparisons), "%.4f") << "\n";
    for (const auto& s : r.significance) {
        os << "  " << detail::pad(detail::metric_label(s.metric), 10, false) << " " << s.method_a << " vs " << s.method_b
           << ": n=" << s.n_pairs << " p=" << (s.p_value ? detail::num(*s.p_value, "%.4g") : std::string("n/a"))
           << (s.significant ? "  significant" : "") << "\n";
    }
    if (r.failures) {
        os << "\nFailed cases (scored as misses): " << r.failures << "\n";
        for (const auto& c : r.cases)
            if (c.failed) os << "  " << c.case_id << " [" << c.method << "] " << c.error << "\n";
    }
    return os.str();
}

inline std::string timing_text(const StudyReport& r) {
    std::ostringstream os;
    os << "Compute time per case (s), from predictor dispatch to post-processed mask.\n"
          "Batch compute time only; not comparable with timings that include human interaction.\n\n";
    os << detail::quartile_table(r, r.timing, {"time"});
    return os.str();
}

inline nlohmann::json cases_json(const StudyReport& r) {
    nlohmann::json j;
    j["methods"] = r.methods;
    j["threshold"] = r.threshold;
    j["alpha"] = r.alpha;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : r.cases)
        j["cases"].push_back({{"case_id", c.case_id},
                              {"method", c.method},
                              {"split", to_string(c.split)},
                              {"failed", c.failed},
                              {"error", c.error},
                              {"metrics", c.metrics}});
    return j;
}

inline StudyReport report_from_cases_json(const nlohmann::json& j) {
    try {
        std::vector<CaseResult> cases;
        for (const auto& cj : j.at("cases")) {
            CaseResult c;
            c.case_id = cj.at("case_id").get<std::string>();
            c.method = cj.at("method").get<std::string>();
            c.split = parse_split(cj.value("split", std::string("test_retro")));
            c.failed = cj.value("failed", false);
            c.error = cj.value("error", std::string{});
            c.metrics = cj.at("metrics").get<CaseMetrics>();
            cases.push_back(std::move(c));
        }
        return assemble_report(j.at("methods").get<std::vector<std::string>>(), std::move(cases),
                               j.value("threshold", 0.5), j.value("alpha", kAlpha));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("cases.json: ") + e.what());
    }
}

/// Writes the deterministic report files (report.txt, report.csv,
/// significance.csv, cases.csv) and the run-dependent ones (timing.txt,
/// timing.csv, cases.json).
inline void write_report(const fs::path& dir, const StudyReport& r) {
    fs::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream os(dir / name, std::ios::trunc);
        if (!os) throw IoError("cannot write " + (dir / name).string());
        return os;
    };
    open("report.txt") << report_text(r);
    {
        auto os = open("report.csv");
        os << "metric,method,n,q25,median,q75\n";
        for (const auto& s : r.summaries)
            os << s.metric << "," << s.method << "," << s.n << ","
               << (s.q ? detail::num(s.q->q25) + "," + detail::num(s.q->median) + "," + detail::num(s.q->q75) : ",,")
               << "\n";
        for (const auto& m : r.methods) {
            const auto it = r.detection.find(m);
            if (it == r.detection.end()) continue;
            os << "detection_sensitivity," << m << "," << it->second.second << ",,"
               << detail::num(it->second.second ? double(it->second.first) / double(it->second.second) : 0.0) << ",\n";
        }
    }
    {
        auto os = open("significance.csv");
        os << "metric,method_a,method_b,n_pairs,p_value,alpha_adj,significant\n";
        for (const auto& s : r.significance)
            os << s.metric << "," << s.method_a << "," << s.method_b << "," << s.n_pairs << ","
               << (s.p_value ? detail::num(*s.p_value) : std::string()) << ","
               << detail::num(bonferroni(r.alpha, r.n_comparisons)) << "," << (s.significant ? "true" : "false") << "\n";
    }
    {
        auto os = open("cases.csv");
        os << "case_id,method,split,dice,precision,recall,rvd,hd95_mm,detected,failed\n";
        for (const auto& c : r.cases)
            os << c.case_id << "," << c.method << "," << to_string(c.split) << "," << detail::num(c.metrics.dice) << ","
               << detail::num(c.metrics.precision) << "," << detail::num(c.metrics.recall) << ","
               << detail::num(c.metrics.rvd) << "," << (c.metrics.hd95_mm ? detail::num(*c.metrics.hd95_mm) : "") << ","
               << (c.metrics.detected ? "true" : "false") << "," << (c.failed ? "true" : "false") << "\n";
    }
    open("timing.txt") << timing_text(r);
    {
        auto os = open("timing.csv");
        os << "case_id,method,elapsed_s\n";
        for (const auto& c : r.cases) os << c.case_id << "," << c.method << "," << detail::num(c.metrics.elapsed_s) << "\n";
    }
    open("cases.json") << cases_json(r).dump(2) << "\n";
}

}  // namespace segbench::study
