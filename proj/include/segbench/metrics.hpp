#pragma once

// Evaluation metrics: overlap (Dice, precision, recall), volume agreement,
// boundary distance (HD95), lesion detection, and the voxel-wise PR/ROC
// analysis used to choose a decision threshold.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "segbench/distance.hpp"
#include "segbench/grid.hpp"

namespace segbench {

namespace detail {

struct Overlap {
    std::size_t pred = 0;
    std::size_t truth = 0;
    std::size_t both = 0;
};

inline Overlap overlap(const Mask& pred, const Mask& gt, const char* what) {
    require_same_grid(pred.grid(), gt.grid(), what);
    Overlap o;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        o.pred += p;
        o.truth += g;
        o.both += p && g;
    }
    return o;
}

}  // namespace detail

/// 2|P∩G| / (|P|+|G|); 1 when both are empty.
inline double dice(const Mask& pred, const Mask& gt) {
    const auto o = detail::overlap(pred, gt, "dice");
    if (o.pred + o.truth == 0) return 1.0;
    return 2.0 * double(o.both) / double(o.pred + o.truth);
}

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    /// False when the prediction is empty; precision is then reported as 0.
    bool precision_defined = true;
};

inline PrecisionRecall precision_recall(const Mask& pred, const Mask& gt) {
    const auto o = detail::overlap(pred, gt, "precision_recall");
    if (o.truth == 0) throw InvalidArgument("precision_recall: ground truth mask is empty");
    PrecisionRecall pr;
    pr.recall = double(o.both) / double(o.truth);
    if (o.pred == 0) {
        pr.precision = 0.0;
        pr.precision_defined = false;
    } else {
        pr.precision = double(o.both) / double(o.pred);
    }
    return pr;
}

/// Unsigned relative volume difference |V_P - V_G| / V_G.
inline double rvd(const Mask& pred, const Mask& gt) {
    const auto o = detail::overlap(pred, gt, "rvd");
    if (o.truth == 0) throw InvalidArgument("rvd: ground truth mask is empty");
    // Voxel volume cancels; counts keep the result exact.
    return std::abs(double(o.pred) - double(o.truth)) / double(o.truth);
}

inline bool lesion_detected(const Mask& pred, const Mask& gt) { return dice(pred, gt) > 0.5; }

/// Mask voxels with at least one face neighbour outside the mask (voxels on
/// the grid border count as boundary).
inline std::vector<std::uint8_t> boundary(const Mask& m) {
    const Grid& g = m.grid();
    std::vector<std::uint8_t> b(m.size(), 0);
    static constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (std::int64_t z = 0; z < g.dims[2]; ++z)
        for (std::int64_t y = 0; y < g.dims[1]; ++y)
            for (std::int64_t x = 0; x < g.dims[0]; ++x) {
                if (!m.at(x, y, z)) continue;
                for (const auto& o : off) {
                    const auto nx = x + o[0], ny = y + o[1], nz = z + o[2];
                    if (!g.in_bounds(nx, ny, nz) || !m.at(nx, ny, nz)) {
                        b[g.linear(x, y, z)] = 1;
                        break;
                    }
                }
            }
    return b;
}

/// Percentile of an ascending list by linear interpolation between order
/// statistics (position q * (n - 1)).
inline double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("percentile of an empty list");
    const double pos = q * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

/// Distances (mm, ascending) from each boundary voxel of `from` to the
/// nearest boundary voxel of `to`, both given as site flags on `g`.
inline std::vector<double> directed_boundary_distances(const Grid& g, const std::vector<std::uint8_t>& from,
                                                       const std::vector<std::uint8_t>& to) {
    // Restrict the transform to the box holding both boundaries; every site
    // and query lies inside it, so the result is unchanged.
    Index3 lo{g.dims[0], g.dims[1], g.dims[2]}, hi{-1, -1, -1};
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (!from[i] && !to[i]) continue;
        const Index3 p = g.unravel(i);
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    const Grid sub({hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}, g.spacing, Vec3::Zero());
    std::vector<std::uint8_t> sites(sub.size(), 0);
    std::vector<std::size_t> queries;
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
                const std::size_t src = g.linear(x, y, z);
                const std::size_t dst = sub.linear(x - lo[0], y - lo[1], z - lo[2]);
                sites[dst] = to[src];
                if (from[src]) queries.push_back(dst);
            }
    const auto d2 = squared_distance_transform(sub, sites);
    std::vector<double> d;
    d.reserve(queries.size());
    for (auto q : queries) d.push_back(std::sqrt(d2[q]));
    std::sort(d.begin(), d.end());
    return d;
}

/// Symmetric 95th-percentile Hausdorff distance between mask boundaries, in
/// mm. Empty when either mask is empty.
inline std::optional<double> hd95(const Mask& pred, const Mask& gt) {
    require_same_grid(pred.grid(), gt.grid(), "hd95");
    const auto bp = boundary(pred);
    const auto bg = boundary(gt);
    const bool any_p = std::find(bp.begin(), bp.end(), 1) != bp.end();
    const bool any_g = std::find(bg.begin(), bg.end(), 1) != bg.end();
    if (!any_p || !any_g) return std::nullopt;
    const auto pg = directed_boundary_distances(pred.grid(), bp, bg);
    const auto gp = directed_boundary_distances(pred.grid(), bg, bp);
    return std::max(percentile_sorted(pg, 0.95), percentile_sorted(gp, 0.95));
}

// ---------------------------------------------------------------------------
// Threshold analysis

struct CurvePoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
};

struct Curves {
    std::vector<CurvePoint> points;  // thresholds descending
    double auc_pr = 0.0;
    double auc_roc = 0.0;
};

/// F1 from confusion counts: 2TP / (2TP + FP + FN).
inline double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    const double denom = 2.0 * double(tp) + double(fp) + double(fn);
    return denom > 0 ? 2.0 * double(tp) / denom : 0.0;
}

/// Curves from per-class score lists. A voxel is called positive when its
/// score is >= the threshold; every distinct score is one threshold.
template <class T>
Curves pr_roc_from_classes(std::vector<T> positives, std::vector<T> negatives) {
    if (positives.empty() || negatives.empty())
        throw InvalidArgument("pr_roc_curves: need at least one positive and one negative label");
    std::sort(positives.begin(), positives.end(), std::greater<T>());
    std::sort(negatives.begin(), negatives.end(), std::greater<T>());
    const std::size_t np = positives.size(), nn = negatives.size();
    Curves c;
    std::size_t ip = 0, in = 0;
    while (ip < np || in < nn) {
        T t;
        if (ip < np && in < nn) t = std::max(positives[ip], negatives[in]);
        else if (ip < np) t = positives[ip];
        else t = negatives[in];
        while (ip < np && positives[ip] == t) ++ip;
        while (in < nn && negatives[in] == t) ++in;
        CurvePoint p;
        p.threshold = double(t);
        p.tp = ip;
        p.fp = in;
        p.precision = double(ip) / double(ip + in);
        p.recall = p.tpr = double(ip) / double(np);
        p.fpr = double(in) / double(nn);
        p.f1 = f1_from_counts(ip, in, np - ip);
        c.points.push_back(p);
    }
    double prev_fpr = 0.0, prev_tpr = 0.0;
    double prev_rec = 0.0, prev_prec = c.points.front().precision;
    for (const auto& p : c.points) {
        c.auc_roc += (p.fpr - prev_fpr) * (p.tpr + prev_tpr) / 2.0;
        c.auc_pr += (p.recall - prev_rec) * (p.precision + prev_prec) / 2.0;
        prev_fpr = p.fpr;
        prev_tpr = p.tpr;
        prev_rec = p.recall;
        prev_prec = p.precision;
    }
    return c;
}

inline Curves pr_roc_curves(std::span<const std::pair<double, bool>> scores) {
    std::vector<double> pos, neg;
    for (const auto& [s, label] : scores) {
        if (!std::isfinite(s)) throw InvalidArgument("pr_roc_curves: scores must be finite");
        (label ? pos : neg).push_back(s);
    }
    return pr_roc_from_classes(std::move(pos), std::move(neg));
}

/// Threshold of the maximum-F1 point; ties go to the larger threshold.
inline double select_threshold_max_f1(std::span<const CurvePoint> curve) {
    if (curve.empty()) throw InvalidArgument("select_threshold_max_f1: empty curve");
    const CurvePoint* best = &curve.front();
    for (const auto& p : curve)
        if (p.f1 > best->f1 || (p.f1 == best->f1 && p.threshold > best->threshold)) best = &p;
    return best->threshold;
}

inline const CurvePoint& point_at(std::span<const CurvePoint> curve, double threshold) {
    for (const auto& p : curve)
        if (p.threshold == threshold) return p;
    throw InvalidArgument("no curve point at the requested threshold");
}

/// Writes threshold,precision,recall,fpr,tpr,f1 rows. When the curve has
/// more than `max_rows` points an evenly spaced subset is written, always
/// keeping the first, last and `keep_threshold` points.
inline void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve,
                            std::size_t max_rows = 20000, std::optional<double> keep_threshold = std::nullopt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "threshold,precision,recall,fpr,tpr,f1\n";
    const std::size_t n = curve.size();
    const std::size_t stride = n > max_rows ? (n + max_rows - 1) / max_rows : 1;
    char buf[256];
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = curve[i];
        const bool keep = i % stride == 0 || i + 1 == n || (keep_threshold && p.threshold == *keep_threshold);
        if (!keep) continue;
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall, p.fpr,
                      p.tpr, p.f1);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// Per-case record

struct CaseMetrics {
    double dice = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double rvd = 1.0;
    std::optional<double> hd95_mm;
    bool detected = false;
    double elapsed_s = 0.0;
    bool precision_defined = true;
};

inline CaseMetrics compute_case_metrics(const Mask& pred, const Mask& gt, double elapsed_s = 0.0) {
    CaseMetrics m;
    m.dice = dice(pred, gt);
    const auto pr = precision_recall(pred, gt);
    m.precision = pr.precision;
    m.recall = pr.recall;
    m.precision_defined = pr.precision_defined;
    m.rvd = rvd(pred, gt);
    m.hd95_mm = hd95(pred, gt);
    m.detected = m.dice > 0.5;
    m.elapsed_s = elapsed_s;
    return m;
}

inline void to_json(nlohmann::json& j, const CaseMetrics& m) {
    j = {{"dice", m.dice},
         {"precision", m.precision},
         {"precision_defined", m.precision_defined},
         {"recall", m.recall},
         {"rvd", m.rvd},
         {"hd95_mm", m.hd95_mm ? nlohmann::json(*m.hd95_mm) : nlohmann::json(nullptr)},
         {"detected", m.detected},
         {"elapsed_s", m.elapsed_s}};
}

inline void from_json(const nlohmann::json& j, CaseMetrics& m) {
    m.dice = j.at("dice").get<double>();
    m.precision = j.at("precision").get<double>();
    m.precision_defined = j.value("precision_defined", true);
    m.recall = j.at("recall").get<double>();
    m.rvd = j.at("rvd").get<double>();
    if (j.contains("hd95_mm") && !j["hd95_mm"].is_null()) m.hd95_mm = j["hd95_mm"].get<double>();
    else m.hd95_mm.reset();
    m.detected = j.at("detected").get<bool>();
    m.elapsed_s = j.value("elapsed_s", 0.0);
    if (m.detected != (m.dice > 0.5)) throw ParseError("case metrics: detected flag inconsistent with dice");
}

}  // namespace segbench
