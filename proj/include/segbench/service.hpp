#pragma once

// Interactive navigation session logic: reconstruct or load a volume, browse
// slices, place a tumor ROI, segment, correct with a spherical brush and
// export. Transport-independent; see http_service.hpp for the HTTP binding.

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "segbench/imageops.hpp"
#include "segbench/metrics.hpp"
#include "segbench/nrrd.hpp"
#include "segbench/predictor.hpp"
#include "segbench/reconstruction.hpp"
#include "segbench/segmentation.hpp"

namespace segbench::nav {

namespace fs = std::filesystem;

/// Error carrying the HTTP status the binding should answer with.
class ServiceError : public Error {
public:
    ServiceError(int status, const std::string& msg) : Error(msg), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

enum class EditKind { paint, erase };

struct EditOp {
    EditKind kind = EditKind::paint;
    Vec3 center = Vec3::Zero();  // world mm
    double radius = 1.0;         // mm
};

/// Sets (paint) or clears (erase) every voxel whose center lies within the sphere.
inline void apply_edit_to(Mask& m, const EditOp& op) {
    const Grid& g = m.grid();
    const Vec3 c = g.world_to_voxel(op.center);
    const Vec3 r = Vec3::Constant(op.radius).cwiseQuotient(g.spacing);
    Index3 lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c[a] - r[a])));
        hi[a] = std::min<std::int64_t>(g.dims[a] - 1, static_cast<std::int64_t>(std::ceil(c[a] + r[a])));
    }
    const std::uint8_t value = op.kind == EditKind::paint ? 1 : 0;
    const double r2 = op.radius * op.radius;
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
                if ((g.voxel_to_world(Index3{x, y, z}) - op.center).squaredNorm() <= r2) m.at(x, y, z) = value;
}

inline Mask replay_edits(Mask base, const std::vector<EditOp>& log) {
    for (const auto& op : log) apply_edit_to(base, op);
    return base;
}

struct MaskSummary {
    std::size_t voxel_count = 0;
    double volume_ml = 0.0;
    double elapsed_s = 0.0;
};

struct SliceImage {
    int width = 0;
    int height = 0;
    int channels = 1;  // 2 when the mask plane is present
    std::vector<std::uint8_t> pixels;
    nlohmann::json geometry;
};

struct ExportResult {
    std::vector<fs::path> files;
    std::optional<CaseMetrics> metrics;
};

/// Mutex granting the lock in request arrival order.
class FifoMutex {
public:
    void lock() {
        std::unique_lock lk(m_);
        const auto ticket = next_++;
        cv_.wait(lk, [&] { return serving_ == ticket; });
    }
    void unlock() {
        std::lock_guard lk(m_);
        ++serving_;
        cv_.notify_all();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

struct Timings {
    double reconstruction_s = 0.0;
    double segmentation_s = 0.0;
    double correction_s = 0.0;  // wall time from segmentation end to the last edit
};

class Session {
public:
    Session(std::string id, Volume v, double reconstruction_s)
        : id_(std::move(id)), volume_(std::make_shared<const Volume>(std::move(v))) {
        timings_.reconstruction_s = reconstruction_s;
    }

    const std::string& id() const { return id_; }
    const Volume& volume() const { return *volume_; }

    FifoMutex& writes() { return writes_; }
    std::shared_mutex& state() const { return state_; }

    // State; guard with state() (shared for reads, unique for writes).
    std::optional<BoundingBox> roi_draft;
    std::optional<BoundingBox> roi;
    std::shared_ptr<const ProbabilityMap> probability;
    std::shared_ptr<const Mask> base_mask;  // straight from the predictor
    std::shared_ptr<const Mask> mask;       // after edits
    std::vector<EditOp> edit_log;
    std::string predictor;
    double threshold = 0.5;
    std::chrono::steady_clock::time_point segmented_at{};
    Timings timings_;

private:
    std::string id_;
    std::shared_ptr<const Volume> volume_;
    FifoMutex writes_;
    mutable std::shared_mutex state_;
};

inline nlohmann::json vec3_json(const Vec3& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }

inline nlohmann::json box_json(const BoundingBox& b) { return {{"min", vec3_json(b.min)}, {"max", vec3_json(b.max)}}; }

inline nlohmann::json summary_json(const MaskSummary& s) {
    return {{"voxel_count", s.voxel_count}, {"volume_ml", s.volume_ml}, {"elapsed_s", s.elapsed_s}};
}

class SessionStore {
public:
    struct Options {
        double reconstruction_spacing = 0.5;
    };

    SessionStore() : SessionStore(Options{}) {}
    explicit SessionStore(Options o) : opt_(o) {}

    /// Creates a session from a sweep directory (reconstructed) or an NRRD volume.
    std::string create_session(const fs::path& source, std::optional<double> spacing = std::nullopt) {
        std::error_code ec;
        if (!fs::exists(source, ec)) throw ServiceError(400, "source does not exist: " + source.string());
        Volume v;
        double recon_s = 0.0;
        try {
            if (fs::is_directory(source)) {
                const auto t0 = std::chrono::steady_clock::now();
                const Sweep s = read_sweep(source);
                v = reconstruct(s, Vec3::Constant(spacing.value_or(opt_.reconstruction_spacing))).volume;
                recon_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            } else {
                v = nrrd::read_volume(source);
            }
        } catch (const Error& e) {
            throw ServiceError(400, e.what());
        }
        char id[32];
        std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(++counter_));
        auto session = std::make_shared<Session>(id, std::move(v), recon_s);
        std::unique_lock lk(sessions_mutex_);
        sessions_[id] = session;
        return id;
    }

    std::shared_ptr<Session> find(const std::string& id) const {
        std::shared_lock lk(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
        return it->second;
    }

    nlohmann::json info(const std::string& id) const {
        const auto s = find(id);
        std::shared_lock lk(s->state());
        const Grid& g = s->volume().grid();
        nlohmann::json j = {{"session_id", s->id()},
                            {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
                            {"spacing", vec3_json(g.spacing)},
                            {"origin", vec3_json(g.origin)},
                            {"orientation", {vec3_json(g.orientation.row(0)), vec3_json(g.orientation.row(1)),
                                             vec3_json(g.orientation.row(2))}},
                            {"extent", box_json(g.world_extent())},
                            {"timings",
                             {{"reconstruction_s", s->timings_.reconstruction_s},
                              {"segmentation_s", s->timings_.segmentation_s},
                              {"correction_s", s->timings_.correction_s}}},
                            {"has_mask", s->mask != nullptr},
                            {"edits", s->edit_log.size()}};
        j["roi"] = s->roi ? box_json(*s->roi) : nlohmann::json(nullptr);
        j["roi_draft"] = s->roi_draft ? box_json(*s->roi_draft) : nlohmann::json(nullptr);
        return j;
    }

    /// Windowed 8-bit slice. Pixel (i, j) maps to world origin + i*u + j*v
    /// with origin/u/v reported in the geometry block.
    SliceImage get_slice(const std::string& id, char axis, std::int64_t index, std::optional<double> level = {},
                         std::optional<double> width = {}) const {
        const auto s = find(id);
        const Volume& vol = s->volume();
        const Grid& g = vol.grid();
        int ax;
        switch (axis) {
            case 'x': ax = 0; break;
            case 'y': ax = 1; break;
            case 'z': ax = 2; break;
            default: throw ServiceError(400, "axis must be x, y or z");
        }
        if (index < 0 || index >= g.dims[ax])
            throw ServiceError(404, "slice index " + std::to_string(index) + " out of range [0, " +
                                        std::to_string(g.dims[ax] - 1) + "]");
        const int ua = ax == 0 ? 1 : 0;
        const int va = ax == 2 ? 1 : 2;

        double lo, hi;
        if (level && width) {
            if (!(*width > 0)) throw ServiceError(400, "window width must be positive");
            lo = *level - *width / 2;
            hi = *level + *width / 2;
        } else {
            const auto [mn, mx] = std::minmax_element(vol.data().begin(), vol.data().end());
            lo = *mn;
            hi = *mx;
        }
        std::shared_ptr<const Mask> mask;
        {
            std::shared_lock lk(s->state());
            mask = s->mask;
        }
        SliceImage img;
        img.width = static_cast<int>(g.dims[ua]);
        img.height = static_cast<int>(g.dims[va]);
        img.channels = mask ? 2 : 1;
        img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
        const double span = hi - lo;
        for (int j = 0; j < img.height; ++j)
            for (int i = 0; i < img.width; ++i) {
                Index3 vox{};
                vox[ax] = index;
                vox[ua] = i;
                vox[va] = j;
                const double val = vol.at(vox[0], vox[1], vox[2]);
                const double t = span > 0 ? (val - lo) / span : 0.5;
                const auto px = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
                const std::size_t o = (static_cast<std::size_t>(j) * img.width + i) * img.channels;
                img.pixels[o] = px;
                if (mask) {
                    const Vec3 mv = mask->grid().world_to_voxel(g.voxel_to_world(vox));
                    img.pixels[o + 1] = sample_nearest(*mask, mv) ? 255 : 0;
                }
            }
        Index3 first{};
        first[ax] = index;
        const Vec3 origin = g.voxel_to_world(first);
        img.geometry = {{"axis", std::string(1, axis)},
                        {"index", index},
                        {"width", img.width},
                        {"height", img.height},
                        {"origin", vec3_json(origin)},
                        {"u", vec3_json(g.orientation.col(ua) * g.spacing[ua])},
                        {"v", vec3_json(g.orientation.col(va) * g.spacing[va])},
                        {"mm_per_pixel", {g.spacing[ua], g.spacing[va]}},
                        {"window", {lo, hi}},
                        {"has_mask", mask != nullptr}};
        return img;
    }

    /// Stores the user's box expanded by the fixed margin and clipped to the
    /// volume; returns the effective box.
    BoundingBox set_roi(const std::string& id, const BoundingBox& box) {
        const auto s = find(id);
        std::lock_guard w(s->writes());
        BoundingBox effective;
        const BoundingBox extent = s->volume().grid().world_extent();
        if (!box.intersects(extent)) throw ServiceError(422, "box does not intersect the volume extent");
        try {
            effective = roi_with_margin(box, kRoiMarginMm, extent);
        } catch (const InvalidArgument& e) {
            throw ServiceError(422, e.what());
        }
        std::unique_lock lk(s->state());
        s->roi_draft = box;
        s->roi = effective;
        return effective;
    }

    MaskSummary run_segmentation(const std::string& id, const PredictorHandle& predictor,
                                 std::optional<double> threshold = std::nullopt) {
        const auto s = find(id);
        std::lock_guard w(s->writes());
        std::optional<BoundingBox> roi, draft;
        {
            std::shared_lock lk(s->state());
            roi = s->roi;
            draft = s->roi_draft;
        }
        if (!roi) throw ServiceError(409, "set a region of interest before segmenting");
        const double tau = threshold.value_or(predictor.fixed_threshold().value_or(0.5));
        if (!(tau >= 0.0 && tau <= 1.0)) throw ServiceError(400, "threshold must lie in [0,1]");
        const auto t0 = std::chrono::steady_clock::now();
        Prediction pred;
        try {
            pred = run_predictor(predictor, s->volume(), *roi, draft ? draft->center() : roi->center());
        } catch (const Error& e) {
            throw ServiceError(502, std::string("predictor failed: ") + e.what());
        }
        auto mask = std::make_shared<const Mask>(postprocess(binarize(pred.map, tau)));
        const auto t1 = std::chrono::steady_clock::now();
        MaskSummary sum{count(*mask), volume_ml(*mask), std::chrono::duration<double>(t1 - t0).count()};
        std::unique_lock lk(s->state());
        s->probability = std::make_shared<const ProbabilityMap>(std::move(pred.map));
        s->base_mask = mask;
        s->mask = mask;
        s->edit_log.clear();
        s->predictor = predictor.name();
        s->threshold = tau;
        s->segmented_at = t1;
        s->timings_.segmentation_s = sum.elapsed_s;
        s->timings_.correction_s = 0.0;
        return sum;
    }

    MaskSummary apply_edit(const std::string& id, const EditOp& op) {
        if (!(op.radius > 0.0) || !op.center.allFinite()) throw ServiceError(400, "edit radius must be positive");
        const auto s = find(id);
        std::lock_guard w(s->writes());
        std::shared_ptr<const Mask> current;
        {
            std::shared_lock lk(s->state());
            current = s->mask;
        }
        if (!current) throw ServiceError(409, "no mask to edit; run segmentation first");
        const auto t0 = std::chrono::steady_clock::now();
        Mask edited = *current;
        apply_edit_to(edited, op);
        auto next = std::make_shared<const Mask>(std::move(edited));
        const auto t1 = std::chrono::steady_clock::now();
        std::unique_lock lk(s->state());
        s->mask = next;
        s->edit_log.push_back(op);
        s->timings_.correction_s = std::chrono::duration<double>(t1 - s->segmented_at).count();
        return {count(*next), volume_ml(*next), std::chrono::duration<double>(t1 - t0).count()};
    }

    /// The post-prediction mask with the edit log replayed.
    Mask replay(const std::string& id) const {
        const auto s = find(id);
        std::shared_lock lk(s->state());
        if (!s->base_mask) throw ServiceError(409, "no mask");
        return replay_edits(*s->base_mask, s->edit_log);
    }

    Mask current_mask(const std::string& id) const {
        const auto s = find(id);
        std::shared_lock lk(s->state());
        if (!s->mask) throw ServiceError(409, "no mask");
        return *s->mask;
    }

    /// Writes mask.nrrd and timing.json (plus metrics.json when a ground
    /// truth mask on the session volume's grid is given).
    ExportResult export_case(const std::string& id, const fs::path& out_dir,
                             const std::optional<fs::path>& gt_mask_path = std::nullopt) {
        const auto s = find(id);
        std::shared_ptr<const Mask> mask;
        Timings t;
        std::string predictor;
        double tau;
        std::size_t edits;
        {
            std::shared_lock lk(s->state());
            mask = s->mask;
            t = s->timings_;
            predictor = s->predictor;
            tau = s->threshold;
            edits = s->edit_log.size();
        }
        if (!mask) throw ServiceError(409, "no mask to export; run segmentation first");
        ExportResult res;
        std::optional<Mask> gt;
        if (gt_mask_path) {
            try {
                gt = nrrd::read_mask(*gt_mask_path);
            } catch (const Error& e) {
                throw ServiceError(400, std::string("ground truth: ") + e.what());
            }
        }
        try {
            fs::create_directories(out_dir);
            const auto mask_path = out_dir / "mask.nrrd";
            nrrd::write(mask_path, *mask);
            res.files.push_back(mask_path);
            const nlohmann::json timing = {{"session_id", s->id()},
                                           {"predictor", predictor},
                                           {"threshold", tau},
                                           {"edits", edits},
                                           {"reconstruction_s", t.reconstruction_s},
                                           {"segmentation_s", t.segmentation_s},
                                           {"correction_s", t.correction_s},
                                           {"total_s", t.segmentation_s + t.correction_s}};
            const auto timing_path = out_dir / "timing.json";
            std::ofstream(timing_path, std::ios::trunc) << timing.dump(2) << "\n";
            res.files.push_back(timing_path);
            if (gt) {
                const Mask on_gt = resample_onto(*mask, gt->grid(), Interpolation::nearest);
                res.metrics = compute_case_metrics(on_gt, *gt, t.segmentation_s + t.correction_s);
                const auto metrics_path = out_dir / "metrics.json";
                std::ofstream os(metrics_path, std::ios::trunc);
                os << nlohmann::json(*res.metrics).dump(2) << "\n";
                if (!os) throw IoError("cannot write " + metrics_path.string());
                res.files.push_back(metrics_path);
            }
        } catch (const ServiceError&) {
            throw;
        } catch (const std::exception& e) {
            throw ServiceError(500, std::string("export failed: ") + e.what());
        }
        return res;
    }

private:
    Options opt_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::atomic<std::uint64_t> counter_{0};
};

}  // namespace segbench::nav
