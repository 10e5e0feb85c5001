#pragma once

// Predictors: the segmentation strategies a study compares, behind one
// handle type, plus the file-based external predictor protocol.
//
// External protocol: the command template must contain {input} and
// {output}. {input} is a float32 NRRD holding the cropped, resampled and
// z-normalized ROI; the command must write a float32 NRRD with values in
// [0,1] on the identical grid to {output} and exit 0.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "segbench/imageops.hpp"
#include "segbench/nrrd.hpp"
#include "segbench/process.hpp"
#include "segbench/segmentation.hpp"

namespace segbench {

enum class PredictorKind { region_growing, threshold_model, external };

inline std::string to_string(PredictorKind k) {
    switch (k) {
        case PredictorKind::region_growing: return "region_growing";
        case PredictorKind::threshold_model: return "threshold_model";
        case PredictorKind::external: return "external";
    }
    return "?";
}

inline PredictorKind parse_kind(const std::string& s) {
    if (s == "region_growing") return PredictorKind::region_growing;
    if (s == "threshold_model") return PredictorKind::threshold_model;
    if (s == "external") return PredictorKind::external;
    throw InvalidArgument("unknown predictor kind '" + s + "'");
}

inline constexpr double kDefaultPredictorTimeoutS = 300.0;
inline constexpr const char* kPredictorTimeoutEnv = "SEGBENCH_PREDICTOR_TIMEOUT_S";

/// A configured segmentation method. Parameters are validated when the
/// handle is made.
///
/// Common parameters: spacing (mm, default 0.5), threshold (fixed cut-off
/// overriding the calibrated one).
/// region_growing: smoothing_mm (default 1), seed_radius_mm (default 2),
///   connectivity (6 or 26, default 26) and one of tolerance (absolute,
///   normalized units), tolerance_sd (multiple of the seed stddev) or
///   tolerance_frac (fraction of |seed mean - ROI median|, default 0.5).
/// threshold_model: smoothing_mm (default 1), seed_radius_mm (default 2).
/// external: command (template with {input} and {output}), timeout_s.
class PredictorHandle {
public:
    using Params = std::map<std::string, std::string>;

    PredictorHandle() : PredictorHandle(PredictorKind::threshold_model) {}
    explicit PredictorHandle(PredictorKind kind, Params params = {}, std::string name = {})
        : kind_(kind), params_(std::move(params)), name_(name.empty() ? to_string(kind) : std::move(name)) {
        validate();
    }

    PredictorKind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    const Params& params() const { return params_; }

    bool has(const std::string& k) const { return params_.count(k) != 0; }
    double number(const std::string& k, double fallback) const {
        auto it = params_.find(k);
        return it == params_.end() ? fallback : to_number(k, it->second);
    }
    std::string text(const std::string& k, const std::string& fallback = {}) const {
        auto it = params_.find(k);
        return it == params_.end() ? fallback : it->second;
    }

    double spacing() const { return number("spacing", 0.5); }

    /// True when the output is a graded map that needs a decision threshold.
    bool produces_probabilities() const { return kind_ != PredictorKind::region_growing; }

    /// Fixed threshold from the parameters, if one was configured.
    std::optional<double> fixed_threshold() const {
        if (!has("threshold")) return std::nullopt;
        return number("threshold", 0.5);
    }

    double timeout_s() const {
        if (has("timeout_s")) return number("timeout_s", kDefaultPredictorTimeoutS);
        if (const char* env = std::getenv(kPredictorTimeoutEnv)) {
            try {
                const double v = std::stod(env);
                if (v > 0) return v;
            } catch (const std::exception&) {
            }
        }
        return kDefaultPredictorTimeoutS;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"kind", to_string(kind_)}, {"name", name_}};
        for (const auto& [k, v] : params_) j[k] = v;
        return j;
    }

    /// Parses either a JSON object ({"kind": ..., "name": ..., params...}) or
    /// the compact form  [name@]kind[:key=value,key=value]  where for the
    /// external kind everything after the colon is the command template.
    static PredictorHandle parse(const std::string& spec) {
        const std::string s = nrrd::detail::trim(spec);
        if (!s.empty() && s.front() == '{') {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(s);
            } catch (const nlohmann::json::exception& e) {
                throw InvalidArgument(std::string("predictor spec: ") + e.what());
            }
            return from_json(j);
        }
        std::string rest = s;
        std::string name;
        const auto at = rest.find('@');
        const auto colon0 = rest.find(':');
        if (at != std::string::npos && (colon0 == std::string::npos || at < colon0)) {
            name = rest.substr(0, at);
            rest = rest.substr(at + 1);
        }
        const auto colon = rest.find(':');
        const PredictorKind kind = parse_kind(rest.substr(0, colon));
        Params params;
        if (colon != std::string::npos) {
            const std::string tail = rest.substr(colon + 1);
            if (kind == PredictorKind::external) {
                params["command"] = tail;
            } else {
                std::istringstream is(tail);
                std::string kv;
                while (std::getline(is, kv, ',')) {
                    if (kv.empty()) continue;
                    const auto eq = kv.find('=');
                    if (eq == std::string::npos) throw InvalidArgument("predictor spec: expected key=value, got '" + kv + "'");
                    params[kv.substr(0, eq)] = kv.substr(eq + 1);
                }
            }
        }
        return PredictorHandle(kind, std::move(params), std::move(name));
    }

    static PredictorHandle from_json(const nlohmann::json& j) {
        if (!j.is_object() || !j.contains("kind")) throw InvalidArgument("predictor spec: JSON object with 'kind' required");
        Params params;
        std::string name;
        for (const auto& [k, v] : j.items()) {
            if (k == "kind") continue;
            const std::string val = v.is_string() ? v.get<std::string>() : v.dump();
            if (k == "name") name = val;
            else params[k] = val;
        }
        return PredictorHandle(parse_kind(j.at("kind").get<std::string>()), std::move(params), std::move(name));
    }

private:
    static double to_number(const std::string& k, const std::string& v) {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw InvalidArgument("predictor parameter '" + k + "' is not a number: '" + v + "'");
        }
    }

    void validate() const {
        auto allow = [&](std::initializer_list<const char*> keys) {
            for (const auto& [k, v] : params_) {
                bool ok = false;
                for (const char* a : keys) ok = ok || k == a;
                if (!ok) throw InvalidArgument("predictor " + to_string(kind_) + ": unknown parameter '" + k + "'");
            }
        };
        if (!(spacing() > 0.0)) throw InvalidArgument("predictor: spacing must be positive");
        if (number("smoothing_mm", 0.0) < 0.0) throw InvalidArgument("predictor: smoothing_mm must be >= 0");
        if (auto t = fixed_threshold(); t && !(*t >= 0.0 && *t <= 1.0))
            throw InvalidArgument("predictor: threshold must lie in [0,1]");
        switch (kind_) {
            case PredictorKind::region_growing: {
                allow({"spacing", "threshold", "tolerance", "tolerance_sd", "tolerance_frac", "seed_radius_mm", "connectivity",
                       "smoothing_mm"});
                if (number("tolerance", 0.0) < 0.0) throw InvalidArgument("region_growing: tolerance must be >= 0");
                if (!(number("tolerance_sd", 3.0) > 0.0)) throw InvalidArgument("region_growing: tolerance_sd must be > 0");
                if (!(number("tolerance_frac", 0.5) > 0.0)) throw InvalidArgument("region_growing: tolerance_frac must be > 0");
                if (number("seed_radius_mm", 2.0) < 0.0) throw InvalidArgument("region_growing: seed_radius_mm must be >= 0");
                const double c = number("connectivity", 26);
                if (c != 6 && c != 26) throw InvalidArgument("region_growing: connectivity must be 6 or 26");
                break;
            }
            case PredictorKind::threshold_model: {
                allow({"spacing", "threshold", "seed_radius_mm", "smoothing_mm"});
                break;
            }
            case PredictorKind::external: {
                allow({"spacing", "threshold", "command", "timeout_s"});
                const auto cmd = text("command");
                if (cmd.find("{input}") == std::string::npos || cmd.find("{output}") == std::string::npos)
                    throw InvalidArgument("external predictor: command must contain {input} and {output}");
                if (has("timeout_s") && !(number("timeout_s", 1.0) > 0.0))
                    throw InvalidArgument("external predictor: timeout_s must be positive");
                break;
            }
        }
    }

    PredictorKind kind_;
    Params params_;
    std::string name_;
};

struct Prediction {
    ProbabilityMap map;
    double elapsed_s = 0.0;
};

/// Crops to the ROI, resamples to the predictor spacing and z-normalizes.
inline Volume prepare_input(const Volume& v, const BoundingBox& roi, double spacing) {
    const Volume cropped = crop(v, roi);
    return znormalize(resample(cropped, Vec3::Constant(spacing), Interpolation::trilinear));
}

namespace detail {

inline std::vector<SeedPoint> seed_ball(const Grid& g, const Vec3& center, double radius_mm) {
    std::vector<SeedPoint> seeds;
    const Index3 c = seed_voxel(g, center);
    const Vec3 r = Vec3::Constant(radius_mm).cwiseQuotient(g.spacing);
    for (std::int64_t z = c[2] - std::int64_t(r[2]); z <= c[2] + std::int64_t(r[2]); ++z)
        for (std::int64_t y = c[1] - std::int64_t(r[1]); y <= c[1] + std::int64_t(r[1]); ++y)
            for (std::int64_t x = c[0] - std::int64_t(r[0]); x <= c[0] + std::int64_t(r[0]); ++x) {
                if (!g.in_bounds(x, y, z)) continue;
                const Vec3 w = g.voxel_to_world(Index3{x, y, z});
                if ((w - center).norm() <= radius_mm) seeds.push_back({w});
            }
    if (seeds.empty()) seeds.push_back({g.voxel_to_world(c)});
    return seeds;
}

inline double mean_at(const Volume& v, const std::vector<SeedPoint>& seeds, double* sd = nullptr) {
    double s = 0.0, ss = 0.0;
    for (const auto& p : seeds) {
        const Index3 i = seed_voxel(v.grid(), p.position);
        const double x = v.at(i[0], i[1], i[2]);
        s += x;
        ss += x * x;
    }
    const double n = double(seeds.size());
    const double m = s / n;
    if (sd) *sd = std::sqrt(std::max(0.0, ss / n - m * m));
    return m;
}

inline double roi_median(const Volume& v) {
    std::vector<float> sorted(v.data().begin(), v.data().end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    return sorted[sorted.size() / 2];
}

inline Volume smoothed(const PredictorHandle& h, const Volume& in) {
    Volume out = in;
    gaussian_smooth(out, h.number("smoothing_mm", 1.0));
    return out;
}

inline ProbabilityMap predict_region_growing(const PredictorHandle& h, const Volume& raw, const Vec3& seed) {
    const Volume in = smoothed(h, raw);
    const auto seeds = seed_ball(in.grid(), seed, h.number("seed_radius_mm", 2.0));
    double sd = 0.0;
    const double mean = mean_at(in, seeds, &sd);
    double tol;
    if (h.has("tolerance")) tol = h.number("tolerance", 0.0);
    else if (h.has("tolerance_sd")) tol = h.number("tolerance_sd", 3.0) * sd;
    else tol = h.number("tolerance_frac", 0.5) * std::abs(mean - roi_median(in));
    const auto conn = h.number("connectivity", 26) == 6 ? Connectivity::six : Connectivity::twenty_six;
    const Mask m = region_grow(in, seeds, tol, conn);
    Image<float> out(in.grid());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? 1.0f : 0.0f;
    return ProbabilityMap(std::move(out));
}

/// Intensity mapped linearly from the ROI median (0) to the seed level (1),
/// clamped. Works for bright and dark lesions alike.
inline ProbabilityMap predict_threshold_model(const PredictorHandle& h, const Volume& raw, const Vec3& seed) {
    const Volume in = smoothed(h, raw);
    const double background = roi_median(in);
    const double lesion = mean_at(in, seed_ball(in.grid(), seed, h.number("seed_radius_mm", 2.0)));
    const double contrast = lesion - background;
    if (std::abs(contrast) < 1e-6) throw InvalidArgument("threshold_model: seed region indistinguishable from background");
    Image<float> out(in.grid());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<float>((in[i] - background) / contrast);
    return ProbabilityMap::clamped(std::move(out));
}

inline std::string substitute(std::string cmd, const std::string& key, const std::string& value) {
    for (std::size_t pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
        cmd.replace(pos, key.size(), value);
    return cmd;
}

inline std::string tail_of(const std::filesystem::path& p, std::size_t max_bytes = 2000) {
    std::ifstream is(p, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (s.size() > max_bytes) s = s.substr(s.size() - max_bytes);
    return s;
}

inline ProbabilityMap predict_external(const PredictorHandle& h, const Volume& in) {
    TempDir tmp("segbench-predict");
    const auto input = tmp.path() / "input.nrrd";
    const auto output = tmp.path() / "output.nrrd";
    const auto log = tmp.path() / "predictor.log";
    nrrd::write(input, in);
    std::string cmd = substitute(h.text("command"), "{input}", shell_quote(input.string()));
    cmd = substitute(cmd, "{output}", shell_quote(output.string()));
    const auto res = run_shell(cmd, h.timeout_s(), log);
    if (res.timed_out)
        throw PredictorTimeout("external predictor timed out after " + std::to_string(h.timeout_s()) + " s");
    if (res.exit_code != 0)
        throw PredictorFailed("external predictor exited with status " + std::to_string(res.exit_code) + ": " +
                              tail_of(log));
    if (!std::filesystem::exists(output)) throw PredictorFailed("external predictor wrote no output file");
    ProbabilityMap p;
    try {
        p = nrrd::read_probability(output);
    } catch (const ParseError& e) {
        throw PredictorFailed(std::string("external predictor output unreadable: ") + e.what());
    }
    if (!p.grid().same_as(in.grid(), 1e-6))
        throw PredictorGridMismatch("external predictor output grid " + p.grid().describe() +
                                    " differs from input grid " + in.grid().describe());
    return p;
}

}  // namespace detail

/// Runs a predictor on the ROI of `v`. The returned map lives on the
/// cropped, resampled grid. `seed` is the user's localisation point (the
/// tumor box center); it defaults to the ROI center.
inline Prediction run_predictor(const PredictorHandle& h, const Volume& v, const BoundingBox& roi,
                                std::optional<Vec3> seed = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    const Volume in = prepare_input(v, roi, h.spacing());
    const Vec3 s = seed.value_or(roi.center());
    Prediction out;
    switch (h.kind()) {
        case PredictorKind::region_growing: out.map = detail::predict_region_growing(h, in, s); break;
        case PredictorKind::threshold_model: out.map = detail::predict_threshold_model(h, in, s); break;
        case PredictorKind::external: out.map = detail::predict_external(h, in); break;
    }
    out.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace segbench
