#pragma once

// Synthetic liver-like phantoms with one ellipsoidal lesion, and simulated
// tracked sweeps over them.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "segbench/grid.hpp"
#include "segbench/imageops.hpp"
#include "segbench/reconstruction.hpp"

namespace segbench {

struct PhantomSpec {
    Vec3 volume_extent = Vec3(64.0, 64.0, 64.0);  // mm; the grid covers [0, extent]
    double spacing = 0.5;                          // mm, isotropic
    double background_level = 100.0;
    Vec3 lesion_center = Vec3(32.0, 32.0, 32.0);
    Vec3 lesion_radii = Vec3(7.95, 7.95, 7.95);
    double lesion_contrast = 60.0;  // additive; negative for hypoechoic lesions
    double speckle_sigma = 0.0;     // log-normal multiplicative noise
    double boundary_blur_sigma = 0.0;  // mm
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(spacing > 0.0)) throw InvalidArgument("phantom: spacing must be positive");
        if (!(volume_extent.array() >= spacing).all()) throw InvalidArgument("phantom: extent smaller than one voxel");
        if (!(lesion_radii.array() > 0.0).all()) throw InvalidArgument("phantom: lesion radii must be positive");
        if (!(speckle_sigma >= 0.0)) throw InvalidArgument("phantom: speckle sigma must be >= 0");
        if (!(boundary_blur_sigma >= 0.0)) throw InvalidArgument("phantom: blur sigma must be >= 0");
        for (int a = 0; a < 3; ++a)
            if (lesion_center[a] - lesion_radii[a] < 0.0 || lesion_center[a] + lesion_radii[a] > volume_extent[a])
                throw InvalidArgument("phantom: lesion ellipsoid must lie inside the volume extent");
    }

    Grid grid() const {
        Index3 dims{};
        for (int a = 0; a < 3; ++a) dims[a] = std::max<std::int64_t>(1, std::llround(volume_extent[a] / spacing));
        return Grid(dims, Vec3::Constant(spacing), Vec3::Constant(spacing / 2));
    }

    BoundingBox lesion_box() const { return {lesion_center - lesion_radii, lesion_center + lesion_radii}; }
    double lesion_volume_mm3() const { return 4.0 / 3.0 * M_PI * lesion_radii.prod(); }
};

struct Phantom {
    Volume volume;
    Mask truth;
};


inline Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Grid g = spec.grid();
    Phantom p{Volume(g), Mask(g)};
    for (std::int64_t z = 0; z < g.dims[2]; ++z)
        for (std::int64_t y = 0; y < g.dims[1]; ++y)
            for (std::int64_t x = 0; x < g.dims[0]; ++x) {
                const Vec3 d = (g.voxel_to_world(Index3{x, y, z}) - spec.lesion_center).cwiseQuotient(spec.lesion_radii);
                const bool inside = d.squaredNorm() <= 1.0;
                p.truth.at(x, y, z) = inside ? 1 : 0;
                p.volume.at(x, y, z) = static_cast<float>(spec.background_level + (inside ? spec.lesion_contrast : 0.0));
            }
    gaussian_smooth(p.volume, spec.boundary_blur_sigma);
    if (spec.speckle_sigma > 0.0) {
        std::mt19937_64 rng(spec.rng_seed);
        std::normal_distribution<double> noise(0.0, spec.speckle_sigma);
        for (auto& v : p.volume.data()) v = static_cast<float>(v * std::exp(noise(rng)));
    }
    return p;
}

/// Straight-line probe path. Frame k is centred at start_center + k * step,
/// spans the in-plane axes (u_axis, v_axis) and is tilted about u_axis by an
/// angle varying linearly from -tilt_deg/2 to +tilt_deg/2 over the sweep.
struct Trajectory {
    Vec3 start_center = Vec3::Zero();
    Vec3 step = Vec3(0.0, 0.0, 0.5);
    Vec3 u_axis = Vec3::UnitX();
    Vec3 v_axis = Vec3::UnitY();
    double tilt_deg = 0.0;
};

struct SweepSpec {
    std::optional<int> n_frames;  // sampled in [38, 95] when unset
    Eigen::Vector2d frame_size = Eigen::Vector2d(60.0, 60.0);  // mm
    Eigen::Vector2d pixel_spacing = Eigen::Vector2d(0.5, 0.5);
    Trajectory path;
    double pose_noise_mm = 0.0;
    double pose_noise_deg = 0.0;
    std::uint64_t rng_seed = 0;
    std::string probe_id = "phantom-probe";
};

inline constexpr int kMinSweepFrames = 38;
inline constexpr int kMaxSweepFrames = 95;

inline Mat3 random_small_rotation(std::mt19937_64& rng, double sigma_deg) {
    if (sigma_deg <= 0.0) return Mat3::Identity();
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec3 axis(n01(rng), n01(rng), n01(rng));
    if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
    const double angle = n01(rng) * sigma_deg * M_PI / 180.0;
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

inline Sweep simulate_sweep(const Volume& v, const SweepSpec& spec) {
    std::mt19937_64 rng(spec.rng_seed);
    int n = 0;
    if (spec.n_frames) {
        n = *spec.n_frames;
    } else {
        std::uniform_int_distribution<int> pick(kMinSweepFrames, kMaxSweepFrames);
        n = pick(rng);
    }
    if (n < 1) throw InvalidArgument("simulate_sweep: n_frames must be >= 1");
    if (!(spec.pixel_spacing.array() > 0.0).all() || !(spec.frame_size.array() > 0.0).all())
        throw InvalidArgument("simulate_sweep: frame size and pixel spacing must be positive");
    const Trajectory& path = spec.path;
    const Vec3 u = path.u_axis.normalized();
    const Vec3 w = u.cross(path.v_axis).normalized();
    const Vec3 vv = w.cross(u);
    Mat3 base;
    base.col(0) = u;
    base.col(1) = vv;
    base.col(2) = w;

    const auto width = static_cast<std::int64_t>(std::floor(spec.frame_size[0] / spec.pixel_spacing[0] + 1e-9)) + 1;
    const auto height = static_cast<std::int64_t>(std::floor(spec.frame_size[1] / spec.pixel_spacing[1] + 1e-9)) + 1;
    const Vec3 half(double(width - 1) * spec.pixel_spacing[0] / 2, double(height - 1) * spec.pixel_spacing[1] / 2, 0.0);

    std::normal_distribution<double> tnoise(0.0, spec.pose_noise_mm > 0.0 ? spec.pose_noise_mm : 1.0);
    Sweep s;
    s.probe_id = spec.probe_id;
    bool touched = false;
    for (int k = 0; k < n; ++k) {
        const double frac = n > 1 ? double(k) / double(n - 1) - 0.5 : 0.0;
        const Mat3 tilt = Eigen::AngleAxisd(frac * path.tilt_deg * M_PI / 180.0, u).toRotationMatrix();
        const Mat3 rot = tilt * base;
        const Vec3 center = path.start_center + double(k) * path.step;
        const RigidTransform truth(rot, center - rot * half);

        TrackedFrame f;
        f.width = width;
        f.height = height;
        f.pixel_spacing = spec.pixel_spacing;
        f.timestamp = 0.05 * k;
        f.pixels.resize(static_cast<std::size_t>(width * height));
        for (std::int64_t j = 0; j < height; ++j)
            for (std::int64_t i = 0; i < width; ++i) {
                const Vec3 world = truth.apply(Vec3(double(i) * spec.pixel_spacing[0], double(j) * spec.pixel_spacing[1], 0));
                const Vec3 vox = v.grid().world_to_voxel(world);
                touched = touched || v.grid().contains_world(world);
                f.pixels[static_cast<std::size_t>(i + width * j)] = static_cast<float>(sample_trilinear(v, vox));
            }
        Mat3 rec_rot = random_small_rotation(rng, spec.pose_noise_deg) * truth.rotation;
        Vec3 rec_t = truth.translation;
        if (spec.pose_noise_mm > 0.0) rec_t += Vec3(tnoise(rng), tnoise(rng), tnoise(rng));
        f.pose = RigidTransform(rec_rot, rec_t);
        s.frames.push_back(std::move(f));
    }
    if (!touched) throw InvalidArgument("simulate_sweep: trajectory does not intersect the volume");
    return s;
}

// JSON forms of the specs ("phantom.json").

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v[0], v[1], v[2]}); }
inline Vec3 json_vec(const nlohmann::json& j) {
    const auto a = j.get<std::vector<double>>();
    if (a.size() != 3) throw ParseError("expected a 3-vector");
    return {a[0], a[1], a[2]};
}

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = {{"volume_extent", vec_json(s.volume_extent)},
         {"spacing", s.spacing},
         {"background_level", s.background_level},
         {"lesion_center", vec_json(s.lesion_center)},
         {"lesion_radii", vec_json(s.lesion_radii)},
         {"lesion_contrast", s.lesion_contrast},
         {"speckle_sigma", s.speckle_sigma},
         {"boundary_blur_sigma", s.boundary_blur_sigma},
         {"rng_seed", s.rng_seed}};
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
    PhantomSpec d;
    s.volume_extent = j.contains("volume_extent") ? json_vec(j["volume_extent"]) : d.volume_extent;
    s.spacing = j.value("spacing", d.spacing);
    s.background_level = j.value("background_level", d.background_level);
    s.lesion_center = j.contains("lesion_center") ? json_vec(j["lesion_center"]) : d.lesion_center;
    s.lesion_radii = j.contains("lesion_radii") ? json_vec(j["lesion_radii"]) : d.lesion_radii;
    s.lesion_contrast = j.value("lesion_contrast", d.lesion_contrast);
    s.speckle_sigma = j.value("speckle_sigma", d.speckle_sigma);
    s.boundary_blur_sigma = j.value("boundary_blur_sigma", d.boundary_blur_sigma);
    s.rng_seed = j.value("rng_seed", d.rng_seed);
}

}  // namespace segbench
