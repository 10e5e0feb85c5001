#pragma once

// Classical segmentation building blocks: ROI expansion, seeded region
// growing, probability binarization and single-component post-processing.

#include <cmath>
#include <vector>

#include "segbench/components.hpp"
#include "segbench/grid.hpp"

namespace segbench {

/// Margin added around the user's tumor box before cropping.
inline constexpr double kRoiMarginMm = 10.0;

struct SeedPoint {
    Vec3 position = Vec3::Zero();  // world mm
};

/// Expands every face of `tumor_box` by `margin_mm`, then clips to `extent`.
inline BoundingBox roi_with_margin(const BoundingBox& tumor_box, double margin_mm, const BoundingBox& extent) {
    if (!(margin_mm >= 0.0)) throw InvalidArgument("roi_with_margin: margin must be >= 0");
    Vec3 lo = tumor_box.min - Vec3::Constant(margin_mm);
    Vec3 hi = tumor_box.max + Vec3::Constant(margin_mm);
    lo = lo.cwiseMax(extent.min);
    hi = hi.cwiseMin(extent.max);
    for (int a = 0; a < 3; ++a)
        if (!(lo[a] < hi[a])) throw InvalidArgument("roi_with_margin: box does not intersect the extent");
    return {lo, hi};
}

/// Maps a world point inside the physical extent to its voxel.
inline Index3 seed_voxel(const Grid& g, const Vec3& p) {
    if (!g.contains_world(p)) throw InvalidArgument("seed lies outside the volume extent");
    Index3 i = g.nearest_voxel(p);
    for (int a = 0; a < 3; ++a) i[a] = std::clamp<std::int64_t>(i[a], 0, g.dims[a] - 1);
    return i;
}

/// Voxels reachable from the seeds through neighbours whose intensity is
/// within `tolerance` of the mean seed intensity. The raw flood fill, without
/// post-processing.
inline Mask flood_from_seeds(const Volume& v, const std::vector<SeedPoint>& seeds, double tolerance,
                             Connectivity conn) {
    if (seeds.empty()) throw InvalidArgument("region_grow: at least one seed is required");
    if (!(tolerance >= 0.0)) throw InvalidArgument("region_grow: tolerance must be >= 0");
    const Grid& g = v.grid();
    std::vector<std::size_t> starts;
    double sum = 0.0;
    for (const auto& s : seeds) {
        const Index3 i = seed_voxel(g, s.position);
        const std::size_t lin = g.linear(i[0], i[1], i[2]);
        starts.push_back(lin);
        sum += v[lin];
    }
    const double ref = sum / double(seeds.size());
    auto accept = [&](std::size_t i) { return std::abs(double(v[i]) - ref) <= tolerance; };

    Mask m(g);
    std::vector<std::size_t> stack;
    for (auto s : starts)
        if (!m[s] && accept(s)) {
            m[s] = 1;
            stack.push_back(s);
        }
    const auto offsets = neighbour_offsets(conn);
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const Index3 p = g.unravel(i);
        for (const auto& o : offsets) {
            const auto x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
            if (!g.in_bounds(x, y, z)) continue;
            const std::size_t j = g.linear(x, y, z);
            if (!m[j] && accept(j)) {
                m[j] = 1;
                stack.push_back(j);
            }
        }
    }
    return m;
}

/// Largest 26-connected component; empty in, empty out.
inline Mask postprocess(const Mask& m) { return largest_component(m); }

inline Mask region_grow(const Volume& v, const std::vector<SeedPoint>& seeds, double tolerance,
                        Connectivity conn = Connectivity::twenty_six) {
    return postprocess(flood_from_seeds(v, seeds, tolerance, conn));
}

inline Mask binarize(const ProbabilityMap& p, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("binarize: threshold must lie in [0,1]");
    Mask m(p.grid());
    const auto d = p.data();
    for (std::size_t i = 0; i < d.size(); ++i) m[i] = double(d[i]) >= threshold ? 1 : 0;
    return m;
}

}  // namespace segbench
