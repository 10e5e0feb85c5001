#pragma once

// Sampling, resampling, normalization and cropping of images.

#include <cmath>
#include <cstdint>
#include <type_traits>

#include "segbench/grid.hpp"

namespace segbench {

enum class Interpolation { trilinear, nearest };

/// Trilinear sample at continuous voxel coordinates. Points inside the
/// physical extent but beyond the outermost centers take the edge value;
/// points outside the extent return 0.
template <class T>
double sample_trilinear(const Image<T>& img, const Vec3& v) {
    const Grid& g = img.grid();
    int i0[3];
    int i1[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const double n = double(g.dims[a]);
        if (!(v[a] >= -0.5 && v[a] <= n - 0.5)) return 0.0;
        const double c = std::clamp(v[a], 0.0, n - 1.0);
        const double fl = std::floor(c);
        i0[a] = static_cast<int>(fl);
        i1[a] = std::min(i0[a] + 1, static_cast<int>(g.dims[a]) - 1);
        f[a] = c - fl;
    }
    auto val = [&](int x, int y, int z) { return double(img.at(x, y, z)); };
    const double c00 = val(i0[0], i0[1], i0[2]) * (1 - f[0]) + val(i1[0], i0[1], i0[2]) * f[0];
    const double c10 = val(i0[0], i1[1], i0[2]) * (1 - f[0]) + val(i1[0], i1[1], i0[2]) * f[0];
    const double c01 = val(i0[0], i0[1], i1[2]) * (1 - f[0]) + val(i1[0], i0[1], i1[2]) * f[0];
    const double c11 = val(i0[0], i1[1], i1[2]) * (1 - f[0]) + val(i1[0], i1[1], i1[2]) * f[0];
    const double c0 = c00 * (1 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1 - f[1]) + c11 * f[1];
    return c0 * (1 - f[2]) + c1 * f[2];
}

/// Nearest-voxel sample (ties round up); 0 outside the grid.
template <class T>
T sample_nearest(const Image<T>& img, const Vec3& v) {
    std::int64_t idx[3];
    for (int a = 0; a < 3; ++a) {
        idx[a] = static_cast<std::int64_t>(std::floor(v[a] + 0.5));
        if (idx[a] < 0 || idx[a] >= img.grid().dims[a]) return T{};
    }
    return img.at(idx[0], idx[1], idx[2]);
}

template <class T>
T sample(const Image<T>& img, const Vec3& voxel, Interpolation interp) {
    if (interp == Interpolation::nearest) return sample_nearest(img, voxel);
    const double s = sample_trilinear(img, voxel);
    if constexpr (std::is_integral_v<T>) return static_cast<T>(std::lround(s));
    else return static_cast<T>(s);
}

/// Resample `img` onto `target` by sampling at each target voxel center.
template <class T>
Image<T> resample_onto(const Image<T>& img, const Grid& target, Interpolation interp) {
    Image<T> out(target);
    const Grid& src = img.grid();
    // Affine map target voxel -> source voxel.
    const Mat3 to_src = src.spacing.cwiseInverse().asDiagonal() * src.orientation.transpose() * target.orientation *
                        target.spacing.asDiagonal();
    const Vec3 off = src.world_to_voxel(target.origin);
    for (std::int64_t z = 0; z < target.dims[2]; ++z)
        for (std::int64_t y = 0; y < target.dims[1]; ++y)
            for (std::int64_t x = 0; x < target.dims[0]; ++x) {
                const Vec3 v = off + to_src * Vec3(double(x), double(y), double(z));
                out.at(x, y, z) = sample(img, v, interp);
            }
    return out;
}

/// Grid with the requested spacing spanning the same voxel-center range as `g`.
/// The origin is preserved, so when the new spacing divides the old one every
/// original center is also a center of the new grid.
inline Grid resampled_grid(const Grid& g, const Vec3& target_spacing) {
    if (!target_spacing.allFinite() || (target_spacing.array() <= 0.0).any())
        throw InvalidArgument("resample: target spacing must be positive");
    Index3 dims{};
    for (int a = 0; a < 3; ++a) {
        const double span = double(g.dims[a] - 1) * g.spacing[a];
        const double n = std::floor(span / target_spacing[a] + 1e-9) + 1.0;
        if (!(n >= 1.0) || n > 1e9) throw InvalidArgument("resample: degenerate output extent");
        dims[a] = static_cast<std::int64_t>(n);
    }
    return Grid(dims, target_spacing, g.origin, g.orientation);
}

template <class T>
Image<T> resample(const Image<T>& img, const Vec3& target_spacing, Interpolation interp) {
    const Grid target = resampled_grid(img.grid(), target_spacing);
    if (target == img.grid()) return img;
    return resample_onto(img, target, interp);
}

/// Zero-mean, unit-variance rescaling computed over the nonzero voxels only.
/// Zero voxels stay zero.
inline Volume znormalize(const Volume& v) {
    std::size_t n = 0;
    double sum = 0.0;
    for (float x : v.data())
        if (x != 0.0f) {
            sum += x;
            ++n;
        }
    if (n < 2) throw InvalidArgument("znormalize: fewer than two nonzero voxels");
    const double mean = sum / double(n);
    double ss = 0.0;
    for (float x : v.data())
        if (x != 0.0f) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / double(n));
    if (!(sd > 0.0)) throw InvalidArgument("znormalize: nonzero region has zero variance");
    Volume out(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = v[i] == 0.0f ? 0.0f : static_cast<float>((v[i] - mean) / sd);
    return out;
}

/// Index-space block [lo, hi] (inclusive) holding every voxel whose center is
/// in the half-open box. For grids whose axes are aligned with the world axes
/// the block contains exactly those voxels.
inline std::pair<Index3, Index3> crop_range(const Grid& g, const BoundingBox& b) {
    Vec3 vlo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 vhi = -vlo;
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner((c & 1) ? b.max[0] : b.min[0], (c & 2) ? b.max[1] : b.min[1], (c & 4) ? b.max[2] : b.min[2]);
        const Vec3 v = g.world_to_voxel(corner);
        vlo = vlo.cwiseMin(v);
        vhi = vhi.cwiseMax(v);
    }
    Index3 lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(vlo[a] - 1e-9)) - 1);
        hi[a] = std::min<std::int64_t>(g.dims[a] - 1, static_cast<std::int64_t>(std::floor(vhi[a] + 1e-9)) + 1);
    }
    Index3 found_lo{g.dims[0], g.dims[1], g.dims[2]};
    Index3 found_hi{-1, -1, -1};
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
        for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
                if (!b.contains_half_open(g.voxel_to_world(Index3{x, y, z}))) continue;
                const Index3 i{x, y, z};
                for (int a = 0; a < 3; ++a) {
                    found_lo[a] = std::min(found_lo[a], i[a]);
                    found_hi[a] = std::max(found_hi[a], i[a]);
                }
            }
    if (found_hi[0] < 0) throw InvalidArgument("crop: box does not intersect the volume");
    return {found_lo, found_hi};
}

inline Grid sub_grid(const Grid& g, const Index3& lo, const Index3& hi) {
    return Grid({hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}, g.spacing, g.voxel_to_world(lo),
                g.orientation);
}

template <class T>
Image<T> crop(const Image<T>& img, const BoundingBox& b) {
    const auto [lo, hi] = crop_range(img.grid(), b);
    Image<T> out(sub_grid(img.grid(), lo, hi));
    const Grid& og = out.grid();
    for (std::int64_t z = 0; z < og.dims[2]; ++z)
        for (std::int64_t y = 0; y < og.dims[1]; ++y)
            for (std::int64_t x = 0; x < og.dims[0]; ++x) out.at(x, y, z) = img.at(x + lo[0], y + lo[1], z + lo[2]);
    return out;
}

inline ProbabilityMap crop(const ProbabilityMap& p, const BoundingBox& b) {
    return ProbabilityMap(crop(p.image(), b));
}

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma_vox) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma_vox * sigma_vox));
    for (auto& v : k) v /= sum;
    return k;
}

}  // namespace detail

/// Separable Gaussian smoothing (sigma in mm) with edge replication, in place.
inline void gaussian_smooth(Volume& v, double sigma_mm) {
    if (sigma_mm <= 0.0) return;
    const Grid& g = v.grid();
    std::vector<float> line;
    for (int axis = 0; axis < 3; ++axis) {
        const double sv = sigma_mm / g.spacing[axis];
        if (sv < 1e-3) continue;
        const auto k = detail::gaussian_kernel(sv);
        const int r = static_cast<int>(k.size() / 2);
        const std::int64_t n = g.dims[axis];
        const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? g.dims[0] : g.dims[0] * g.dims[1];
        line.resize(static_cast<std::size_t>(n));
        const std::int64_t other = static_cast<std::int64_t>(g.size()) / n;
        for (std::int64_t o = 0; o < other; ++o) {
            // Base index of the o-th line along `axis`.
            std::int64_t base;
            if (axis == 0) base = o * n;
            else if (axis == 1) base = (o / g.dims[0]) * g.dims[0] * g.dims[1] + (o % g.dims[0]);
            else base = o;
            for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(base + i * stride)];
            for (std::int64_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int t = -r; t <= r; ++t) {
                    const auto j = std::clamp<std::int64_t>(i + t, 0, n - 1);
                    acc += k[static_cast<std::size_t>(t + r)] * line[static_cast<std::size_t>(j)];
                }
                v[static_cast<std::size_t>(base + i * stride)] = static_cast<float>(acc);
            }
        }
    }
}


}  // namespace segbench
