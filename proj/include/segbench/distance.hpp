#pragma once

// Exact squared Euclidean distance transform on anisotropic grids
// (lower envelope of parabolas, one axis at a time).

#include <cmath>
#include <limits>
#include <vector>

#include "segbench/grid.hpp"

namespace segbench {

namespace detail {

/// In-place 1D squared distance transform of `f` (length n) where sample
/// positions are `step` mm apart. Infinite entries are not sites.
inline void edt_1d(std::vector<double>& f, std::vector<double>& out, std::vector<int>& v, std::vector<double>& z,
                   double step) {
    const int n = static_cast<int>(f.size());
    const double w = step * step;
    const double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        while (k >= 0) {
            const int p = v[k];
            const double s = ((f[q] + w * q * q) - (f[p] + w * double(p) * p)) / (2.0 * w * (q - p));
            if (s <= z[k]) --k;
            else break;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : ((f[q] + w * q * q) - (f[v[k - 1]] + w * double(v[k - 1]) * v[k - 1])) /
                                   (2.0 * w * (q - v[k - 1]));
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double d = q - v[j];
        out[q] = w * d * d + f[v[j]];
    }
}

}  // namespace detail

/// Squared distance (mm^2) from every voxel center to the nearest site.
/// Infinity everywhere when there are no sites.
inline std::vector<double> squared_distance_transform(const Grid& g, const std::vector<std::uint8_t>& sites) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(g.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = sites[i] ? 0.0 : inf;
    const std::int64_t nmax = std::max({g.dims[0], g.dims[1], g.dims[2]});
    std::vector<double> f, out;
    std::vector<int> v(static_cast<std::size_t>(nmax));
    std::vector<double> z(static_cast<std::size_t>(nmax) + 1);
    for (int axis = 0; axis < 3; ++axis) {
        const std::int64_t n = g.dims[axis];
        const std::int64_t stride = axis == 0 ? 1 : axis == 1 ? g.dims[0] : g.dims[0] * g.dims[1];
        const std::int64_t lines = static_cast<std::int64_t>(g.size()) / n;
        f.resize(static_cast<std::size_t>(n));
        out.resize(static_cast<std::size_t>(n));
        for (std::int64_t o = 0; o < lines; ++o) {
            std::int64_t base;
            if (axis == 0) base = o * n;
            else if (axis == 1) base = (o / g.dims[0]) * g.dims[0] * g.dims[1] + (o % g.dims[0]);
            else base = o;
            for (std::int64_t i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(base + i * stride)];
            detail::edt_1d(f, out, v, z, g.spacing[axis]);
            for (std::int64_t i = 0; i < n; ++i) d[static_cast<std::size_t>(base + i * stride)] = out[static_cast<std::size_t>(i)];
        }
    }
    return d;
}

}  // namespace segbench
