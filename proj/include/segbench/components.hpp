#pragma once

#include <cstdint>
#include <vector>

#include "segbench/grid.hpp"

namespace segbench {

enum class Connectivity { six = 6, twenty_six = 26 };

inline std::vector<Index3> neighbour_offsets(Connectivity c) {
    std::vector<Index3> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (c == Connectivity::six && manhattan != 1) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

/// Component labels (0 = background, components numbered from 1 in raster
/// order of their first voxel) and per-label sizes (sizes[0] unused).
struct Labelling {
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> sizes;
};

inline Labelling label_components(const Mask& m, Connectivity c = Connectivity::twenty_six) {
    const Grid& g = m.grid();
    const auto offsets = neighbour_offsets(c);
    Labelling out{std::vector<std::uint32_t>(m.size(), 0), {0}};
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < m.size(); ++start) {
        if (!m[start] || out.labels[start]) continue;
        const auto label = static_cast<std::uint32_t>(out.sizes.size());
        std::size_t size = 0;
        out.labels[start] = label;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            const Index3 p = g.unravel(i);
            for (const auto& o : offsets) {
                const auto x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
                if (!g.in_bounds(x, y, z)) continue;
                const std::size_t j = g.linear(x, y, z);
                if (m[j] && !out.labels[j]) {
                    out.labels[j] = label;
                    stack.push_back(j);
                }
            }
        }
        out.sizes.push_back(size);
    }
    return out;
}

/// Keeps only the largest 26-connected component. Equal sizes resolve to the
/// component met first in raster order.
inline Mask largest_component(const Mask& m) {
    const auto lab = label_components(m, Connectivity::twenty_six);
    Mask out(m.grid());
    if (lab.sizes.size() <= 1) return out;
    std::size_t best = 1;
    for (std::size_t l = 2; l < lab.sizes.size(); ++l)
        if (lab.sizes[l] > lab.sizes[best]) best = l;
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = lab.labels[i] == best ? 1 : 0;
    return out;
}

}  // namespace segbench
