#pragma once

// Freehand sweep reconstruction: tracked 2D frames -> regular 3D grid.
//
// Pixel-nearest-neighbour binning with mean compounding, followed by a
// bounded hole-filling step. Each voxel's samples are sorted before they are
// summed, so the result does not depend on frame order.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "segbench/grid.hpp"
#include "segbench/nrrd.hpp"

namespace segbench {

/// One 2D image with the tracked pose of its plane.
///
/// Pixel (i, j) sits at plane coordinates (i * spacing.x, j * spacing.y, 0)
/// which `pose` maps into world millimetres.
struct TrackedFrame {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<float> pixels;  // row-major, i fastest
    Eigen::Vector2d pixel_spacing = Eigen::Vector2d::Ones();
    RigidTransform pose;
    double timestamp = 0.0;

    float pixel(std::int64_t i, std::int64_t j) const { return pixels[static_cast<std::size_t>(i + width * j)]; }

    Vec3 pixel_to_world(double i, double j) const {
        return pose.apply(Vec3(i * pixel_spacing[0], j * pixel_spacing[1], 0.0));
    }

    void validate() const {
        if (width < 1 || height < 1) throw InvalidArgument("frame dims must be positive");
        if (pixels.size() != static_cast<std::size_t>(width * height))
            throw InvalidArgument("frame pixel count does not match its dims");
        if (!(pixel_spacing.array() > 0.0).all()) throw InvalidArgument("frame pixel spacing must be positive");
        if (!is_rotation(pose.rotation)) throw InvalidArgument("frame pose rotation is not a proper rotation");
    }
};

struct Sweep {
    std::vector<TrackedFrame> frames;
    std::string probe_id;

    void validate() const {
        if (frames.empty()) throw InvalidArgument("sweep has no frames");
        for (std::size_t i = 0; i < frames.size(); ++i) {
            frames[i].validate();
            if (i > 0 && frames[i].timestamp < frames[i - 1].timestamp)
                throw InvalidArgument("sweep timestamps must be nondecreasing");
        }
    }
};

/// Axis-aligned output grid enclosing every frame pixel, padded by one voxel per side.
inline Grid output_grid(const Sweep& s, const Vec3& spacing) {
    if (s.frames.empty()) throw InvalidArgument("output_grid: sweep has no frames");
    if (!(spacing.array() > 0.0).all()) throw InvalidArgument("output_grid: spacing must be positive");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& f : s.frames) {
        for (int c = 0; c < 4; ++c) {
            const Vec3 p = f.pixel_to_world((c & 1) ? double(f.width - 1) : 0.0, (c & 2) ? double(f.height - 1) : 0.0);
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    }
    Index3 dims{};
    for (int a = 0; a < 3; ++a)
        dims[a] = static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / spacing[a] + 1e-9)) + 3;
    return Grid(dims, spacing, lo - spacing);
}

struct Reconstruction {
    Volume volume;
    Mask filled;
};

namespace detail {

inline constexpr int kHoleFillMinNeighbours = 7;
inline constexpr int kHoleFillPasses = 2;

inline void fill_holes(Volume& vol, Mask& filled) {
    const Grid& g = vol.grid();
    for (int pass = 0; pass < kHoleFillPasses; ++pass) {
        std::vector<std::pair<std::size_t, float>> updates;
        for (std::int64_t z = 0; z < g.dims[2]; ++z)
            for (std::int64_t y = 0; y < g.dims[1]; ++y)
                for (std::int64_t x = 0; x < g.dims[0]; ++x) {
                    if (filled.at(x, y, z)) continue;
                    int n = 0;
                    double sum = 0.0;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                if (!dx && !dy && !dz) continue;
                                const auto nx = x + dx, ny = y + dy, nz = z + dz;
                                if (!g.in_bounds(nx, ny, nz) || !filled.at(nx, ny, nz)) continue;
                                ++n;
                                sum += vol.at(nx, ny, nz);
                            }
                    if (n >= kHoleFillMinNeighbours)
                        updates.emplace_back(g.linear(x, y, z), static_cast<float>(sum / n));
                }
        if (updates.empty()) break;
        for (const auto& [i, v] : updates) {
            vol[i] = v;
            filled[i] = 1;
        }
    }
}

}  // namespace detail

/// Binning only, without hole filling. Exposed for tests.
inline Reconstruction bin_frames(const Sweep& s, const Grid& grid) {
    // Bucket every pixel by its nearest voxel, then reduce each bucket in
    // sorted value order.
    const std::size_t nvox = grid.size();
    std::vector<std::uint32_t> counts(nvox + 1, 0);
    std::vector<std::uint32_t> target;
    std::size_t total = 0;
    for (const auto& f : s.frames) total += f.pixels.size();
    target.resize(total);

    std::size_t k = 0;
    for (const auto& f : s.frames) {
        const Vec3 p0 = grid.world_to_voxel(f.pixel_to_world(0, 0));
        const Vec3 du = grid.world_to_voxel(f.pixel_to_world(1, 0)) - p0;
        const Vec3 dv = grid.world_to_voxel(f.pixel_to_world(0, 1)) - p0;
        for (std::int64_t j = 0; j < f.height; ++j)
            for (std::int64_t i = 0; i < f.width; ++i, ++k) {
                const Vec3 v = p0 + du * double(i) + dv * double(j);
                const auto x = static_cast<std::int64_t>(std::floor(v[0] + 0.5));
                const auto y = static_cast<std::int64_t>(std::floor(v[1] + 0.5));
                const auto z = static_cast<std::int64_t>(std::floor(v[2] + 0.5));
                if (!grid.in_bounds(x, y, z)) {
                    target[k] = std::numeric_limits<std::uint32_t>::max();
                    continue;
                }
                const auto lin = static_cast<std::uint32_t>(grid.linear(x, y, z));
                target[k] = lin;
                ++counts[lin + 1];
            }
    }
    for (std::size_t i = 1; i <= nvox; ++i) counts[i] += counts[i - 1];
    std::vector<float> bucketed(counts[nvox]);
    {
        std::vector<std::uint32_t> cursor(counts.begin(), counts.end() - 1);
        k = 0;
        for (const auto& f : s.frames)
            for (float v : f.pixels) {
                const auto t = target[k++];
                if (t != std::numeric_limits<std::uint32_t>::max()) bucketed[cursor[t]++] = v;
            }
    }
    Reconstruction r{Volume(grid), Mask(grid)};
    for (std::size_t i = 0; i < nvox; ++i) {
        const auto b = counts[i], e = counts[i + 1];
        if (b == e) continue;
        std::sort(bucketed.begin() + b, bucketed.begin() + e);
        double sum = 0.0;
        for (auto q = b; q < e; ++q) sum += bucketed[q];
        r.volume[i] = static_cast<float>(sum / double(e - b));
        r.filled[i] = 1;
    }
    return r;
}

inline Reconstruction reconstruct(const Sweep& s, const Vec3& spacing = Vec3::Constant(0.5)) {
    if (s.frames.empty()) throw InvalidArgument("reconstruct: sweep has no frames");
    s.validate();
    const Grid grid = output_grid(s, spacing);
    if (grid.size() >= std::numeric_limits<std::uint32_t>::max())
        throw InvalidArgument("reconstruct: output grid too large");
    Reconstruction r = bin_frames(s, grid);
    detail::fill_holes(r.volume, r.filled);
    return r;
}

// ---------------------------------------------------------------------------
// On-disk sweep: <dir>/sweep.json plus one float32 little-endian raw file per
// frame. Poses are stored as the 12 numbers of the 3x4 matrix [R | t],
// row-major.

inline void write_sweep(const std::filesystem::path& dir, const Sweep& s) {
    s.validate();
    std::filesystem::create_directories(dir);
    const auto& f0 = s.frames.front();
    nlohmann::json j;
    j["probe_id"] = s.probe_id;
    j["pixel_spacing"] = {f0.pixel_spacing[0], f0.pixel_spacing[1]};
    j["frame_dims"] = {f0.width, f0.height};
    j["frames"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.frames.size(); ++i) {
        const auto& f = s.frames[i];
        if (f.width != f0.width || f.height != f0.height || f.pixel_spacing != f0.pixel_spacing)
            throw InvalidArgument("write_sweep: all frames must share dims and pixel spacing");
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.raw", i);
        std::vector<double> pose;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) pose.push_back(f.pose.rotation(r, c));
            pose.push_back(f.pose.translation[r]);
        }
        j["frames"].push_back({{"file", name}, {"pose", pose}, {"timestamp", f.timestamp}});
        std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("write_sweep: cannot write " + (dir / name).string());
        nrrd::detail::write_payload(os, std::span<const float>(f.pixels));
    }
    std::ofstream os(dir / "sweep.json", std::ios::trunc);
    if (!os) throw IoError("write_sweep: cannot write sweep.json");
    os << j.dump(2) << "\n";
}

inline Sweep read_sweep(const std::filesystem::path& dir) {
    std::ifstream is(dir / "sweep.json");
    if (!is) throw IoError("read_sweep: cannot open " + (dir / "sweep.json").string());
    Sweep s;
    try {
        const auto j = nlohmann::json::parse(is);
        s.probe_id = j.value("probe_id", std::string{});
        const auto sp = j.at("pixel_spacing").get<std::vector<double>>();
        const auto dims = j.at("frame_dims").get<std::vector<std::int64_t>>();
        if (sp.size() != 2 || dims.size() != 2) throw ParseError("pixel_spacing and frame_dims need 2 entries");
        for (const auto& fj : j.at("frames")) {
            TrackedFrame f;
            f.width = dims[0];
            f.height = dims[1];
            f.pixel_spacing = {sp[0], sp[1]};
            const auto pose = fj.at("pose").get<std::vector<double>>();
            if (pose.size() != 12) throw ParseError("frame pose must have 12 numbers");
            Mat3 r;
            Vec3 t;
            for (int row = 0; row < 3; ++row) {
                for (int c = 0; c < 3; ++c) r(row, c) = pose[row * 4 + c];
                t[row] = pose[row * 4 + 3];
            }
            f.pose = RigidTransform(r, t);
            f.timestamp = fj.value("timestamp", 0.0);
            const auto file = dir / fj.at("file").get<std::string>();
            std::ifstream raw(file, std::ios::binary);
            if (!raw) throw IoError("read_sweep: cannot open " + file.string());
            if (f.width < 1 || f.height < 1) throw ParseError("frame_dims must be positive");
            f.pixels.resize(static_cast<std::size_t>(f.width * f.height));
            std::vector<unsigned char> buf(f.pixels.size() * 4);
            raw.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
            if (static_cast<std::size_t>(raw.gcount()) != buf.size())
                throw ParseError("frame file " + file.string() + " is shorter than frame_dims imply");
            for (std::size_t i = 0; i < f.pixels.size(); ++i)
                f.pixels[i] = nrrd::detail::load<float>(buf.data() + 4 * i, std::endian::native == std::endian::big);
            s.frames.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("read_sweep: malformed sweep.json: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("read_sweep: ") + e.what());
    }
    s.validate();
    return s;
}

}  // namespace segbench
