#pragma once

// Voxel grids, images on grids, boxes and rigid transforms.
//
// Conventions used throughout the library:
//  * image data is stored x-fastest: linear = x + nx * (y + ny * z)
//  * world coordinates are right-handed millimetres
//  * the origin is the world position of the *center* of voxel (0,0,0)
//  * world = origin + orientation * diag(spacing) * voxel

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "segbench/error.hpp"

namespace segbench {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index3 = std::array<std::int64_t, 3>;

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
    if (!r.allFinite()) return false;
    if (!(r.transpose() * r).isApprox(Mat3::Identity(), tol)) return false;
    return std::abs(r.determinant() - 1.0) < tol;
}

/// Axis-aligned box in world millimetres.
struct BoundingBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    BoundingBox() = default;
    BoundingBox(const Vec3& lo, const Vec3& hi) : min(lo), max(hi) {
        if (!lo.allFinite() || !hi.allFinite())
            throw InvalidArgument("bounding box corners must be finite");
        for (int a = 0; a < 3; ++a)
            if (lo[a] > hi[a]) throw InvalidArgument("bounding box min must be <= max");
    }

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 size() const { return max - min; }

    bool contains_half_open(const Vec3& p) const {
        for (int a = 0; a < 3; ++a)
            if (p[a] < min[a] || p[a] >= max[a]) return false;
        return true;
    }

    /// Closed-interval overlap test; touching boxes intersect.
    bool intersects(const BoundingBox& o) const {
        for (int a = 0; a < 3; ++a)
            if (o.max[a] < min[a] || o.min[a] > max[a]) return false;
        return true;
    }

    bool operator==(const BoundingBox& o) const { return min == o.min && max == o.max; }
};

/// Rotation followed by translation: p -> rotation * p + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    RigidTransform() = default;
    RigidTransform(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {
        if (!is_rotation(r)) throw InvalidArgument("rigid transform rotation is not a proper rotation");
        if (!t.allFinite()) throw InvalidArgument("rigid transform translation must be finite");
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }
    RigidTransform then(const RigidTransform& next) const {
        RigidTransform out;
        out.rotation = next.rotation * rotation;
        out.translation = next.rotation * translation + next.translation;
        return out;
    }
};

/// Geometry of a regular voxel grid.
struct Grid {
    Index3 dims{1, 1, 1};
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();
    Mat3 orientation = Mat3::Identity();

    Grid() = default;
    Grid(Index3 d, const Vec3& sp, const Vec3& org, const Mat3& orient = Mat3::Identity())
        : dims(d), spacing(sp), origin(org), orientation(orient) {
        validate();
    }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 1) throw InvalidArgument("grid dims must be positive");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw InvalidArgument("grid spacing must be positive and finite");
        }
        if (!origin.allFinite()) throw InvalidArgument("grid origin must be finite");
        if (!is_rotation(orientation)) throw InvalidArgument("grid orientation must be a proper rotation");
    }

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    std::size_t linear(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
    }

    Index3 unravel(std::size_t i) const {
        const auto nx = static_cast<std::size_t>(dims[0]);
        const auto ny = static_cast<std::size_t>(dims[1]);
        return {static_cast<std::int64_t>(i % nx), static_cast<std::int64_t>((i / nx) % ny),
                static_cast<std::int64_t>(i / (nx * ny))};
    }

    bool in_bounds(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    }

    double voxel_volume_mm3() const { return spacing.prod(); }

    Vec3 voxel_to_world(const Vec3& v) const { return origin + orientation * spacing.cwiseProduct(v); }
    Vec3 voxel_to_world(const Index3& i) const {
        return voxel_to_world(Vec3(double(i[0]), double(i[1]), double(i[2])));
    }

    Vec3 world_to_voxel(const Vec3& p) const {
        return (orientation.transpose() * (p - origin)).cwiseQuotient(spacing);
    }

    /// Nearest voxel index to a world point (may lie outside the grid).
    Index3 nearest_voxel(const Vec3& p) const {
        const Vec3 v = world_to_voxel(p);
        return {static_cast<std::int64_t>(std::floor(v[0] + 0.5)),
                static_cast<std::int64_t>(std::floor(v[1] + 0.5)),
                static_cast<std::int64_t>(std::floor(v[2] + 0.5))};
    }

    /// True when p lies within the physical extent (voxel centers +- half a voxel).
    bool contains_world(const Vec3& p) const {
        const Vec3 v = world_to_voxel(p);
        for (int a = 0; a < 3; ++a)
            if (v[a] < -0.5 || v[a] > double(dims[a]) - 0.5) return false;
        return true;
    }

    /// Axis-aligned world box enclosing the physical extent of the grid.
    BoundingBox world_extent() const {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (int c = 0; c < 8; ++c) {
            const Vec3 corner((c & 1) ? dims[0] - 0.5 : -0.5, (c & 2) ? dims[1] - 0.5 : -0.5,
                              (c & 4) ? dims[2] - 0.5 : -0.5);
            const Vec3 w = voxel_to_world(corner);
            lo = lo.cwiseMin(w);
            hi = hi.cwiseMax(w);
        }
        return {lo, hi};
    }

    bool same_as(const Grid& o, double tol = 1e-9) const {
        return dims == o.dims && (spacing - o.spacing).cwiseAbs().maxCoeff() <= tol &&
               (origin - o.origin).cwiseAbs().maxCoeff() <= tol &&
               (orientation - o.orientation).cwiseAbs().maxCoeff() <= tol;
    }

    bool operator==(const Grid& o) const {
        return dims == o.dims && spacing == o.spacing && origin == o.origin && orientation == o.orientation;
    }

    std::string describe() const {
        std::ostringstream os;
        os << "dims=" << dims[0] << "x" << dims[1] << "x" << dims[2] << " spacing=(" << spacing.transpose()
           << ") origin=(" << origin.transpose() << ")";
        return os.str();
    }
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_as(b)) throw GridMismatch(std::string(what) + ": grids differ (" + a.describe() + " vs " + b.describe() + ")");
}

/// Scalar image on a grid.
template <class T>
class Image {
public:
    using value_type = T;

    Image() = default;
    explicit Image(Grid g, T fill = T{}) : grid_(std::move(g)), data_(grid_.size(), fill) {}
    Image(Grid g, std::vector<T> data) : grid_(std::move(g)), data_(std::move(data)) {
        if (data_.size() != grid_.size()) throw InvalidArgument("image data length does not match grid dims");
    }

    const Grid& grid() const { return grid_; }
    std::size_t size() const { return data_.size(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[grid_.linear(x, y, z)]; }
    const T& at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[grid_.linear(x, y, z)]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    const std::vector<T>& values() const { return data_; }

    bool operator==(const Image& o) const { return grid_ == o.grid_ && data_ == o.data_; }

private:
    Grid grid_;
    std::vector<T> data_;
};

using Volume = Image<float>;
/// Binary image; every element is 0 or 1.
using Mask = Image<std::uint8_t>;

inline std::size_t count(const Mask& m) {
    return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; }));
}

inline double volume_ml(const Mask& m) { return double(count(m)) * m.grid().voxel_volume_mm3() / 1000.0; }

/// Real image with every value in [0,1].
class ProbabilityMap {
public:
    ProbabilityMap() = default;
    explicit ProbabilityMap(Image<float> img) : img_(std::move(img)) {
        for (float v : img_.data())
            if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("probability map values must lie in [0,1]");
    }

    static ProbabilityMap clamped(Image<float> img) {
        for (float& v : img.data()) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
        return ProbabilityMap(std::move(img));
    }

    const Grid& grid() const { return img_.grid(); }
    const Image<float>& image() const { return img_; }
    std::span<const float> data() const { return img_.data(); }
    float operator[](std::size_t i) const { return img_[i]; }
    std::size_t size() const { return img_.size(); }

private:
    Image<float> img_;
};

}  // namespace segbench
