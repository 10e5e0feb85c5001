#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "segbench/imageops.hpp"

using namespace segbench;

namespace {

Mat3 rot_z(double deg) { return Eigen::AngleAxisd(deg * M_PI / 180.0, Vec3::UnitZ()).toRotationMatrix(); }

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

Volume ramp_x(const Grid& g) {
    Volume v(g);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(g.voxel_to_world(g.unravel(i))[0]);
    return v;
}

}  // namespace

TEST(Grid, WorldToVoxelIdentity) {
    Grid g({10, 10, 10}, Vec3::Ones(), Vec3::Zero());
    EXPECT_TRUE(g.world_to_voxel(Vec3(3, 4, 5)).isApprox(Vec3(3, 4, 5)));
}

TEST(Grid, WorldToVoxelUniformScale) {
    Grid g({10, 10, 10}, Vec3::Constant(0.5), Vec3::Zero());
    EXPECT_TRUE(g.world_to_voxel(Vec3(1, 1, 1)).isApprox(Vec3(2, 2, 2)));
}

TEST(Grid, RotatedRoundTrip) {
    Grid g({4, 4, 4}, Vec3(1, 2, 3), Vec3(5, -1, 2), rot_z(90));
    const Vec3 p = g.voxel_to_world(Vec3(1, 0, 0));
    EXPECT_NEAR((g.world_to_voxel(p) - Vec3(1, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(Grid, RandomRoundTripWithin1e9) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-100, 100), s(0.1, 3);
    for (int k = 0; k < 500; ++k) {
        Grid g({5, 6, 7}, Vec3(s(rng), s(rng), s(rng)), Vec3(u(rng), u(rng), u(rng)), random_rotation(rng));
        const Vec3 p(u(rng), u(rng), u(rng));
        EXPECT_LT((g.voxel_to_world(g.world_to_voxel(p)) - p).norm(), 1e-9);
    }
}

TEST(Grid, RejectsInvalid) {
    EXPECT_THROW(Grid({0, 1, 1}, Vec3::Ones(), Vec3::Zero()), InvalidArgument);
    EXPECT_THROW(Grid({1, 1, 1}, Vec3(1, 0, 1), Vec3::Zero()), InvalidArgument);
    Mat3 reflect = Mat3::Identity();
    reflect(0, 0) = -1;
    EXPECT_THROW(Grid({1, 1, 1}, Vec3::Ones(), Vec3::Zero(), reflect), InvalidArgument);
    EXPECT_THROW(Volume(Grid({2, 2, 2}, Vec3::Ones(), Vec3::Zero()), std::vector<float>(7)), InvalidArgument);
}

TEST(Grid, WorldExtentCoversHalfVoxels) {
    Grid g({10, 10, 10}, Vec3::Ones(), Vec3::Zero());
    const auto e = g.world_extent();
    EXPECT_TRUE(e.min.isApprox(Vec3::Constant(-0.5)));
    EXPECT_TRUE(e.max.isApprox(Vec3::Constant(9.5)));
}

TEST(RigidTransform, InverseAndComposition) {
    std::mt19937_64 rng(3);
    RigidTransform a(random_rotation(rng), Vec3(1, 2, 3)), b(random_rotation(rng), Vec3(-4, 0, 9));
    const Vec3 p(0.3, -7, 2);
    EXPECT_LT((a.inverse().apply(a.apply(p)) - p).norm(), 1e-12);
    EXPECT_LT((a.then(b).apply(p) - b.apply(a.apply(p))).norm(), 1e-12);
    EXPECT_THROW(RigidTransform(Mat3::Zero(), Vec3::Zero()), InvalidArgument);
}

TEST(Resample, IdenticalSpacingIsIdentity) {
    std::mt19937_64 rng(1);
    Volume v(Grid({5, 4, 3}, Vec3(1, 1, 2), Vec3(1, 2, 3)));
    std::uniform_real_distribution<float> u(0, 10);
    for (auto& x : v.data()) x = u(rng);
    EXPECT_EQ(resample(v, Vec3(1, 1, 2), Interpolation::trilinear), v);
    EXPECT_EQ(resample(v, Vec3(1, 1, 2), Interpolation::nearest), v);
}

TEST(Resample, ConstantFieldStaysConstant) {
    Volume v(Grid({7, 5, 6}, Vec3(1.0, 0.7, 1.3), Vec3(-3, 2, 0)), 42.5f);
    for (const Vec3 sp : {Vec3(0.5, 0.5, 0.5), Vec3(2.0, 1.1, 0.3), Vec3(0.9, 3.0, 1.0)}) {
        const Volume r = resample(v, sp, Interpolation::trilinear);
        for (float x : r.data()) EXPECT_FLOAT_EQ(x, 42.5f);
    }
}

TEST(Resample, LinearRampExactAtInterior) {
    const Grid g({12, 4, 4}, Vec3::Ones(), Vec3(3, 0, 0));
    const Volume r = resample(ramp_x(g), Vec3::Constant(0.5), Interpolation::trilinear);
    EXPECT_EQ(r.grid().dims[0], 23);
    for (std::size_t i = 0; i < r.size(); ++i)
        EXPECT_NEAR(r[i], r.grid().voxel_to_world(r.grid().unravel(i))[0], 1e-5);
}

TEST(Resample, CoversSameExtentWithinOneVoxel) {
    const Grid g({17, 9, 5}, Vec3(0.8, 1.3, 2.0), Vec3(1, 1, 1));
    for (const Vec3& sp : std::vector<Vec3>{Vec3::Constant(0.5), Vec3::Constant(1.7), Vec3(3, 0.4, 5)}) {
        const Grid r = resampled_grid(g, sp);
        const auto a = g.world_extent(), b = r.world_extent();
        for (int k = 0; k < 3; ++k) {
            EXPECT_LE(std::abs(a.min[k] - b.min[k]), std::max(g.spacing[k], sp[k]) + 1e-9);
            EXPECT_LE(std::abs(a.max[k] - b.max[k]), std::max(g.spacing[k], sp[k]) + 1e-9);
        }
    }
}

TEST(Resample, NearestKeepsMasksBinary) {
    std::mt19937_64 rng(5);
    const Mask m = oracle::random_mask(rng, Grid({9, 8, 7}, Vec3(1, 1.5, 0.7), Vec3::Zero()));
    const Mask r = resample(m, Vec3(0.4, 0.9, 1.3), Interpolation::nearest);
    for (auto x : r.data()) EXPECT_TRUE(x == 0 || x == 1);
}

TEST(Resample, RejectsNonPositiveSpacing) {
    Volume v(Grid({3, 3, 3}, Vec3::Ones(), Vec3::Zero()));
    EXPECT_THROW(resample(v, Vec3(0, 1, 1), Interpolation::trilinear), InvalidArgument);
    EXPECT_THROW(resample(v, Vec3(1, -1, 1), Interpolation::trilinear), InvalidArgument);
}

TEST(Sampling, OutsideExtentIsZero) {
    Volume v(Grid({3, 3, 3}, Vec3::Ones(), Vec3::Zero()), 7.0f);
    EXPECT_EQ(sample_trilinear(v, Vec3(-0.6, 1, 1)), 0.0);
    EXPECT_EQ(sample_trilinear(v, Vec3(1, 2.6, 1)), 0.0);
    EXPECT_DOUBLE_EQ(sample_trilinear(v, Vec3(-0.4, 1, 2.4)), 7.0);
}

TEST(ZNormalize, DefinitionOnThreeValues) {
    Volume v(Grid({3, 1, 1}, Vec3::Ones(), Vec3::Zero()), std::vector<float>{1, 2, 3});
    const Volume z = znormalize(v);
    double mean = 0, var = 0;
    for (float x : z.data()) mean += x / 3.0;
    for (float x : z.data()) var += (x - mean) * (x - mean) / 3.0;
    EXPECT_NEAR(mean, 0.0, 1e-7);
    EXPECT_NEAR(std::sqrt(var), 1.0, 1e-6);
}

TEST(ZNormalize, ConstantIsError) {
    Volume v(Grid({3, 1, 1}, Vec3::Ones(), Vec3::Zero()), 5.0f);
    EXPECT_THROW(znormalize(v), InvalidArgument);
}

TEST(ZNormalize, ExcludesZerosMatchesTwoPassOracle) {
    Volume v(Grid({20, 3, 2}, Vec3::Ones(), Vec3::Zero()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i % 3 == 0 ? 0.0f : static_cast<float>(i) * 0.25f;
    const Volume z = znormalize(v);
    double mean = 0, n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0) mean += z[i], n += 1;
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] != 0) var += (z[i] - mean) * (z[i] - mean);
        else EXPECT_EQ(z[i], 0.0f);
    }
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(var / n), 1.0, 1e-6);
}

TEST(Crop, FullExtentIsIdentity) {
    Volume v(Grid({4, 5, 6}, Vec3::Ones(), Vec3::Zero()), 1.0f);
    EXPECT_EQ(crop(v, v.grid().world_extent()), v);
}

TEST(Crop, HandEnumeratedCenters) {
    Volume v(Grid({10, 10, 10}, Vec3::Ones(), Vec3::Zero()));
    const Volume c = crop(v, BoundingBox(Vec3::Constant(2), Vec3::Constant(5)));
    EXPECT_EQ(c.grid().dims, (Index3{3, 3, 3}));
    EXPECT_TRUE(c.grid().origin.isApprox(Vec3(2, 2, 2)));
}

TEST(Crop, ClipsToExtent) {
    Volume v(Grid({10, 10, 10}, Vec3::Ones(), Vec3::Zero()));
    const Volume c = crop(v, BoundingBox(Vec3(7, -50, 2), Vec3(40, 3, 4)));
    EXPECT_EQ(c.grid().dims, (Index3{3, 3, 2}));
    EXPECT_TRUE(c.grid().origin.isApprox(Vec3(7, 0, 2)));
}

TEST(Crop, EmptyIntersectionIsError) {
    Volume v(Grid({10, 10, 10}, Vec3::Ones(), Vec3::Zero()));
    EXPECT_THROW(crop(v, BoundingBox(Vec3::Constant(20), Vec3::Constant(30))), InvalidArgument);
    // Overlaps the physical extent but holds no voxel center.
    EXPECT_THROW(crop(v, BoundingBox(Vec3(9.2, 0, 0), Vec3(9.4, 5, 5))), InvalidArgument);
}

TEST(Crop, ContainsExactlyCentersInBoxAndIsIdempotent) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-5, 25);
    for (int k = 0; k < 200; ++k) {
        Volume v(Grid({9, 7, 8}, Vec3(1.5, 1.0, 2.0), Vec3(1, 2, 0)));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
        Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
        const BoundingBox box(a.cwiseMin(b), a.cwiseMax(b));
        std::size_t expected = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            expected += box.contains_half_open(v.grid().voxel_to_world(v.grid().unravel(i)));
        if (expected == 0) {
            EXPECT_THROW(crop(v, box), InvalidArgument);
            continue;
        }
        const Volume c = crop(v, box);
        ASSERT_EQ(c.size(), expected);
        for (std::size_t i = 0; i < c.size(); ++i) {
            const Vec3 w = c.grid().voxel_to_world(c.grid().unravel(i));
            EXPECT_TRUE(box.contains_half_open(w));
            EXPECT_EQ(c[i], v[v.grid().linear(v.grid().nearest_voxel(w)[0], v.grid().nearest_voxel(w)[1],
                                               v.grid().nearest_voxel(w)[2])]);
        }
        EXPECT_EQ(crop(c, box), c);
    }
}

TEST(Smoothing, PreservesConstants) {
    Volume v(Grid({9, 9, 9}, Vec3::Ones(), Vec3::Zero()), 3.0f);
    gaussian_smooth(v, 1.5);
    for (float x : v.data()) EXPECT_NEAR(x, 3.0f, 1e-5);
}
