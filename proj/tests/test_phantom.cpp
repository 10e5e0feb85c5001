#include <gtest/gtest.h>

#include <set>

#include "segbench/phantom.hpp"
#include "segbench/study.hpp"

using namespace segbench;

TEST(Phantom, NoiselessPhantomIsTwoValued) {
    PhantomSpec spec;
    spec.volume_extent = Vec3(32, 32, 32);
    spec.lesion_center = Vec3(16, 16, 16);
    const Phantom p = make_phantom(spec);
    std::set<float> values(p.volume.data().begin(), p.volume.data().end());
    EXPECT_EQ(values, (std::set<float>{100.0f, 160.0f}));
    for (std::size_t i = 0; i < p.volume.size(); ++i) EXPECT_EQ(p.truth[i] != 0, p.volume[i] == 160.0f);
}

TEST(Phantom, DefaultLesionHasFifteenPointNineMillimetreDiameter) {
    const PhantomSpec spec;
    const Phantom p = make_phantom(spec);
    const double voxels_mm3 = double(count(p.truth)) * p.truth.grid().voxel_volume_mm3();
    const double diameter = std::cbrt(6.0 * voxels_mm3 / M_PI);
    EXPECT_NEAR(diameter, 15.9, 0.1);
}

TEST(Phantom, MaskVolumeCloseToAnalytic) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> r(4.0, 12.0), c(-0.5, 0.5);
    for (int k = 0; k < 20; ++k) {
        PhantomSpec spec;
        spec.volume_extent = Vec3(40, 40, 40);
        spec.lesion_radii = Vec3(r(rng), r(rng), r(rng));
        spec.lesion_center = Vec3(20 + c(rng), 20 + c(rng), 20 + c(rng));
        const Phantom p = make_phantom(spec);
        const double got = double(count(p.truth)) * p.truth.grid().voxel_volume_mm3();
        EXPECT_NEAR(got / spec.lesion_volume_mm3(), 1.0, 0.02) << "radii " << spec.lesion_radii.transpose();
    }
}

TEST(Phantom, SameSeedSameBytes) {
    PhantomSpec spec;
    spec.volume_extent = Vec3(24, 24, 24);
    spec.lesion_center = Vec3(12, 12, 12);
    spec.lesion_radii = Vec3(5, 5, 5);
    spec.speckle_sigma = 0.3;
    spec.boundary_blur_sigma = 0.8;
    spec.rng_seed = 77;
    const Phantom a = make_phantom(spec), b = make_phantom(spec);
    EXPECT_EQ(a.volume, b.volume);
    spec.rng_seed = 78;
    EXPECT_NE(make_phantom(spec).volume, a.volume);
}

TEST(Phantom, RejectsLesionOutsideVolume) {
    PhantomSpec spec;
    spec.lesion_center = Vec3(2, 32, 32);
    EXPECT_THROW(make_phantom(spec), InvalidArgument);
    spec = PhantomSpec{};
    spec.lesion_radii = Vec3(0, 1, 1);
    EXPECT_THROW(make_phantom(spec), InvalidArgument);
}

TEST(Phantom, JsonRoundTrip) {
    const PhantomSpec spec = study::sample_phantom(5, 3, {});
    const PhantomSpec back = nlohmann::json(spec).get<PhantomSpec>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(spec));
}

TEST(Phantom, SampledDatasetSpecsStayInRange) {
    const study::DatasetOptions o;
    for (std::size_t i = 0; i < 200; ++i) {
        const PhantomSpec s = study::sample_phantom(1, i, o);
        EXPECT_NO_THROW(s.validate());
        const double ml = s.volume_extent.prod() / 1000.0;
        EXPECT_GE(ml, o.min_volume_ml - 1e-6);
        EXPECT_LE(ml, o.max_volume_ml + 1e-6);
        const double d = 2.0 * std::cbrt(s.lesion_radii.prod());
        EXPECT_GE(d, o.min_diameter_mm - 1e-6);
        EXPECT_LE(d, o.max_diameter_mm + 1e-6);
    }
}

TEST(Sweep, ConstantVolumeGivesConstantFrames) {
    const Volume v(Grid({20, 20, 20}, Vec3::Ones(), Vec3::Zero()), 42.0f);
    SweepSpec ss;
    ss.n_frames = 5;
    ss.frame_size = Eigen::Vector2d(10, 10);
    ss.path.start_center = Vec3(10, 10, 5);
    ss.path.step = Vec3(0, 0, 1);
    ss.path.tilt_deg = 10;
    const Sweep s = simulate_sweep(v, ss);
    ASSERT_EQ(s.frames.size(), 5u);
    for (const auto& f : s.frames)
        for (float x : f.pixels) EXPECT_FLOAT_EQ(x, 42.0f);
}

TEST(Sweep, FrameCountDefaultsToSampledRange) {
    const Volume v(Grid({10, 10, 10}, Vec3::Ones(), Vec3::Zero()), 1.0f);
    SweepSpec ss;
    ss.frame_size = Eigen::Vector2d(4, 4);
    ss.path.start_center = Vec3(5, 5, 0);
    ss.path.step = Vec3(0, 0, 0.1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ss.rng_seed = seed;
        const auto n = simulate_sweep(v, ss).frames.size();
        EXPECT_GE(n, std::size_t(kMinSweepFrames));
        EXPECT_LE(n, std::size_t(kMaxSweepFrames));
    }
    ss.n_frames = 38;
    EXPECT_EQ(simulate_sweep(v, ss).frames.size(), 38u);
}

TEST(Sweep, TrajectoryMissingTheVolumeIsError) {
    const Volume v(Grid({10, 10, 10}, Vec3::Ones(), Vec3::Zero()), 1.0f);
    SweepSpec ss;
    ss.n_frames = 10;
    ss.frame_size = Eigen::Vector2d(4, 4);
    ss.path.start_center = Vec3(100, 100, 100);
    EXPECT_THROW(simulate_sweep(v, ss), InvalidArgument);
    ss.n_frames = 0;
    EXPECT_THROW(simulate_sweep(v, ss), InvalidArgument);
}

TEST(Sweep, PoseNoiseLeavesPixelsButPerturbsPoses) {
    PhantomSpec spec;
    spec.volume_extent = Vec3(32, 32, 32);
    spec.lesion_center = Vec3(16, 16, 16);
    const Volume v = make_phantom(spec).volume;
    SweepSpec ss;
    ss.n_frames = 6;
    ss.frame_size = Eigen::Vector2d(20, 20);
    ss.path.start_center = Vec3(16, 16, 10);
    ss.path.step = Vec3(0, 0, 2);
    const Sweep clean = simulate_sweep(v, ss);
    ss.pose_noise_mm = 0.5;
    ss.pose_noise_deg = 1.0;
    ss.rng_seed = 3;
    const Sweep noisy = simulate_sweep(v, ss);
    for (std::size_t k = 0; k < clean.frames.size(); ++k) {
        EXPECT_EQ(clean.frames[k].pixels, noisy.frames[k].pixels);
        EXPECT_GT((clean.frames[k].pose.translation - noisy.frames[k].pose.translation).norm(), 0.0);
        EXPECT_TRUE(is_rotation(noisy.frames[k].pose.rotation));
    }
}
