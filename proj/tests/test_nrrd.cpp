#include <gtest/gtest.h>

#include <random>

#include "segbench/nrrd.hpp"
#include "test_support.hpp"

using namespace segbench;
using testing_support::ScratchDir;
using testing_support::slurp;
using testing_support::spit;

namespace {

Grid rotated_grid() {
    const Mat3 r = Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix();
    return Grid({5, 4, 3}, Vec3(0.5, 0.75, 1.25), Vec3(-10.125, 3.5, 7.0), r);
}

}  // namespace

TEST(Nrrd, VolumeRoundTripIsBitwise) {
    ScratchDir dir;
    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0, 100);
    Volume v(rotated_grid());
    for (auto& x : v.data()) x = n(rng);
    nrrd::write(dir.path() / "v.nrrd", v);
    const Volume back = nrrd::read_volume(dir.path() / "v.nrrd");
    EXPECT_EQ(back.values(), v.values());
    EXPECT_TRUE(back.grid().same_as(v.grid(), 1e-12));
}

TEST(Nrrd, MaskRoundTripStoresUint8) {
    ScratchDir dir;
    Mask m(Grid({4, 4, 4}, Vec3::Ones(), Vec3::Zero()));
    for (std::size_t i = 0; i < m.size(); i += 3) m[i] = 1;
    nrrd::write(dir.path() / "m.nrrd", m);
    const auto text = slurp(dir.path() / "m.nrrd");
    EXPECT_NE(text.find("type: uint8"), std::string::npos);
    EXPECT_EQ(nrrd::read_mask(dir.path() / "m.nrrd"), m);
}

TEST(Nrrd, HeaderCarriesGeometryFields) {
    ScratchDir dir;
    nrrd::write(dir.path() / "v.nrrd", Volume(rotated_grid()));
    const auto text = slurp(dir.path() / "v.nrrd");
    for (const char* f : {"sizes: 5 4 3", "space directions:", "space origin:", "endian: little", "encoding: raw"})
        EXPECT_NE(text.find(f), std::string::npos) << f;
}

TEST(Nrrd, ReadsBigEndianShortsAndSpacings) {
    ScratchDir dir;
    std::string s = "NRRD0004\ntype: short\ndimension: 3\nsizes: 2 1 1\nspacings: 0.5 2 3\nendian: big\nencoding: raw\n\n";
    s += std::string("\x01\x02\xff\xfe", 4);
    spit(dir.path() / "b.nrrd", s);
    const Volume v = nrrd::read_volume(dir.path() / "b.nrrd");
    EXPECT_EQ(v[0], 258.0f);
    EXPECT_EQ(v[1], -2.0f);
    EXPECT_TRUE(v.grid().spacing.isApprox(Vec3(0.5, 2, 3)));
}

TEST(Nrrd, RejectsMalformedHeaders) {
    ScratchDir dir;
    const std::string good_tail = "encoding: raw\n\n";
    const std::vector<std::string> bad = {
        "garbage\n",
        "NRRD0004\ntype: float\ndimension: 3\nendian: little\n" + good_tail,                       // no sizes
        "NRRD0004\ntype: float\ndimension: 2\nsizes: 1 1\nendian: little\n" + good_tail,           // 2D
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nendian: little\nencoding: gzip\n\n",   // gzip
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\n" + good_tail,                         // no endian
        "NRRD0004\ntype: complex\ndimension: 3\nsizes: 1 1 1\nendian: little\n" + good_tail,       // type
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nendian: little\nencoding: raw\n",      // unterminated
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 2 2 2\nendian: little\n" + good_tail + "ab",  // short payload
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nendian: little\ndata file: x.raw\n" + good_tail,
        "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nendian: little\n"
        "space directions: (1,0,0) (1,0,0) (0,0,1)\n" + good_tail + std::string(4, '\0'),
    };
    for (std::size_t i = 0; i < bad.size(); ++i) {
        spit(dir.path() / "x.nrrd", bad[i]);
        EXPECT_THROW(nrrd::read_volume(dir.path() / "x.nrrd"), ParseError) << "case " << i;
    }
    EXPECT_THROW(nrrd::read_volume(dir.path() / "missing.nrrd"), IoError);
}

TEST(Nrrd, MaskAndProbabilityValueChecks) {
    ScratchDir dir;
    Volume v(Grid({2, 1, 1}, Vec3::Ones(), Vec3::Zero()), std::vector<float>{0.0f, 2.0f});
    nrrd::write(dir.path() / "v.nrrd", v);
    EXPECT_THROW(nrrd::read_mask(dir.path() / "v.nrrd"), ParseError);
    EXPECT_THROW(nrrd::read_probability(dir.path() / "v.nrrd"), ParseError);
}

TEST(Nrrd, ObserverSeesEveryRead) {
    ScratchDir dir;
    nrrd::write(dir.path() / "a.nrrd", Volume(Grid({1, 1, 1}, Vec3::Ones(), Vec3::Zero())));
    std::vector<std::filesystem::path> seen;
    nrrd::read_volume(dir.path() / "a.nrrd", [&](const auto& p) { seen.push_back(p); });
    ASSERT_EQ(seen.size(), 1u);
    EXPECT_EQ(seen[0], dir.path() / "a.nrrd");
}
