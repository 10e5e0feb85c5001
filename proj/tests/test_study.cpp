#include <gtest/gtest.h>

#include <set>

#include "segbench/study.hpp"
#include "test_support.hpp"

using namespace segbench;
using namespace segbench::study;
using testing_support::slurp;

namespace {

const char* const kDeterministicFiles[] = {"report.txt", "report.csv", "significance.csv", "cases.csv"};

class StudyTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new testing_support::ScratchDir("segbench-study");
        manifest_ = new Manifest(make_dataset(dir_->path() / "data", 1, 2, 4, 17));
    }
    static void TearDownTestSuite() {
        delete manifest_;
        delete dir_;
    }

    static const Manifest& manifest() { return *manifest_; }
    static const std::filesystem::path& root() { return dir_->path(); }

    /// Method that returns the ground truth itself, cropped to the ROI.
    static Method oracle_method() {
        Method m;
        m.name = "oracle";
        m.predict = [](const Volume&, const BoundingBox& roi, const CaseEntry& c) {
            const Mask gt = crop(nrrd::read_mask(c.gt_mask_path), roi);
            Image<float> p(gt.grid());
            for (std::size_t i = 0; i < gt.size(); ++i) p[i] = gt[i];
            return ProbabilityMap(std::move(p));
        };
        return m;
    }

    static Method null_method() {
        Method m;
        m.name = "null";
        m.predict = [](const Volume& v, const BoundingBox& roi, const CaseEntry&) {
            return ProbabilityMap(Image<float>(crop(v, roi).grid()));
        };
        return m;
    }

private:
    static inline testing_support::ScratchDir* dir_ = nullptr;
    static inline Manifest* manifest_ = nullptr;
};

Manifest copy_with_corrupted(const Manifest& m, std::initializer_list<Split> splits, const std::filesystem::path& dir) {
    // Copies the manifest and replaces the files of `splits` with garbage.
    Manifest out = m;
    std::filesystem::create_directories(dir);
    for (auto& c : out.cases) {
        bool hit = false;
        for (auto s : splits) hit = hit || c.split == s;
        if (!hit) continue;
        c.volume_path = dir / (c.case_id + "_volume.nrrd");
        c.gt_mask_path = dir / (c.case_id + "_mask.nrrd");
        testing_support::spit(c.volume_path, "garbage");
        testing_support::spit(c.gt_mask_path, "garbage");
    }
    return out;
}

}  // namespace

TEST_F(StudyTest, DatasetHasRequestedSplits) {
    EXPECT_EQ(manifest().count(Split::train), 1u);
    EXPECT_EQ(manifest().count(Split::validation), 2u);
    EXPECT_EQ(manifest().count(Split::test_retro), 4u);
    const Manifest back = read_manifest(root() / "data" / "manifest.json");
    ASSERT_EQ(back.cases.size(), manifest().cases.size());
    std::set<std::string> ids;
    for (std::size_t i = 0; i < back.cases.size(); ++i) {
        EXPECT_EQ(back.cases[i].case_id, manifest().cases[i].case_id);
        EXPECT_EQ(back.cases[i].tumor_box, manifest().cases[i].tumor_box);
        EXPECT_TRUE(std::filesystem::exists(back.cases[i].volume_path));
        ids.insert(back.cases[i].case_id);
    }
    EXPECT_EQ(ids.size(), back.cases.size());
}

TEST_F(StudyTest, DatasetIsDeterministic) {
    const auto again = make_dataset(root() / "again", 1, 2, 4, 17);
    for (std::size_t i = 0; i < again.cases.size(); ++i) {
        EXPECT_EQ(slurp(again.cases[i].volume_path), slurp(manifest().cases[i].volume_path));
        EXPECT_EQ(slurp(again.cases[i].gt_mask_path), slurp(manifest().cases[i].gt_mask_path));
    }
}

TEST_F(StudyTest, TumorBoxContainsTheMask) {
    for (const auto& c : manifest().cases) {
        const Mask m = nrrd::read_mask(c.gt_mask_path);
        ASSERT_GT(count(m), 0u);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) {
                const Vec3 w = m.grid().voxel_to_world(m.grid().unravel(i));
                EXPECT_TRUE((w.array() >= c.tumor_box.min.array() - 1e-9).all() &&
                            (w.array() <= c.tumor_box.max.array() + 1e-9).all());
            }
    }
}

TEST_F(StudyTest, ManifestErrors) {
    testing_support::spit(root() / "bad.json", R"({"cases":[{"case_id":"a"}]})");
    EXPECT_THROW(read_manifest(root() / "bad.json"), ParseError);
    testing_support::spit(root() / "dup.json", R"({"cases":[
      {"case_id":"a","split":"train","volume":"v","gt_mask":"m","tumor_box":{"min":[0,0,0],"max":[1,1,1]}},
      {"case_id":"a","split":"train","volume":"v","gt_mask":"m","tumor_box":{"min":[0,0,0],"max":[1,1,1]}}]})");
    EXPECT_THROW(read_manifest(root() / "dup.json"), ParseError);
    EXPECT_THROW(read_manifest(root() / "missing.json"), IoError);
}

TEST_F(StudyTest, CalibrationReadsOnlyValidationCases) {
    std::set<std::string> allowed, seen;
    for (const auto& c : manifest().in_split({Split::validation})) {
        allowed.insert(c.volume_path.string());
        allowed.insert(c.gt_mask_path.string());
    }
    CalibrationOptions opt;
    opt.on_read = [&](const std::filesystem::path& p) { seen.insert(p.string()); };
    const auto cal = calibrate_threshold(manifest(), PredictorHandle::parse("threshold_model"), opt);
    EXPECT_EQ(seen, allowed);
    EXPECT_EQ(cal.n_cases, 2u);
    EXPECT_GT(cal.f1, 0.9);
    EXPECT_GT(cal.threshold, 0.0);
    EXPECT_LT(cal.threshold, 1.0);

    // Test and training files are never needed.
    const Manifest corrupted = copy_with_corrupted(manifest(), {Split::train, Split::test_retro}, root() / "corrupt-cal");
    const auto cal2 = calibrate_threshold(corrupted, PredictorHandle::parse("threshold_model"));
    EXPECT_EQ(cal2.threshold, cal.threshold);

    write_calibration(root() / "cal", cal);
    EXPECT_DOUBLE_EQ(parse_threshold((root() / "cal" / "threshold.json").string()), cal.threshold);
    EXPECT_TRUE(std::filesystem::exists(root() / "cal" / "curve.csv"));
}

TEST_F(StudyTest, EvaluationReadsOnlyTestCases) {
    std::set<std::string> allowed, seen;
    std::mutex mu;
    for (const auto& c : manifest().in_split({Split::test_retro, Split::test_pro})) {
        allowed.insert(c.volume_path.string());
        allowed.insert(c.gt_mask_path.string());
    }
    EvaluateOptions opt;
    opt.workers = 2;
    opt.on_read = [&](const std::filesystem::path& p) {
        std::lock_guard lock(mu);
        seen.insert(p.string());
    };
    const Manifest corrupted = copy_with_corrupted(manifest(), {Split::train, Split::validation}, root() / "corrupt-ev");
    const auto r = evaluate(corrupted, {PredictorHandle::parse("region_growing")}, 0.5, opt);
    EXPECT_EQ(seen, allowed);
    EXPECT_EQ(r.failures, 0u);
    EXPECT_EQ(r.cases.size(), 4u);
}

TEST_F(StudyTest, OracleAndNullMethods) {
    const auto r = evaluate_methods(manifest(), {oracle_method(), null_method()}, 0.5);
    ASSERT_EQ(r.cases.size(), 8u);
    for (const auto& c : r.cases) {
        EXPECT_FALSE(c.failed) << c.error;
        if (c.method == "oracle") {
            EXPECT_DOUBLE_EQ(c.metrics.dice, 1.0);
            EXPECT_DOUBLE_EQ(c.metrics.rvd, 0.0);
            EXPECT_DOUBLE_EQ(*c.metrics.hd95_mm, 0.0);
            EXPECT_TRUE(c.metrics.detected);
        } else {
            EXPECT_DOUBLE_EQ(c.metrics.dice, 0.0);
            EXPECT_DOUBLE_EQ(c.metrics.rvd, 1.0);
            EXPECT_FALSE(c.metrics.detected);
        }
    }
    EXPECT_EQ(r.detection.at("oracle"), std::make_pair(std::size_t(4), std::size_t(4)));
    EXPECT_EQ(r.detection.at("null"), std::make_pair(std::size_t(0), std::size_t(4)));
    EXPECT_EQ(r.n_comparisons, 1);
    // Dice 1 vs 0 on four cases: exact two-sided p = 2/16.
    for (const auto& s : r.significance)
        if (s.metric == "dice") EXPECT_NEAR(*s.p_value, 0.125, 1e-12);
}

TEST_F(StudyTest, FailuresBecomeMisses) {
    Method boom;
    boom.name = "boom";
    boom.predict = [](const Volume&, const BoundingBox&, const CaseEntry&) -> ProbabilityMap {
        throw PredictorFailed("no");
    };
    const auto r = evaluate_methods(manifest(), {boom}, 0.5);
    EXPECT_EQ(r.failures, 4u);
    for (const auto& c : r.cases) {
        EXPECT_TRUE(c.failed);
        EXPECT_EQ(c.error, "no");
        EXPECT_DOUBLE_EQ(c.metrics.dice, 0.0);
        EXPECT_DOUBLE_EQ(c.metrics.rvd, 1.0);
    }
}

TEST_F(StudyTest, ReportFilesAreDeterministic) {
    const std::vector<PredictorHandle> preds{PredictorHandle::parse("region_growing"),
                                             PredictorHandle::parse("threshold_model")};
    EvaluateOptions serial, parallel;
    parallel.workers = 3;
    write_report(root() / "r1", evaluate(manifest(), preds, 0.45, serial));
    write_report(root() / "r2", evaluate(manifest(), preds, 0.45, parallel));
    for (const char* f : kDeterministicFiles) EXPECT_EQ(slurp(root() / "r1" / f), slurp(root() / "r2" / f)) << f;

    // Rebuilding from cases.json reproduces the same files.
    const auto j = nlohmann::json::parse(slurp(root() / "r1" / "cases.json"));
    write_report(root() / "r3", report_from_cases_json(j));
    for (const char* f : kDeterministicFiles) EXPECT_EQ(slurp(root() / "r1" / f), slurp(root() / "r3" / f)) << f;

    const auto text = slurp(root() / "r1" / "report.txt");
    EXPECT_NE(text.find("region_growing"), std::string::npos);
    EXPECT_EQ(text.find("elapsed"), std::string::npos);
}

TEST_F(StudyTest, DuplicateMethodNamesRejected) {
    EXPECT_THROW(evaluate(manifest(), {PredictorHandle::parse("region_growing"), PredictorHandle::parse("region_growing")}, 0.5),
                 InvalidArgument);
}

TEST(Threshold, ParsesNumbersAndRejectsJunk) {
    EXPECT_DOUBLE_EQ(parse_threshold("0.25"), 0.25);
    EXPECT_THROW(parse_threshold("1.5"), InvalidArgument);
    EXPECT_THROW(parse_threshold("/no/such/file.json"), IoError);
}

TEST_F(StudyTest, CliEndToEndAndExitCodes) {
    const std::string cli = shell_quote(SEGBENCH_CLI);
    const std::string m = shell_quote((root() / "data" / "manifest.json").string());
    const auto out = root() / "cli";
    auto run = [&](const std::string& args) {
        return run_shell(cli + " " + args, 120.0, out / "log.txt").exit_code;
    };
    std::filesystem::create_directories(out);
    ASSERT_EQ(run("calibrate --manifest " + m + " --predictor threshold_model --out-dir " + shell_quote((out / "cal").string())), 0);
    ASSERT_EQ(run("evaluate --manifest " + m + " --predictor region_growing --predictor threshold_model --threshold " +
                  shell_quote((out / "cal" / "threshold.json").string()) + " --out-dir " + shell_quote((out / "ev").string())),
              0);
    for (const char* f : kDeterministicFiles) EXPECT_TRUE(std::filesystem::exists(out / "ev" / f)) << f;

    // A probabilistic predictor without a threshold is a usage error.
    EXPECT_EQ(run("evaluate --manifest " + m + " --predictor threshold_model --out-dir " + shell_quote((out / "x").string())), 1);

    // Case failures give exit code 2 but still write the report.
    const std::string failing =
        shell_quote("null@external:" + shell_quote(SEGBENCH_STUB_PREDICTOR) + " fail {input} {output}");
    EXPECT_EQ(run("evaluate --manifest " + m + " --predictor region_growing --predictor " + failing +
                  " --threshold 0.5 --out-dir " + shell_quote((out / "fail").string())),
              2);
    EXPECT_TRUE(std::filesystem::exists(out / "fail" / "report.txt"));

    EXPECT_EQ(run("report --cases " + shell_quote((out / "ev" / "cases.json").string()) + " --out-dir " +
                  shell_quote((out / "rebuilt").string())),
              0);
    for (const char* f : kDeterministicFiles) EXPECT_EQ(slurp(out / "ev" / f), slurp(out / "rebuilt" / f)) << f;
}
