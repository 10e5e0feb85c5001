// segbench command-line front end.

#include "segbench/http_service.hpp"
#include "segbench/phantom.hpp"
#include "segbench/study.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace segbench;
namespace fs = std::filesystem;

constexpr int kExitCaseFailures = 2;

std::vector<PredictorHandle> parse_predictors(const std::vector<std::string>& specs) {
    std::vector<PredictorHandle> out;
    for (const auto& s : specs) out.push_back(PredictorHandle::parse(s));
    return out;
}

int cmd_make_dataset(const fs::path& out, std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                     std::size_t n_test, std::size_t n_test_pro) {
    study::DatasetOptions opt;
    opt.n_test_pro = n_test_pro;
    const auto m = study::make_dataset(out, n_train, n_val, n_test, seed, opt);
    std::cout << "wrote " << m.cases.size() << " cases to " << (out / "manifest.json").string() << "\n";
    return 0;
}

int cmd_make_sweep(const fs::path& out, std::uint64_t seed, int n_frames) {
    PhantomSpec spec = study::sample_phantom(seed, 0, {});
    spec.volume_extent = Vec3(64, 64, 64);
    spec.lesion_center = Vec3(32, 32, 32);
    spec.spacing = 0.5;
    const Phantom p = make_phantom(spec);

    SweepSpec ss;
    ss.n_frames = n_frames;
    ss.rng_seed = seed;
    ss.frame_size = Eigen::Vector2d(64, 64);
    ss.path.start_center = Vec3(32, 32, 0.25);
    ss.path.step = Vec3(0, 0, 63.5 / std::max(1, n_frames - 1));
    const Sweep sweep = simulate_sweep(p.volume, ss);

    fs::create_directories(out);
    write_sweep(out / "sweep", sweep);
    nrrd::write(out / "volume.nrrd", p.volume);
    nrrd::write(out / "mask.nrrd", p.truth);
    std::ofstream(out / "phantom.json", std::ios::trunc) << nlohmann::json(spec).dump(2) << "\n";
    std::ofstream(out / "tumor_box.json", std::ios::trunc) << study::box_json(spec.lesion_box()).dump(2) << "\n";
    std::cout << "wrote sweep (" << sweep.frames.size() << " frames) and phantom to " << out.string() << "\n";
    return 0;
}

int cmd_calibrate(const fs::path& manifest, const std::string& predictor, const fs::path& out) {
    const auto m = study::read_manifest(manifest);
    const auto cal = study::calibrate_threshold(m, PredictorHandle::parse(predictor));
    study::write_calibration(out, cal);
    std::cout << "threshold " << cal.threshold << " (F1 " << cal.f1 << ", ROC AUC " << cal.auc_roc << ", PR AUC "
              << cal.auc_pr << ") from " << cal.n_cases << " validation cases\n";
    return 0;
}

int cmd_evaluate(const fs::path& manifest, const std::vector<std::string>& specs, const std::string& threshold,
                 unsigned workers, bool serial, const fs::path& out) {
    const auto m = study::read_manifest(manifest);
    const auto predictors = parse_predictors(specs);
    double tau = 0.5;
    if (!threshold.empty()) {
        tau = study::parse_threshold(threshold);
    } else {
        for (const auto& p : predictors)
            if (p.produces_probabilities() && !p.fixed_threshold())
                throw InvalidArgument("predictor '" + p.name() + "' needs --threshold (run calibrate first)");
    }
    study::EvaluateOptions opt;
    opt.workers = serial ? 1 : std::max(1u, workers);
    const auto report = study::evaluate(m, predictors, tau, opt);
    study::write_report(out, report);
    std::cout << study::report_text(report);
    return report.failures ? kExitCaseFailures : 0;
}

int cmd_report(const fs::path& cases, const fs::path& out) {
    std::ifstream is(cases);
    if (!is) throw IoError("cannot read " + cases.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(cases.string() + ": " + e.what());
    }
    const auto report = study::report_from_cases_json(j);
    study::write_report(out, report);
    std::cout << study::report_text(report);
    return report.failures ? kExitCaseFailures : 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& bind, int port) {
    nav::SessionStore store;
    httplib::Server server;
    nav::register_routes(server, store);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    if (port == 0) {
        port = server.bind_to_any_port(bind);
        if (port < 0) throw IoError("cannot bind to " + bind);
    } else if (!server.bind_to_port(bind, port)) {
        throw IoError("cannot bind to " + bind + ":" + std::to_string(port));
    }
    std::cout << "listening on http://" << bind << ":" << port << std::endl;
    server.listen_after_bind();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segbench: ultrasound tumor segmentation workbench"};
    app.require_subcommand(1);

    fs::path out_dir = "out";
    fs::path manifest;
    std::uint64_t seed = 1;
    std::vector<std::string> predictors;
    std::string threshold;
    unsigned workers = 1;
    bool serial = false;

    auto* mk = app.add_subcommand("make-dataset", "Generate phantom cases and a split manifest");
    std::size_t n_train = 50, n_val = 10, n_test = 20, n_test_pro = 0;
    mk->add_option("--out-dir", out_dir, "Output directory")->required();
    mk->add_option("--seed", seed, "Dataset seed");
    mk->add_option("--n-train", n_train, "Training cases")->capture_default_str();
    mk->add_option("--n-val", n_val, "Validation cases")->capture_default_str();
    mk->add_option("--n-test", n_test, "Retrospective test cases")->capture_default_str();
    mk->add_option("--n-test-pro", n_test_pro, "Prospective test cases")->capture_default_str();

    auto* sw = app.add_subcommand("make-sweep", "Simulate a tracked sweep over a phantom (for the service)");
    int n_frames = 95;
    sw->add_option("--out-dir", out_dir, "Output directory")->required();
    sw->add_option("--seed", seed, "Phantom and sweep seed");
    sw->add_option("--n-frames", n_frames, "Number of frames")->check(CLI::Range(2, 100000))->capture_default_str();

    auto* cal = app.add_subcommand("calibrate", "Select the max-F1 threshold on validation cases");
    cal->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
    cal->add_option("--predictor", predictors, "Predictor spec")->required()->expected(1);
    cal->add_option("--out-dir", out_dir, "Output directory for threshold.json and curve.csv")->required();

    auto* ev = app.add_subcommand("evaluate", "Evaluate predictors on the test cases");
    ev->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--predictor", predictors, "Predictor spec (repeatable)")->required();
    ev->add_option("--threshold", threshold, "Decision threshold: number or threshold.json");
    ev->add_option("--workers", workers, "Concurrent cases")->capture_default_str();
    ev->add_flag("--serial", serial, "Evaluate one case at a time");
    ev->add_option("--out-dir", out_dir, "Report directory")->required();

    auto* rp = app.add_subcommand("report", "Rebuild report files from cases.json");
    fs::path cases;
    rp->add_option("--cases", cases, "cases.json from a previous evaluate")->required()->check(CLI::ExistingFile);
    rp->add_option("--out-dir", out_dir, "Report directory")->required();

    auto* sv = app.add_subcommand("serve", "Run the navigation HTTP service");
    std::string bind = "127.0.0.1";
    int port = 8080;
    sv->add_option("--bind", bind, "Bind address")->capture_default_str();
    sv->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*mk) return cmd_make_dataset(out_dir, seed, n_train, n_val, n_test, n_test_pro);
        if (*sw) return cmd_make_sweep(out_dir, seed, n_frames);
        if (*cal) return cmd_calibrate(manifest, predictors.front(), out_dir);
        if (*ev) return cmd_evaluate(manifest, predictors, threshold, workers, serial, out_dir);
        if (*rp) return cmd_report(cases, out_dir);
        if (*sv) return cmd_serve(bind, port);
    } catch (const std::exception& e) {
        std::cerr << "segbench: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
